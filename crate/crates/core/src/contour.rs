//! Boundary tracing and planar geometry on pixel masks.
//!
//! Two boundary representations are used:
//! - the Moore-neighbor contour through boundary pixel centers (8-connected
//!   chain), used for perimeter estimation;
//! - the pixel-edge outline through pixel corners, used for polygon export and
//!   for the convex hull feeding the caliper diameters.

use std::collections::{HashMap, VecDeque};

use crate::plane::{Mask, Pixel};

pub type Point = (f64, f64);

/// Local dense bitmap over a mask's bounding box with a one-pixel margin.
struct Bitmap {
    x0: i64,
    y0: i64,
    w: i64,
    h: i64,
    bits: Vec<bool>,
}

impl Bitmap {
    fn of(mask: &Mask) -> Option<Self> {
        let (bx0, by0, bx1, by1) = mask.bbox()?;
        let x0 = i64::from(bx0) - 1;
        let y0 = i64::from(by0) - 1;
        let w = i64::from(bx1) - x0 + 2;
        let h = i64::from(by1) - y0 + 2;
        let mut bits = vec![false; (w * h) as usize];
        for p in mask.pixels() {
            bits[((i64::from(p.y) - y0) * w + (i64::from(p.x) - x0)) as usize] = true;
        }
        Some(Self { x0, y0, w, h, bits })
    }

    #[inline]
    fn at(&self, x: i64, y: i64) -> bool {
        let (lx, ly) = (x - self.x0, y - self.y0);
        lx >= 0 && ly >= 0 && lx < self.w && ly < self.h && self.bits[(ly * self.w + lx) as usize]
    }
}

/// Largest connected component (4- or 8-connectivity); ties go to the component
/// reached first in raster order.
pub fn largest_component(mask: &Mask, eight: bool) -> Mask {
    let Some(bm) = Bitmap::of(mask) else {
        return Mask::default();
    };
    let offsets: &[(i64, i64)] = if eight {
        &[(1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (1, -1), (-1, 1), (-1, -1)]
    } else {
        &[(1, 0), (-1, 0), (0, 1), (0, -1)]
    };
    let mut seen = vec![false; bm.bits.len()];
    let mut best: Vec<Pixel> = Vec::new();
    for p in mask.pixels() {
        let idx = |x: i64, y: i64| ((y - bm.y0) * bm.w + (x - bm.x0)) as usize;
        let (sx, sy) = (i64::from(p.x), i64::from(p.y));
        if seen[idx(sx, sy)] {
            continue;
        }
        seen[idx(sx, sy)] = true;
        let mut comp = Vec::new();
        let mut queue = VecDeque::from([(sx, sy)]);
        while let Some((x, y)) = queue.pop_front() {
            comp.push(Pixel::new(x as u32, y as u32));
            for (dx, dy) in offsets {
                let (nx, ny) = (x + dx, y + dy);
                if bm.at(nx, ny) && !seen[idx(nx, ny)] {
                    seen[idx(nx, ny)] = true;
                    queue.push_back((nx, ny));
                }
            }
        }
        if comp.len() > best.len() {
            best = comp;
        }
    }
    Mask::new(best)
}

pub fn is_connected(mask: &Mask, eight: bool) -> bool {
    largest_component(mask, eight).len() == mask.len()
}

// Clockwise ring with y pointing down: N, NE, E, SE, S, SW, W, NW.
const RING: [(i64, i64); 8] = [(0, -1), (1, -1), (1, 0), (1, 1), (0, 1), (-1, 1), (-1, 0), (-1, -1)];

fn ring_index(dx: i64, dy: i64) -> usize {
    RING.iter().position(|&d| d == (dx, dy)).expect("neighbor offset")
}

/// Moore-neighbor trace of the outer boundary of the component containing the
/// first raster pixel. Returns pixel-center coordinates in pixel units.
pub fn moore_contour(mask: &Mask) -> Vec<Point> {
    let Some(bm) = Bitmap::of(mask) else {
        return Vec::new();
    };
    let first = mask.pixels()[0];
    let start = (i64::from(first.x), i64::from(first.y));
    let center = |p: (i64, i64)| (p.0 as f64, p.1 as f64);

    // Scan clockwise around `c` starting just after the backtrack direction.
    let step = |c: (i64, i64), back: usize| -> Option<((i64, i64), usize)> {
        for k in 1..=8 {
            let d = (back + k) % 8;
            let n = (c.0 + RING[d].0, c.1 + RING[d].1);
            if bm.at(n.0, n.1) {
                let prev = (back + k - 1) % 8;
                let q = (c.0 + RING[prev].0, c.1 + RING[prev].1);
                return Some((n, ring_index(q.0 - n.0, q.1 - n.1)));
            }
        }
        None
    };

    // The west neighbor of the first raster pixel is background.
    let Some((second, back)) = step(start, 6) else {
        return vec![center(start)];
    };
    let mut out = vec![center(start)];
    let (mut cur, mut back) = (second, back);
    let limit = 4 * mask.len() + 8;
    for _ in 0..limit {
        let (next, nb) = step(cur, back).expect("a traced pixel has a neighbor");
        if cur == start && next == second {
            break;
        }
        out.push(center(cur));
        cur = next;
        back = nb;
    }
    out
}

/// Length of a closed polygon.
pub fn closed_length(points: &[Point]) -> f64 {
    if points.len() < 2 {
        return 0.0;
    }
    let n = points.len();
    (0..n)
        .map(|i| {
            let (a, b) = (points[i], points[(i + 1) % n]);
            (a.0 - b.0).hypot(a.1 - b.1)
        })
        .sum()
}

/// Signed shoelace area; positive for the orientation produced by [`outline`].
pub fn signed_area(points: &[Point]) -> f64 {
    let n = points.len();
    0.5 * (0..n)
        .map(|i| {
            let (a, b) = (points[i], points[(i + 1) % n]);
            a.0 * b.1 - b.0 * a.1
        })
        .sum::<f64>()
}

fn segment_distance(p: Point, a: Point, b: Point) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len = dx.hypot(dy);
    if len == 0.0 {
        return (p.0 - a.0).hypot(p.1 - a.1);
    }
    (dx * (p.1 - a.1) - dy * (p.0 - a.0)).abs() / len
}

fn rdp(points: &[Point], eps: f64, out: &mut Vec<Point>) {
    // Pushes every kept vertex except the final one.
    let (a, b) = (points[0], points[points.len() - 1]);
    let (mut idx, mut dmax) = (0, 0.0);
    for (i, p) in points.iter().enumerate().take(points.len() - 1).skip(1) {
        let d = segment_distance(*p, a, b);
        if d > dmax {
            idx = i;
            dmax = d;
        }
    }
    if dmax > eps {
        rdp(&points[..=idx], eps, out);
        rdp(&points[idx..], eps, out);
    } else {
        out.push(a);
    }
}

/// Douglas–Peucker simplification of a closed polygon. The ring is split at
/// its first vertex and the vertex farthest from it.
pub fn simplify_closed(points: &[Point], eps: f64) -> Vec<Point> {
    if points.len() < 4 {
        return points.to_vec();
    }
    let p0 = points[0];
    let far = (1..points.len())
        .max_by(|&i, &j| {
            let di = (points[i].0 - p0.0).hypot(points[i].1 - p0.1);
            let dj = (points[j].0 - p0.0).hypot(points[j].1 - p0.1);
            di.total_cmp(&dj).then(j.cmp(&i))
        })
        .expect("non-empty");
    let mut out = Vec::new();
    rdp(&points[..=far], eps, &mut out);
    let mut tail: Vec<Point> = points[far..].to_vec();
    tail.push(p0);
    rdp(&tail, eps, &mut out);
    out
}

/// Pixel-edge outline of the outer boundary, as integer corner coordinates
/// with collinear vertices removed. Each pixel (x, y) spans [x, x+1) × [y, y+1).
/// The ring has positive [`signed_area`]. Uses the largest 4-connected component.
pub fn outline(mask: &Mask) -> Vec<(i64, i64)> {
    let comp = largest_component(mask, false);
    let Some(bm) = Bitmap::of(&comp) else {
        return Vec::new();
    };
    // Directed boundary edges keyed by start corner; interior lies to the
    // right of travel in y-down coordinates.
    let mut edges: HashMap<(i64, i64), Vec<(i64, i64)>> = HashMap::new();
    for p in comp.pixels() {
        let (x, y) = (i64::from(p.x), i64::from(p.y));
        if !bm.at(x, y - 1) {
            edges.entry((x, y)).or_default().push((x + 1, y));
        }
        if !bm.at(x + 1, y) {
            edges.entry((x + 1, y)).or_default().push((x + 1, y + 1));
        }
        if !bm.at(x, y + 1) {
            edges.entry((x + 1, y + 1)).or_default().push((x, y + 1));
        }
        if !bm.at(x - 1, y) {
            edges.entry((x, y + 1)).or_default().push((x, y));
        }
    }
    // The top-left corner of the first raster pixel is always on the outer loop.
    let f = comp.pixels()[0];
    let start = (i64::from(f.x), i64::from(f.y));
    let mut ring = vec![start];
    let mut cur = start;
    let mut dir = (1i64, 0i64);
    loop {
        let outs = edges.get_mut(&cur).expect("outline is closed");
        let pick = if outs.len() == 1 {
            0
        } else {
            // Pinch corner: prefer the right turn so diagonal neighbors stay separate.
            let right = (-dir.1, dir.0);
            outs.iter()
                .position(|&(nx, ny)| (nx - cur.0, ny - cur.1) == right)
                .unwrap_or(0)
        };
        let next = outs.swap_remove(pick);
        dir = (next.0 - cur.0, next.1 - cur.1);
        cur = next;
        if cur == start {
            break;
        }
        ring.push(cur);
    }
    // Drop collinear vertices.
    let n = ring.len();
    let keep: Vec<(i64, i64)> = (0..n)
        .filter(|&i| {
            let (a, b, c) = (ring[(i + n - 1) % n], ring[i], ring[(i + 1) % n]);
            (b.0 - a.0) * (c.1 - b.1) - (b.1 - a.1) * (c.0 - b.0) != 0
        })
        .map(|i| ring[i])
        .collect();
    keep
}

fn cross(o: Point, a: Point, b: Point) -> f64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

/// Andrew's monotone chain; returns hull vertices without repeats.
pub fn convex_hull(points: &[Point]) -> Vec<Point> {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut lower: Vec<Point> = Vec::new();
    for &p in &pts {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0.0 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<Point> = Vec::new();
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0.0 {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

/// Maximum and minimum Feret diameters of a convex polygon (counter-clockwise
/// in a y-up frame, as returned by [`convex_hull`]) by rotating calipers.
pub fn feret_diameters(hull: &[Point]) -> (f64, f64) {
    let n = hull.len();
    match n {
        0 => return (0.0, 0.0),
        1 => return (0.0, 0.0),
        2 => {
            let d = (hull[0].0 - hull[1].0).hypot(hull[0].1 - hull[1].1);
            return (d, 0.0);
        }
        _ => {}
    }
    let dist = |a: Point, b: Point| (a.0 - b.0).hypot(a.1 - b.1);
    let mut max_d: f64 = 0.0;
    let mut min_w = f64::INFINITY;
    let mut j = 1;
    for i in 0..n {
        let (a, b) = (hull[i], hull[(i + 1) % n]);
        let edge_len = dist(a, b);
        // Advance the antipodal pointer while the area (height) increases.
        while cross(a, b, hull[(j + 1) % n]).abs() > cross(a, b, hull[j]).abs() {
            j = (j + 1) % n;
        }
        min_w = min_w.min(cross(a, b, hull[j]).abs() / edge_len);
        max_d = max_d.max(dist(a, hull[j])).max(dist(b, hull[j]));
        // Neighbors of the antipodal vertex can also realize the diameter.
        max_d = max_d
            .max(dist(a, hull[(j + 1) % n]))
            .max(dist(b, hull[(j + 1) % n]));
    }
    (max_d, min_w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rect(x0: u32, y0: u32, w: u32, h: u32) -> Mask {
        (y0..y0 + h)
            .flat_map(|y| (x0..x0 + w).map(move |x| Pixel::new(x, y)))
            .collect()
    }

    fn disk(cx: i64, cy: i64, r: f64) -> Mask {
        let ri = r.ceil() as i64;
        let mut v = Vec::new();
        for y in cy - ri..=cy + ri {
            for x in cx - ri..=cx + ri {
                if (((x - cx) * (x - cx) + (y - cy) * (y - cy)) as f64) <= r * r {
                    v.push(Pixel::new(x as u32, y as u32));
                }
            }
        }
        Mask::new(v)
    }

    #[test]
    fn moore_contour_of_square() {
        let c = moore_contour(&rect(2, 2, 10, 10));
        assert_eq!(c.len(), 36);
        assert!((closed_length(&c) - 36.0).abs() < 1e-12);
    }

    #[test]
    fn moore_contour_of_single_pixel_and_line() {
        assert_eq!(moore_contour(&rect(3, 3, 1, 1)), vec![(3.0, 3.0)]);
        let c = moore_contour(&rect(0, 0, 4, 1));
        // Goes out and back along the row.
        assert!((closed_length(&c) - 6.0).abs() < 1e-12);
    }

    #[test]
    fn moore_contour_visits_every_boundary_pixel_of_disk() {
        let m = disk(30, 30, 12.0);
        let c = moore_contour(&m);
        let boundary = m
            .pixels()
            .iter()
            .filter(|p| {
                [(1i64, 0i64), (-1, 0), (0, 1), (0, -1)].iter().any(|(dx, dy)| {
                    !m.contains(Pixel::new((p.x as i64 + dx) as u32, (p.y as i64 + dy) as u32))
                })
            })
            .count();
        let uniq: std::collections::HashSet<_> = c.iter().map(|p| (p.0 as i64, p.1 as i64)).collect();
        assert_eq!(uniq.len(), boundary);
    }

    #[test]
    fn outline_of_square_is_ccw_and_exact() {
        let o = outline(&rect(2, 3, 10, 10));
        assert_eq!(o, vec![(2, 3), (12, 3), (12, 13), (2, 13)]);
        let pts: Vec<Point> = o.iter().map(|&(x, y)| (x as f64, y as f64)).collect();
        assert!((signed_area(&pts) - 100.0).abs() < 1e-12);
    }

    #[test]
    fn outline_area_equals_pixel_count_without_holes() {
        let m = disk(20, 20, 9.5);
        let pts: Vec<Point> = outline(&m).iter().map(|&(x, y)| (x as f64, y as f64)).collect();
        assert!((signed_area(&pts) - m.len() as f64).abs() < 1e-9);
    }

    #[test]
    fn outline_handles_diagonal_pinch() {
        // Two squares meeting at one corner plus a bridge making them 4-connected.
        let mut px = rect(0, 0, 3, 3).pixels().to_vec();
        px.extend_from_slice(rect(3, 3, 3, 3).pixels());
        px.push(Pixel::new(3, 2));
        let m = Mask::new(px);
        let pts: Vec<Point> = outline(&m).iter().map(|&(x, y)| (x as f64, y as f64)).collect();
        assert!((signed_area(&pts) - m.len() as f64).abs() < 1e-9);
    }

    #[test]
    fn largest_component_picks_bigger_blob() {
        let m = rect(0, 0, 2, 2).union(&rect(10, 10, 3, 3));
        assert_eq!(largest_component(&m, false).len(), 9);
        assert!(!is_connected(&m, true));
    }

    #[test]
    fn hull_and_calipers_of_square_corners() {
        let pts: Vec<Point> = outline(&rect(0, 0, 10, 10)).iter().map(|&(x, y)| (x as f64, y as f64)).collect();
        let hull = convex_hull(&pts);
        let (dmax, dmin) = feret_diameters(&hull);
        assert!((dmax - 200f64.sqrt()).abs() < 1e-12);
        assert!((dmin - 10.0).abs() < 1e-12);
    }

    #[test]
    fn simplification_keeps_square_corners() {
        let c = moore_contour(&rect(0, 0, 10, 10));
        let s = simplify_closed(&c, 0.75);
        assert_eq!(s.len(), 4);
        assert!((closed_length(&s) - 36.0).abs() < 1e-12);
    }

    fn brute_feret(points: &[Point]) -> (f64, f64) {
        let mut dmax: f64 = 0.0;
        for a in points {
            for b in points {
                dmax = dmax.max((a.0 - b.0).hypot(a.1 - b.1));
            }
        }
        // Minimum width is attained with one side flush to a hull edge.
        let hull = convex_hull(points);
        let n = hull.len();
        let mut wmin = f64::INFINITY;
        for i in 0..n {
            let (a, b) = (hull[i], hull[(i + 1) % n]);
            let len = (b.0 - a.0).hypot(b.1 - a.1);
            let w = points.iter().map(|&p| cross(a, b, p).abs() / len).fold(0.0, f64::max);
            wmin = wmin.min(w);
        }
        (dmax, wmin)
    }

    proptest! {
        #[test]
        fn rotating_calipers_match_brute_force(pts in proptest::collection::vec((-50i32..50, -50i32..50), 3..40)) {
            let pts: Vec<Point> = pts.into_iter().map(|(x, y)| (x as f64, y as f64)).collect();
            let hull = convex_hull(&pts);
            prop_assume!(hull.len() >= 3);
            let (d1, w1) = feret_diameters(&hull);
            let (d2, w2) = brute_feret(&pts);
            prop_assert!((d1 - d2).abs() < 1e-9, "diameter {} vs {}", d1, d2);
            prop_assert!((w1 - w2).abs() < 1e-9, "width {} vs {}", w1, w2);
        }
    }
}
