//! Seeded watershed over a distance map by descending flood with union–find.
//!
//! Pixels are visited from the highest distance value down. A pixel with no
//! visited 4-neighbor starts a new basin (a regional maximum). When a pixel
//! touches several basins, basins whose peaks lie closer than
//! `merge_distance` to the dominant peak (or whose dynamic, peak minus the
//! current level, is below `min_dynamic`) are merged into it; the pixel joins
//! the basin with the highest peak. Every resulting region is 4-connected.

struct Basin {
    parent: usize,
    peak: f64,
    peak_at: (f64, f64),
}

fn find(basins: &mut [Basin], mut i: usize) -> usize {
    while basins[i].parent != i {
        let gp = basins[basins[i].parent].parent;
        basins[i].parent = gp;
        i = gp;
    }
    i
}

/// Returns a label per pixel: 0 for background, 1.. for regions numbered in
/// raster order of their first pixel.
pub fn distance_watershed(
    width: usize,
    height: usize,
    foreground: &[bool],
    dist: &[f64],
    merge_distance: f64,
    min_dynamic: f64,
) -> Vec<u32> {
    let mut order: Vec<usize> = (0..width * height).filter(|&i| foreground[i]).collect();
    order.sort_by(|&a, &b| dist[b].total_cmp(&dist[a]).then(a.cmp(&b)));

    const NONE: usize = usize::MAX;
    let mut basin_of = vec![NONE; width * height];
    let mut basins: Vec<Basin> = Vec::new();
    let mut roots: Vec<usize> = Vec::with_capacity(4);

    for &i in &order {
        let (x, y) = (i % width, i / width);
        let level = dist[i];
        roots.clear();
        let visit = |j: usize, basins: &mut Vec<Basin>, roots: &mut Vec<usize>| {
            if basin_of[j] != NONE {
                let r = find(basins, basin_of[j]);
                if !roots.contains(&r) {
                    roots.push(r);
                }
            }
        };
        if x > 0 {
            visit(i - 1, &mut basins, &mut roots);
        }
        if x + 1 < width {
            visit(i + 1, &mut basins, &mut roots);
        }
        if y > 0 {
            visit(i - width, &mut basins, &mut roots);
        }
        if y + 1 < height {
            visit(i + width, &mut basins, &mut roots);
        }

        if roots.is_empty() {
            let id = basins.len();
            basins.push(Basin {
                parent: id,
                peak: level,
                peak_at: (x as f64, y as f64),
            });
            basin_of[i] = id;
            continue;
        }
        // Highest peak first; older basin wins ties.
        roots.sort_by(|&a, &b| basins[b].peak.total_cmp(&basins[a].peak).then(a.cmp(&b)));
        let dom = roots[0];
        for &r in &roots[1..] {
            let (dx, dy) = (
                basins[r].peak_at.0 - basins[dom].peak_at.0,
                basins[r].peak_at.1 - basins[dom].peak_at.1,
            );
            let close = dx.hypot(dy) < merge_distance;
            let shallow = basins[r].peak - level < min_dynamic;
            if close || shallow {
                basins[r].parent = dom;
            }
        }
        basin_of[i] = dom;
    }

    let mut label_of_root = vec![0u32; basins.len()];
    let mut next = 0u32;
    let mut labels = vec![0u32; width * height];
    for i in 0..width * height {
        if basin_of[i] == NONE {
            continue;
        }
        let r = find(&mut basins, basin_of[i]);
        if label_of_root[r] == 0 {
            next += 1;
            label_of_root[r] = next;
        }
        labels[i] = label_of_root[r];
    }
    labels
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::segment::distance::squared_edt;

    fn disks(w: usize, h: usize, centers: &[(f64, f64, f64)]) -> Vec<bool> {
        (0..w * h)
            .map(|i| {
                let (x, y) = ((i % w) as f64, (i / w) as f64);
                centers.iter().any(|&(cx, cy, r)| (x - cx).powi(2) + (y - cy).powi(2) <= r * r)
            })
            .collect()
    }

    fn run(w: usize, h: usize, fg: &[bool], merge: f64, dynamic: f64) -> Vec<u32> {
        let bg: Vec<bool> = fg.iter().map(|f| !f).collect();
        let d: Vec<f64> = squared_edt(w, h, &bg).into_iter().map(f64::sqrt).collect();
        distance_watershed(w, h, fg, &d, merge, dynamic)
    }

    #[test]
    fn splits_two_touching_disks() {
        let (w, h) = (60, 30);
        let fg = disks(w, h, &[(15.0, 15.0, 10.0), (33.0, 15.0, 10.0)]);
        let labels = run(w, h, &fg, 4.0, 0.0);
        assert_eq!(labels.iter().copied().max(), Some(2));
        assert_eq!(labels[15 * w + 15], 1);
        assert_eq!(labels[15 * w + 33], 2);
    }

    #[test]
    fn single_disk_is_one_region() {
        let (w, h) = (40, 40);
        let fg = disks(w, h, &[(20.0, 20.0, 12.0)]);
        let labels = run(w, h, &fg, 4.0, 0.0);
        assert_eq!(labels.iter().copied().max(), Some(1));
        assert_eq!(labels.iter().filter(|&&l| l == 1).count(), fg.iter().filter(|&&f| f).count());
    }

    #[test]
    fn deterministic() {
        let (w, h) = (60, 30);
        let fg = disks(w, h, &[(15.0, 15.0, 10.0), (33.0, 12.0, 8.0), (45.0, 20.0, 7.0)]);
        assert_eq!(run(w, h, &fg, 4.0, 0.0), run(w, h, &fg, 4.0, 0.0));
    }
}
