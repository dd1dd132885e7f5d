//! Separable Gaussian blur and flat-disk grey-level morphology.

use rayon::prelude::*;

use crate::plane::Plane;

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil().max(1.0) as i64;
    let k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Gaussian blur with a kernel truncated at 3σ; borders replicate the edge pixel.
pub fn gaussian_blur(plane: &Plane, sigma: f64) -> Plane {
    if sigma <= 0.0 {
        return plane.clone();
    }
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as i64;
    let (w, h) = (plane.width, plane.height);
    let clamp = |v: i64, n: usize| v.clamp(0, n as i64 - 1) as usize;

    let mut tmp = vec![0.0; w * h];
    tmp.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        let src = &plane.data[y * w..(y + 1) * w];
        for (x, out) in row.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (i, kv) in k.iter().enumerate() {
                acc += kv * src[clamp(x as i64 + i as i64 - r, w)];
            }
            *out = acc;
        }
    });
    let mut out = vec![0.0; w * h];
    out.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        for (i, kv) in k.iter().enumerate() {
            let sy = clamp(y as i64 + i as i64 - r, h);
            let src = &tmp[sy * w..(sy + 1) * w];
            for (o, s) in row.iter_mut().zip(src) {
                *o += kv * s;
            }
        }
    });
    Plane::from_vec(w, h, out)
}

#[derive(Clone, Copy)]
enum Extremum {
    Min,
    Max,
}

impl Extremum {
    #[inline]
    fn pick(self, a: f64, b: f64) -> f64 {
        match self {
            Extremum::Min => a.min(b),
            Extremum::Max => a.max(b),
        }
    }
}

/// Running extrema of one row for every half-width 0..=radius.
/// `out[w][x]` is the extremum over `[x - w, x + w]` clipped to the row.
fn row_extrema(row: &[f64], radius: usize, op: Extremum, out: &mut [Vec<f64>]) {
    let n = row.len();
    out[0].copy_from_slice(row);
    for w in 1..=radius {
        let (prev, cur) = out.split_at_mut(w);
        let prev = &prev[w - 1];
        let cur = &mut cur[0];
        for x in 0..n {
            let mut v = prev[x];
            if x >= w {
                v = op.pick(v, row[x - w]);
            }
            if x + w < n {
                v = op.pick(v, row[x + w]);
            }
            cur[x] = v;
        }
    }
}

/// Flat structuring element `{(dx, dy) : dx² + dy² ≤ r²}`; pixels outside the
/// plane are ignored.
fn disk_filter(plane: &Plane, radius: f64, op: Extremum) -> Plane {
    let r = radius.floor().max(0.0) as usize;
    let (w, h) = (plane.width, plane.height);
    let half_width: Vec<usize> = (0..=r)
        .map(|dy| ((radius * radius - (dy * dy) as f64).max(0.0)).sqrt().floor() as usize)
        .collect();
    let max_w = half_width[0].min(w.saturating_sub(1));
    let span = 2 * r + 1;
    // Ring buffer of per-row extrema for the rows within reach of the output row.
    let mut cache: Vec<Vec<Vec<f64>>> = (0..span)
        .map(|_| (0..=max_w).map(|_| vec![0.0; w]).collect())
        .collect();
    let mut cached_row: Vec<Option<usize>> = vec![None; span];
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        let lo = y.saturating_sub(r);
        let hi = (y + r).min(h - 1);
        for sy in lo..=hi {
            let slot = sy % span;
            if cached_row[slot] != Some(sy) {
                row_extrema(&plane.data[sy * w..(sy + 1) * w], max_w, op, &mut cache[slot]);
                cached_row[slot] = Some(sy);
            }
        }
        let dst = &mut out[y * w..(y + 1) * w];
        let init = match op {
            Extremum::Min => f64::INFINITY,
            Extremum::Max => f64::NEG_INFINITY,
        };
        dst.fill(init);
        for sy in lo..=hi {
            let dy = sy.abs_diff(y);
            let src = &cache[sy % span][half_width[dy].min(max_w)];
            for (d, s) in dst.iter_mut().zip(src) {
                *d = op.pick(*d, *s);
            }
        }
    }
    Plane::from_vec(w, h, out)
}

pub fn erode_disk(plane: &Plane, radius: f64) -> Plane {
    disk_filter(plane, radius, Extremum::Min)
}

pub fn dilate_disk(plane: &Plane, radius: f64) -> Plane {
    disk_filter(plane, radius, Extremum::Max)
}

/// Morphological opening (erosion then dilation) with a disk.
pub fn open_disk(plane: &Plane, radius: f64) -> Plane {
    dilate_disk(&erode_disk(plane, radius), radius)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute(plane: &Plane, radius: f64, min: bool) -> Plane {
        let (w, h) = (plane.width as i64, plane.height as i64);
        let r = radius.floor() as i64;
        let mut out = plane.clone();
        for y in 0..h {
            for x in 0..w {
                let mut v = if min { f64::INFINITY } else { f64::NEG_INFINITY };
                for dy in -r..=r {
                    for dx in -r..=r {
                        if ((dx * dx + dy * dy) as f64) > radius * radius {
                            continue;
                        }
                        let (sx, sy) = (x + dx, y + dy);
                        if sx < 0 || sy < 0 || sx >= w || sy >= h {
                            continue;
                        }
                        let s = plane.get(sx as usize, sy as usize);
                        v = if min { v.min(s) } else { v.max(s) };
                    }
                }
                out.set(x as usize, y as usize, v);
            }
        }
        out
    }

    fn noise(w: usize, h: usize) -> Plane {
        let mut s = 12345u64;
        Plane::from_vec(
            w,
            h,
            (0..w * h)
                .map(|_| {
                    s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                    (s >> 33) as f64 / (1u64 << 31) as f64
                })
                .collect(),
        )
    }

    #[test]
    fn disk_filters_match_brute_force() {
        let p = noise(23, 17);
        for radius in [0.0, 1.0, 2.5, 4.0, 7.0, 30.0] {
            assert_eq!(erode_disk(&p, radius), brute(&p, radius, true), "erode r={radius}");
            assert_eq!(dilate_disk(&p, radius), brute(&p, radius, false), "dilate r={radius}");
        }
    }

    #[test]
    fn blur_preserves_constant_and_mass() {
        let c = Plane::filled(20, 10, 0.37);
        let b = gaussian_blur(&c, 2.0);
        assert!(b.data.iter().all(|v| (v - 0.37).abs() < 1e-12));

        let mut d = Plane::zeros(64, 64);
        d.set(32, 32, 1.0);
        let b = gaussian_blur(&d, 3.0);
        let total: f64 = b.data.iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert!(b.get(32, 32) > b.get(34, 32));
        assert!((b.get(30, 32) - b.get(34, 32)).abs() < 1e-15);
    }

    #[test]
    fn opening_of_constant_is_constant() {
        let c = Plane::filled(40, 30, 0.2);
        assert_eq!(open_disk(&c, 8.0), c);
    }
}
