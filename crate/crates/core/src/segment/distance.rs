//! Exact Euclidean distance transform (Felzenszwalb–Huttenlocher lower envelope).

const FAR: f64 = 1e20;

fn transform_1d(f: &[f64], d: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    if n == 0 {
        return;
    }
    let mut k = 0usize;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in 1..n {
        let mut s;
        loop {
            let p = v[k];
            s = ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q as f64 - p as f64));
            // z[0] is -inf, so this never underflows k.
            if s <= z[k] {
                k -= 1;
            } else {
                break;
            }
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    k = 0;
    for (q, dq) in d.iter_mut().enumerate().take(n) {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let p = v[k];
        let diff = q as f64 - p as f64;
        *dq = diff * diff + f[p];
    }
}

/// Squared distance (in pixels²) from each pixel center to the nearest pixel
/// with `feature[i] == true`. Pixels beyond the raster are not features.
/// Returns `f64::INFINITY` everywhere when there are no features.
pub fn squared_edt(width: usize, height: usize, feature: &[bool]) -> Vec<f64> {
    assert_eq!(feature.len(), width * height);
    let mut grid: Vec<f64> = feature.iter().map(|&f| if f { 0.0 } else { FAR }).collect();
    let n = width.max(height);
    let mut f = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut v = vec![0usize; n];
    let mut z = vec![0.0; n + 1];
    for x in 0..width {
        for y in 0..height {
            f[y] = grid[y * width + x];
        }
        transform_1d(&f[..height], &mut d[..height], &mut v, &mut z);
        for y in 0..height {
            grid[y * width + x] = d[y];
        }
    }
    for y in 0..height {
        let row = &mut grid[y * width..(y + 1) * width];
        f[..width].copy_from_slice(row);
        transform_1d(&f[..width], &mut d[..width], &mut v, &mut z);
        row.copy_from_slice(&d[..width]);
    }
    for g in &mut grid {
        if *g >= FAR * 0.5 {
            *g = f64::INFINITY;
        } else {
            // Integer-valued by construction; remove accumulated rounding.
            *g = g.round();
        }
    }
    grid
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute(width: usize, height: usize, feature: &[bool]) -> Vec<f64> {
        (0..width * height)
            .map(|i| {
                let (x, y) = ((i % width) as i64, (i / width) as i64);
                feature
                    .iter()
                    .enumerate()
                    .filter(|(_, &f)| f)
                    .map(|(j, _)| {
                        let (fx, fy) = ((j % width) as i64, (j / width) as i64);
                        ((x - fx).pow(2) + (y - fy).pow(2)) as f64
                    })
                    .fold(f64::INFINITY, f64::min)
            })
            .collect()
    }

    #[test]
    fn no_features_is_infinite() {
        assert!(squared_edt(4, 3, &[false; 12]).iter().all(|v| v.is_infinite()));
    }

    proptest! {
        #[test]
        fn matches_brute_force(w in 1usize..20, h in 1usize..20, seed in any::<u64>()) {
            let mut s = seed | 1;
            let feature: Vec<bool> = (0..w * h)
                .map(|_| {
                    s ^= s << 13;
                    s ^= s >> 7;
                    s ^= s << 17;
                    s % 7 == 0
                })
                .collect();
            prop_assert_eq!(squared_edt(w, h, &feature), brute(w, h, &feature));
        }
    }
}
