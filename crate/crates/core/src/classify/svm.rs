//! Soft-margin linear SVM trained in the dual by sequential minimal
//! optimization with second-order working-set selection.
//!
//! Dual: min ½αᵀQα − Σα, 0 ≤ α ≤ C, yᵀα = 0, Q_ij = y_i y_j x_i·x_j.
//! The gradient G = Qα − 1 is kept up to date; the primal weights are
//! w = Σ α_i y_i x_i and the bias comes from the free support vectors.

use crate::classify::{dot, Matrix};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SvmOptions {
    pub c: f64,
    /// Stop when the maximal KKT violation falls to this value.
    pub kkt_tolerance: f64,
    /// Stop when the dual objective changes by less than this relative amount over an epoch.
    pub objective_tolerance: f64,
    /// An epoch is `n` pair updates.
    pub max_epochs: usize,
}

impl Default for SvmOptions {
    fn default() -> Self {
        Self { c: 1.0, kkt_tolerance: 1e-3, objective_tolerance: 1e-6, max_epochs: 100_000 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvmSolution {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub alpha: Vec<f64>,
    /// Dual objective at the start and after every completed epoch.
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
    pub kkt_violation: f64,
}

const TAU: f64 = 1e-12;

fn dual_objective(alpha: &[f64], grad: &[f64]) -> f64 {
    // ½αᵀQα − eᵀα = ½ Σ α_i (G_i − 1)
    alpha.iter().zip(grad).map(|(a, g)| a * (g - 1.0)).sum::<f64>() / 2.0
}

/// Trains on standardized rows `x` with labels `y` in {−1, +1}.
pub fn svm_train(x: &Matrix, y: &[f64], opts: &SvmOptions) -> Result<SvmSolution> {
    let n = x.rows;
    if y.len() != n {
        return Err(Error::LengthMismatch(n, y.len()));
    }
    if !(opts.c > 0.0) || !opts.c.is_finite() {
        return Err(Error::InvalidParams(format!("C must be positive, got {}", opts.c)));
    }
    if y.iter().any(|&v| v != 1.0 && v != -1.0) {
        return Err(Error::InvalidParams("labels must be +1 or -1".into()));
    }
    if !(y.contains(&1.0) && y.contains(&-1.0)) {
        return Err(Error::SingleClass);
    }
    let c = opts.c;
    let d = x.cols;
    let diag: Vec<f64> = (0..n).map(|t| dot(x.row(t), x.row(t))).collect();
    let mut alpha = vec![0.0; n];
    let mut grad = vec![-1.0; n];
    let mut k_col = vec![0.0; n];
    let mut v = vec![0.0; d];
    let mut trace = vec![0.0];
    let mut iterations = 0usize;
    let mut kkt_violation;

    let in_up = |a: f64, yt: f64| (yt > 0.0 && a < c) || (yt < 0.0 && a > 0.0);
    let in_low = |a: f64, yt: f64| (yt > 0.0 && a > 0.0) || (yt < 0.0 && a < c);

    loop {
        let mut gmax = f64::NEG_INFINITY;
        let mut gmin = f64::INFINITY;
        let mut i_sel = usize::MAX;
        for t in 0..n {
            let score = -y[t] * grad[t];
            if in_up(alpha[t], y[t]) && score > gmax {
                gmax = score;
                i_sel = t;
            }
            if in_low(alpha[t], y[t]) && score < gmin {
                gmin = score;
            }
        }
        kkt_violation = gmax - gmin;
        if i_sel == usize::MAX || kkt_violation <= opts.kkt_tolerance {
            break;
        }
        let i = i_sel;
        let xi = x.row(i);
        for t in 0..n {
            k_col[t] = dot(xi, x.row(t));
        }
        let mut j_sel = usize::MAX;
        let mut best = f64::INFINITY;
        for t in 0..n {
            if !in_low(alpha[t], y[t]) {
                continue;
            }
            let b = gmax + y[t] * grad[t];
            if b > 0.0 {
                let mut a = diag[i] + diag[t] - 2.0 * k_col[t];
                if a <= 0.0 {
                    a = TAU;
                }
                let val = -(b * b) / a;
                if val < best {
                    best = val;
                    j_sel = t;
                }
            }
        }
        if j_sel == usize::MAX {
            break;
        }
        let j = j_sel;
        let (old_i, old_j) = (alpha[i], alpha[j]);
        let mut quad = diag[i] + diag[j] - 2.0 * k_col[j];
        if quad <= 0.0 {
            quad = TAU;
        }
        if y[i] != y[j] {
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > c {
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }
        let (di, dj) = ((alpha[i] - old_i) * y[i], (alpha[j] - old_j) * y[j]);
        let xj = x.row(j);
        for k in 0..d {
            v[k] = di * xi[k] + dj * xj[k];
        }
        for t in 0..n {
            grad[t] += y[t] * dot(x.row(t), &v);
        }
        iterations += 1;
        if iterations % n == 0 {
            let obj = dual_objective(&alpha, &grad);
            let prev = *trace.last().expect("trace starts non-empty");
            trace.push(obj);
            let scale = prev.abs().max(obj.abs());
            if scale > 0.0 && (prev - obj).abs() <= opts.objective_tolerance * scale {
                break;
            }
            if iterations / n >= opts.max_epochs {
                return Err(Error::NoConvergence(iterations / n));
            }
        }
    }

    let mut weights = vec![0.0; d];
    for t in 0..n {
        if alpha[t] != 0.0 {
            let s = alpha[t] * y[t];
            for (w, xv) in weights.iter_mut().zip(x.row(t)) {
                *w += s * xv;
            }
        }
    }
    for t in 0..n {
        grad[t] = y[t] * dot(&weights, x.row(t)) - 1.0;
    }
    if iterations % n != 0 || trace.len() == 1 {
        trace.push(dual_objective(&alpha, &grad));
    }

    let (mut free_sum, mut free_n) = (0.0, 0usize);
    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    for t in 0..n {
        let yg = y[t] * grad[t];
        if alpha[t] >= c {
            if y[t] < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if alpha[t] <= 0.0 {
            if y[t] > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            free_sum += yg;
            free_n += 1;
        }
    }
    let rho = if free_n > 0 { free_sum / free_n as f64 } else { (ub + lb) / 2.0 };
    Ok(SvmSolution { weights, bias: -rho, alpha, objective_trace: trace, iterations, kkt_violation })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn blobs(n: usize, sep: f64, seed: u64) -> (Matrix, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut data = Vec::new();
        let mut y = Vec::new();
        for i in 0..n {
            let label = if i % 2 == 0 { 1.0 } else { -1.0 };
            data.push(label * sep + rng.random_range(-1.0..1.0));
            data.push(rng.random_range(-1.0..1.0));
            data.push(rng.random_range(-1.0..1.0));
            y.push(label);
        }
        (Matrix::new(n, 3, data), y)
    }

    fn tight() -> SvmOptions {
        SvmOptions { c: 1.0, kkt_tolerance: 1e-10, objective_tolerance: 0.0, max_epochs: 100_000 }
    }

    #[test]
    fn two_point_hard_margin() {
        let x = Matrix::new(2, 2, vec![-1.0, 0.0, 1.0, 0.0]);
        let sol = svm_train(&x, &[-1.0, 1.0], &SvmOptions { c: 1e6, ..Default::default() }).unwrap();
        assert!((sol.weights[0] - 1.0).abs() < 1e-3);
        assert!(sol.weights[1].abs() < 1e-3);
        assert!(sol.bias.abs() < 1e-3);
    }

    #[test]
    fn separable_blobs_fit_perfectly() {
        let (x, y) = blobs(200, 3.0, 1);
        let sol = svm_train(&x, &y, &SvmOptions::default()).unwrap();
        for t in 0..x.rows {
            let dec = dot(&sol.weights, x.row(t)) + sol.bias;
            assert!(dec * y[t] > 0.0);
        }
    }

    #[test]
    fn objective_trace_non_increasing() {
        let (x, y) = blobs(300, 0.5, 2);
        let sol = svm_train(&x, &y, &SvmOptions { c: 10.0, ..Default::default() }).unwrap();
        assert!(sol.objective_trace.len() >= 2);
        for w in sol.objective_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "{:?}", w);
        }
    }

    #[test]
    fn label_flip_negates_model() {
        let (x, y) = blobs(120, 0.7, 3);
        let flipped: Vec<f64> = y.iter().map(|v| -v).collect();
        let a = svm_train(&x, &y, &tight()).unwrap();
        let b = svm_train(&x, &flipped, &tight()).unwrap();
        for (u, v) in a.weights.iter().zip(&b.weights) {
            assert!((u + v).abs() < 1e-6, "{u} {v}");
        }
        assert!((a.bias + b.bias).abs() < 1e-6);
    }

    #[test]
    fn kkt_conditions_hold() {
        let (x, y) = blobs(150, 0.6, 4);
        let c = 2.0;
        let sol = svm_train(&x, &y, &SvmOptions { c, kkt_tolerance: 1e-6, objective_tolerance: 0.0, max_epochs: 100_000 }).unwrap();
        let eq: f64 = sol.alpha.iter().zip(&y).map(|(a, v)| a * v).sum();
        assert!(eq.abs() < 1e-9);
        for t in 0..x.rows {
            let m = y[t] * (dot(&sol.weights, x.row(t)) + sol.bias);
            if sol.alpha[t] <= 0.0 {
                assert!(m >= 1.0 - 1e-5);
            } else if sol.alpha[t] >= c {
                assert!(m <= 1.0 + 1e-5);
            } else {
                assert!((m - 1.0).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let x = Matrix::new(2, 1, vec![0.0, 1.0]);
        assert!(matches!(svm_train(&x, &[1.0, 1.0], &SvmOptions::default()), Err(Error::SingleClass)));
        assert!(svm_train(&x, &[1.0, 0.0], &SvmOptions::default()).is_err());
        assert!(svm_train(&x, &[1.0, -1.0], &SvmOptions { c: 0.0, ..Default::default() }).is_err());
    }

    #[test]
    fn deterministic() {
        let (x, y) = blobs(100, 0.5, 5);
        let a = svm_train(&x, &y, &SvmOptions::default()).unwrap();
        let b = svm_train(&x, &y, &SvmOptions::default()).unwrap();
        assert_eq!(a, b);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn input_scaling_keeps_labels(seed in 0u64..500, scale in 0.2f64..5.0) {
            let (x, y) = blobs(60, 0.4, seed);
            let base = svm_train(&x, &y, &tight()).unwrap();
            let opts = SvmOptions { c: 1.0 / (scale * scale), ..tight() };
            let scaled = svm_train(&x.scaled(scale), &y, &opts).unwrap();
            for t in 0..x.rows {
                let d0 = dot(&base.weights, x.row(t)) + base.bias;
                let d1 = dot(&scaled.weights, &x.row(t).iter().map(|v| v * scale).collect::<Vec<_>>()) + scaled.bias;
                if d0.abs() > 1e-6 {
                    prop_assert_eq!(d0 > 0.0, d1 > 0.0);
                }
            }
        }
    }
}
