//! Squared-loss LASSO by cyclic coordinate descent, with a cross-validated
//! regularization path.
//!
//! Objective: (1/2n)‖y − β₀ − Xβ‖² + λ‖β‖₁ with X centered internally. The
//! solver works in covariance form: the Gram matrix XᵀX/n is formed once per
//! design and the partial residual correlations are updated per coordinate.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::classify::{Matrix, ModelKind, LinearModel, Standardizer};
use crate::error::{Error, Result};
use crate::patch::name_triple;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LassoOptions {
    /// Convergence threshold on the largest coefficient change in a sweep.
    pub tolerance: f64,
    pub max_sweeps: usize,
    pub n_lambdas: usize,
    /// Smallest λ on the path as a fraction of λ_max.
    pub lambda_min_ratio: f64,
    pub n_folds: usize,
}

impl Default for LassoOptions {
    fn default() -> Self {
        Self { tolerance: 1e-7, max_sweeps: 100_000, n_lambdas: 100, lambda_min_ratio: 1e-3, n_folds: 5 }
    }
}

pub fn soft_threshold(z: f64, g: f64) -> f64 {
    if z > g {
        z - g
    } else if z < -g {
        z + g
    } else {
        0.0
    }
}

/// Centered design summary shared by every fit on the same rows.
pub struct Design {
    n: usize,
    p: usize,
    x_mean: Vec<f64>,
    y_mean: f64,
    /// XcᵀXc / n, row-major p×p.
    gram: Vec<f64>,
    /// Xcᵀ(y − ȳ) / n.
    xty: Vec<f64>,
    /// ‖y − ȳ‖² / n.
    y_var: f64,
}

impl Design {
    pub fn new(x: &Matrix, y: &[f64]) -> Result<Self> {
        if x.rows != y.len() {
            return Err(Error::LengthMismatch(x.rows, y.len()));
        }
        if x.rows == 0 {
            return Err(Error::EmptyInput);
        }
        let (n, p) = (x.rows, x.cols);
        let nf = n as f64;
        let mut x_mean = vec![0.0; p];
        for i in 0..n {
            for (m, v) in x_mean.iter_mut().zip(x.row(i)) {
                *m += v;
            }
        }
        x_mean.iter_mut().for_each(|m| *m /= nf);
        let y_mean = y.iter().sum::<f64>() / nf;
        let y_var = y.iter().map(|v| (v - y_mean).powi(2)).sum::<f64>() / nf;
        let mut gram = vec![0.0; p * p];
        let mut xty = vec![0.0; p];
        let mut row = vec![0.0; p];
        for i in 0..n {
            for (j, r) in row.iter_mut().enumerate() {
                *r = x.get(i, j) - x_mean[j];
            }
            let yc = y[i] - y_mean;
            for a in 0..p {
                let ra = row[a];
                if ra == 0.0 {
                    continue;
                }
                xty[a] += ra * yc;
                let g = &mut gram[a * p..a * p + p];
                for b in a..p {
                    g[b] += ra * row[b];
                }
            }
        }
        for a in 0..p {
            for b in a..p {
                let v = gram[a * p + b] / nf;
                gram[a * p + b] = v;
                gram[b * p + a] = v;
            }
            xty[a] /= nf;
        }
        Ok(Self { n, p, x_mean, y_mean, gram, xty, y_var })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Smallest λ with an all-zero solution.
    pub fn lambda_max(&self) -> f64 {
        self.xty.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Residual correlations x_jᵀr/n for coefficients `beta`.
    pub fn correlations(&self, beta: &[f64]) -> Vec<f64> {
        let p = self.p;
        (0..p)
            .map(|j| self.xty[j] - (0..p).map(|k| self.gram[j * p + k] * beta[k]).sum::<f64>())
            .collect()
    }

    /// Fraction of the centered response variance explained by `beta`.
    pub fn deviance_ratio(&self, beta: &[f64]) -> f64 {
        if self.y_var <= 0.0 {
            return 1.0;
        }
        let p = self.p;
        let mut quad = 0.0;
        let mut lin = 0.0;
        for j in 0..p {
            if beta[j] == 0.0 {
                continue;
            }
            lin += beta[j] * self.xty[j];
            for k in 0..p {
                quad += beta[j] * self.gram[j * p + k] * beta[k];
            }
        }
        let rss = self.y_var - 2.0 * lin + quad;
        1.0 - rss / self.y_var
    }

    pub fn intercept(&self, beta: &[f64]) -> f64 {
        self.y_mean - self.x_mean.iter().zip(beta).map(|(m, b)| m * b).sum::<f64>()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LassoSolution {
    pub lambda: f64,
    pub intercept: f64,
    pub beta: Vec<f64>,
    pub sweeps: usize,
}

impl LassoSolution {
    pub fn nonzero(&self) -> usize {
        self.beta.iter().filter(|b| **b != 0.0).count()
    }

    pub fn predict(&self, row: &[f64]) -> f64 {
        self.intercept + row.iter().zip(&self.beta).map(|(x, b)| x * b).sum::<f64>()
    }
}

/// Coordinate descent from `warm` (or zero). Sweeps alternate between the
/// active set and a full pass; convergence requires a full pass in which no
/// coefficient moves by `tolerance` or more.
pub fn lasso_solve(design: &Design, lambda: f64, warm: Option<&[f64]>, opts: &LassoOptions) -> Result<LassoSolution> {
    if !(lambda >= 0.0) {
        return Err(Error::InvalidParams(format!("lambda must be non-negative, got {lambda}")));
    }
    let p = design.p;
    let mut beta = warm.map_or_else(|| vec![0.0; p], <[f64]>::to_vec);
    if beta.len() != p {
        return Err(Error::DimensionMismatch { expected: p, got: beta.len() });
    }
    let mut grad = design.correlations(&beta);
    let mut sweeps = 0usize;

    let update = |j: usize, beta: &mut [f64], grad: &mut [f64]| -> f64 {
        let gjj = design.gram[j * p + j];
        if gjj <= 0.0 {
            return 0.0;
        }
        let new = soft_threshold(grad[j] + gjj * beta[j], lambda) / gjj;
        let delta = new - beta[j];
        if delta != 0.0 {
            beta[j] = new;
            let col = &design.gram[j * p..j * p + p];
            for (g, c) in grad.iter_mut().zip(col) {
                *g -= c * delta;
            }
        }
        delta.abs()
    };

    loop {
        let mut full_change = 0.0f64;
        for j in 0..p {
            full_change = full_change.max(update(j, &mut beta, &mut grad));
        }
        sweeps += 1;
        if full_change < opts.tolerance {
            break;
        }
        loop {
            let active: Vec<usize> = (0..p).filter(|&j| beta[j] != 0.0).collect();
            let mut change = 0.0f64;
            for &j in &active {
                change = change.max(update(j, &mut beta, &mut grad));
            }
            sweeps += 1;
            if change < opts.tolerance {
                break;
            }
            if sweeps >= opts.max_sweeps {
                return Err(Error::NoConvergence(sweeps));
            }
        }
        if sweeps >= opts.max_sweeps {
            return Err(Error::NoConvergence(sweeps));
        }
    }
    Ok(LassoSolution { lambda, intercept: design.intercept(&beta), beta, sweeps })
}

pub fn lasso_fit(x: &Matrix, y: &[f64], lambda: f64, opts: &LassoOptions) -> Result<LassoSolution> {
    lasso_solve(&Design::new(x, y)?, lambda, None, opts)
}

/// Geometric sequence from `lambda_max` down to `ratio`·`lambda_max`.
pub fn lambda_path(lambda_max: f64, n: usize, ratio: f64) -> Vec<f64> {
    if n == 1 {
        return vec![lambda_max];
    }
    (0..n).map(|k| lambda_max * ratio.powf(k as f64 / (n - 1) as f64)).collect()
}

/// Warm-started fits along `lambdas`.
pub fn lasso_path(design: &Design, lambdas: &[f64], opts: &LassoOptions) -> Result<Vec<LassoSolution>> {
    let mut out: Vec<LassoSolution> = Vec::with_capacity(lambdas.len());
    for &l in lambdas {
        let warm = out.last().map(|s| s.beta.clone());
        out.push(lasso_solve(design, l, warm.as_deref(), opts)?);
    }
    Ok(out)
}

/// Deviance ratio beyond which a path is considered saturated.
pub const SATURATION_RATIO: f64 = 0.999;

/// Like [`lasso_path`] but stops early, keeping the fits so far, once the fit
/// explains [`SATURATION_RATIO`] of the response variance or a solve fails to
/// converge. Fails only if the first λ cannot be fitted.
pub fn lasso_path_truncated(design: &Design, lambdas: &[f64], opts: &LassoOptions) -> Result<Vec<LassoSolution>> {
    let mut out: Vec<LassoSolution> = Vec::with_capacity(lambdas.len());
    for &l in lambdas {
        let warm = out.last().map(|s| s.beta.clone());
        match lasso_solve(design, l, warm.as_deref(), opts) {
            Ok(sol) => {
                let saturated = design.deviance_ratio(&sol.beta) >= SATURATION_RATIO;
                out.push(sol);
                if saturated {
                    break;
                }
            }
            Err(e) if out.is_empty() => return Err(e),
            Err(_) => break,
        }
    }
    Ok(out)
}

/// Largest KKT violation of a solution (0 when optimal).
pub fn kkt_violation(design: &Design, sol: &LassoSolution) -> f64 {
    let c = design.correlations(&sol.beta);
    c.iter()
        .zip(&sol.beta)
        .map(|(&cj, &bj)| {
            if bj == 0.0 {
                (cj.abs() - sol.lambda).max(0.0)
            } else {
                (cj - sol.lambda * bj.signum()).abs()
            }
        })
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LassoSelection {
    pub lambda: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub intercept: f64,
    pub beta: Vec<f64>,
    /// (λ, nonzero count) along the full-data path.
    pub path: Vec<(f64, usize)>,
    pub cv_mean: Vec<f64>,
    pub cv_se: Vec<f64>,
}

/// Cross-validated λ choice by the one-standard-error rule. `folds[i]` gives
/// the fold of row `i` in `0..n_folds`.
pub fn lasso_select(x: &Matrix, y: &[f64], folds: &[usize], opts: &LassoOptions) -> Result<LassoSelection> {
    if folds.len() != x.rows {
        return Err(Error::LengthMismatch(x.rows, folds.len()));
    }
    let k = folds.iter().copied().max().map_or(0, |m| m + 1);
    if k < 2 {
        return Err(Error::InvalidParams("need at least two folds".into()));
    }
    let full = Design::new(x, y)?;
    let lmax = full.lambda_max();
    let mut lambdas = lambda_path(lmax, opts.n_lambdas, opts.lambda_min_ratio);
    let full_path = lasso_path_truncated(&full, &lambdas, opts)?;
    lambdas.truncate(full_path.len());
    let mut errors = vec![vec![0.0; k]; lambdas.len()];
    for f in 0..k {
        let train: Vec<usize> = (0..x.rows).filter(|&i| folds[i] != f).collect();
        let test: Vec<usize> = (0..x.rows).filter(|&i| folds[i] == f).collect();
        if train.is_empty() || test.is_empty() {
            return Err(Error::InvalidParams(format!("fold {f} is empty or covers all rows")));
        }
        let yt: Vec<f64> = train.iter().map(|&i| y[i]).collect();
        let design = Design::new(&x.select_rows(&train), &yt)?;
        let path = lasso_path_truncated(&design, &lambdas, opts)?;
        // Folds that saturate early bound the usable part of the path.
        lambdas.truncate(path.len());
        errors.truncate(path.len());
        for (li, sol) in path.iter().enumerate() {
            let mse = test.iter().map(|&i| (y[i] - sol.predict(x.row(i))).powi(2)).sum::<f64>() / test.len() as f64;
            errors[li][f] = mse;
        }
    }
    let kf = k as f64;
    let cv_mean: Vec<f64> = errors.iter().map(|e| e.iter().sum::<f64>() / kf).collect();
    let cv_se: Vec<f64> = errors
        .iter()
        .zip(&cv_mean)
        .map(|(e, m)| (e.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (kf - 1.0)).sqrt() / kf.sqrt())
        .collect();
    let best = (0..lambdas.len()).min_by(|&a, &b| cv_mean[a].total_cmp(&cv_mean[b])).unwrap_or(0);
    let bound = cv_mean[best] + cv_se[best];
    // Lambdas decrease along the path, so the first index within bound is the largest λ.
    let chosen = (0..lambdas.len()).find(|&i| cv_mean[i] <= bound).unwrap_or(best);
    let path = &full_path[..lambdas.len()];
    let sol = &path[chosen];
    Ok(LassoSelection {
        lambda: lambdas[chosen],
        lambda_min: lambdas[best],
        lambda_max: lmax,
        intercept: sol.intercept,
        beta: sol.beta.clone(),
        path: path.iter().map(|s| (s.lambda, s.nonzero())).collect(),
        cv_mean,
        cv_se,
    })
}

impl LassoSelection {
    pub fn to_model(&self, names: Vec<String>, standardizer: &Standardizer, labels: (&str, &str), seed: u64) -> LinearModel {
        let mut m = LinearModel::from_parts(ModelKind::Lasso, names, standardizer, self.beta.clone(), self.intercept, labels, seed);
        m.hyperparams.insert("lambda".into(), self.lambda);
        m
    }
}

/// Nonzero coefficients in the selection-table layout, sorted by descending
/// |coefficient|.
pub fn write_selection_table(path: &Path, names: &[String], beta: &[f64]) -> Result<()> {
    let mut rows: Vec<(usize, f64)> = beta.iter().copied().enumerate().filter(|(_, b)| *b != 0.0).collect();
    rows.sort_by(|a, b| b.1.abs().total_cmp(&a.1.abs()).then(a.0.cmp(&b.0)));
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_path(path)?;
    w.write_record(["No.", "Content", "Cellular Feature Name", "Statistics", "Importance"])?;
    for (k, (j, b)) in rows.into_iter().enumerate() {
        let (content, feat, stat) = name_triple(&names[j]);
        w.write_record([(k + 1).to_string(), content, feat, stat, format!("{b:.6}")])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    /// Columns of a Sylvester-Hadamard matrix without the constant column:
    /// centered ±1 columns with XᵀX/n = I.
    fn hadamard_design(n: usize, p: usize) -> Matrix {
        let mut data = vec![0.0; n * p];
        for i in 0..n {
            for j in 0..p {
                let bits = (i & (j + 1)).count_ones();
                data[i * p + j] = if bits % 2 == 0 { 1.0 } else { -1.0 };
            }
        }
        Matrix::new(n, p, data)
    }

    fn random_problem(n: usize, p: usize, seed: u64) -> (Matrix, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f64> = (0..n * p).map(|_| rng.sample(StandardNormal)).collect();
        let x = Matrix::new(n, p, data);
        let y: Vec<f64> = (0..n)
            .map(|i| if x.get(i, 0) + 0.5 * x.get(i, 1) + 0.3 * rng.sample::<f64, _>(StandardNormal) > 0.0 { 1.0 } else { -1.0 })
            .collect();
        (x, y)
    }

    #[test]
    fn zero_at_lambda_max() {
        let (x, y) = random_problem(80, 10, 1);
        let d = Design::new(&x, &y).unwrap();
        let sol = lasso_solve(&d, d.lambda_max(), None, &LassoOptions::default()).unwrap();
        assert!(sol.beta.iter().all(|b| *b == 0.0));
        let sol = lasso_solve(&d, d.lambda_max() * 1.5, None, &LassoOptions::default()).unwrap();
        assert_eq!(sol.nonzero(), 0);
        assert!((sol.intercept - y.iter().sum::<f64>() / 80.0).abs() < 1e-15);
    }

    #[test]
    fn orthonormal_design_soft_threshold() {
        let x = hadamard_design(64, 12);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let y: Vec<f64> = (0..64).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect();
        let n = 64.0;
        for lambda in [0.0, 0.01, 0.05, 0.1, 0.3] {
            let sol = lasso_fit(&x, &y, lambda, &LassoOptions::default()).unwrap();
            for j in 0..12 {
                let ols: f64 = (0..64).map(|i| x.get(i, j) * y[i]).sum::<f64>() / n;
                let expected = soft_threshold(ols, lambda);
                assert!((sol.beta[j] - expected).abs() < 1e-6, "λ={lambda} j={j}: {} vs {expected}", sol.beta[j]);
            }
        }
    }

    #[test]
    fn kkt_along_path() {
        let (x, y) = random_problem(60, 25, 5);
        let d = Design::new(&x, &y).unwrap();
        let lambdas = lambda_path(d.lambda_max(), 100, 1e-3);
        assert!((lambdas[99] - 1e-3 * d.lambda_max()).abs() < 1e-15);
        let path = lasso_path(&d, &lambdas, &LassoOptions::default()).unwrap();
        assert_eq!(path[0].nonzero(), 0);
        for sol in &path {
            assert!(kkt_violation(&d, sol) <= 1e-6, "λ={} viol={}", sol.lambda, kkt_violation(&d, sol));
        }
    }

    #[test]
    fn deviance_ratio_matches_residuals() {
        let (x, y) = random_problem(50, 8, 9);
        let d = Design::new(&x, &y).unwrap();
        let sol = lasso_solve(&d, 0.05, None, &LassoOptions::default()).unwrap();
        let ym = y.iter().sum::<f64>() / 50.0;
        let tss: f64 = y.iter().map(|v| (v - ym).powi(2)).sum();
        let rss: f64 = (0..50).map(|i| (y[i] - sol.predict(x.row(i))).powi(2)).sum();
        assert!((d.deviance_ratio(&sol.beta) - (1.0 - rss / tss)).abs() < 1e-10);
    }

    #[test]
    fn wide_design_path_stops_when_saturated() {
        let (x, y) = random_problem(30, 120, 21);
        let d = Design::new(&x, &y).unwrap();
        let lambdas = lambda_path(d.lambda_max(), 100, 1e-3);
        let path = lasso_path_truncated(&d, &lambdas, &LassoOptions::default()).unwrap();
        assert!(path.len() < lambdas.len());
        assert!(d.deviance_ratio(&path.last().unwrap().beta) >= SATURATION_RATIO);
        for (sol, l) in path.iter().zip(&lambdas) {
            assert_eq!(sol.lambda, *l);
            assert!(kkt_violation(&d, sol) <= 1e-6);
        }
    }

    #[test]
    fn planted_support_selected() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let (n, p) = (240, 40);
        let data: Vec<f64> = (0..n * p).map(|_| rng.sample(StandardNormal)).collect();
        let x = Matrix::new(n, p, data);
        let y: Vec<f64> = (0..n)
            .map(|i| 1.0 * x.get(i, 3) - 0.8 * x.get(i, 11) + 0.6 * x.get(i, 29) + 0.3 * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let folds: Vec<usize> = (0..n).map(|i| i % 5).collect();
        let sel = lasso_select(&x, &y, &folds, &LassoOptions::default()).unwrap();
        for j in [3, 11, 29] {
            assert!(sel.beta[j] != 0.0, "column {j} not selected");
        }
        assert!(sel.lambda >= sel.lambda_min);
        assert_eq!(sel.path[0].1, 0);
    }

    #[test]
    fn selection_table_layout() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        let names = vec![
            "tumor_Nucleus:Area:mean".to_string(),
            "stroma_Cytoplasm:Eosin OD min:Q1".to_string(),
            "interaction:KDE_h16:std".to_string(),
        ];
        write_selection_table(&path, &names, &[0.1, 0.0, -0.4]).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "No.,Content,Cellular Feature Name,Statistics,Importance");
        assert_eq!(lines[1], "1,interaction,KDE_h16,std,-0.400000");
        assert_eq!(lines[2], "2,tumor_Nucleus,Area,mean,0.100000");
        assert_eq!(lines.len(), 3);
    }
}
