//! Linear models over descriptor matrices: standardization, SVM training,
//! evaluation and descriptor-space analyses.

pub mod correlation;
pub mod kmeans;
pub mod svm;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length");
        Self { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::new(rows, cols, vec![0.0; rows * cols])
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::DimensionMismatch { expected: cols, got: r.len() });
            }
            data.extend_from_slice(r);
        }
        Ok(Self::new(rows.len(), cols, data))
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn select_rows(&self, idx: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Matrix::new(idx.len(), self.cols, data)
    }

    pub fn scaled(&self, alpha: f64) -> Matrix {
        Matrix::new(self.rows, self.cols, self.data.iter().map(|v| v * alpha).collect())
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Column-wise z-scoring with population standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Columns with zero variance in the fitting data.
    pub constant: Vec<bool>,
}

impl Standardizer {
    pub fn fit(x: &Matrix) -> Result<Self> {
        if x.rows < 2 {
            return Err(Error::TooFewRows { needed: 2, got: x.rows });
        }
        let n = x.rows as f64;
        let mut mean = vec![0.0; x.cols];
        for i in 0..x.rows {
            for (m, v) in mean.iter_mut().zip(x.row(i)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; x.cols];
        for i in 0..x.rows {
            for ((s, v), m) in var.iter_mut().zip(x.row(i)).zip(&mean) {
                *s += (v - m).powi(2);
            }
        }
        let mut std = Vec::with_capacity(x.cols);
        let mut constant = Vec::with_capacity(x.cols);
        for (j, s) in var.iter().enumerate() {
            let sd = (s / n).sqrt();
            // Relative cut so that summation noise on a constant column is not
            // mistaken for signal.
            let is_const = sd <= 1e-12 * mean[j].abs().max(1e-300) || sd == 0.0;
            constant.push(is_const);
            std.push(if is_const { 1.0 } else { sd });
        }
        Ok(Self { mean, std, constant })
    }

    pub fn apply_row(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .enumerate()
            .map(|(j, v)| if self.constant[j] { 0.0 } else { (v - self.mean[j]) / self.std[j] })
            .collect()
    }

    pub fn apply(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols != self.mean.len() {
            return Err(Error::DimensionMismatch { expected: self.mean.len(), got: x.cols });
        }
        let mut data = Vec::with_capacity(x.data.len());
        for i in 0..x.rows {
            data.extend(self.apply_row(x.row(i)));
        }
        Ok(Matrix::new(x.rows, x.cols, data))
    }
}

/// Fits column statistics and returns the standardized matrix with them.
pub fn standardize_fit_apply(x: &Matrix) -> Result<(Matrix, Standardizer)> {
    let s = Standardizer::fit(x)?;
    let z = s.apply(x)?;
    Ok((z, s))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Svm,
    Lasso,
}

/// Linear decision function on standardized inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub kind: ModelKind,
    pub feature_names: Vec<String>,
    pub standardize_mean: Vec<f64>,
    pub standardize_std: Vec<f64>,
    pub weights: Vec<f64>,
    pub bias: f64,
    pub hyperparams: BTreeMap<String, f64>,
    pub seed: u64,
    /// Class reported for a positive decision.
    pub positive_label: String,
    /// Class reported for a zero or negative decision.
    pub negative_label: String,
}

impl LinearModel {
    pub fn from_parts(
        kind: ModelKind,
        feature_names: Vec<String>,
        standardizer: &Standardizer,
        mut weights: Vec<f64>,
        bias: f64,
        labels: (&str, &str),
        seed: u64,
    ) -> Self {
        for (w, &c) in weights.iter_mut().zip(&standardizer.constant) {
            if c {
                *w = 0.0;
            }
        }
        // Constant columns carry std 1 and mean 0 in the saved model so that
        // their inputs contribute nothing through the zero weight either way.
        let standardize_mean = standardizer
            .mean
            .iter()
            .zip(&standardizer.constant)
            .map(|(&m, &c)| if c { 0.0 } else { m })
            .collect();
        Self {
            kind,
            feature_names,
            standardize_mean,
            standardize_std: standardizer.std.clone(),
            weights,
            bias,
            hyperparams: BTreeMap::new(),
            seed,
            positive_label: labels.0.to_string(),
            negative_label: labels.1.to_string(),
        }
    }

    pub fn decision(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.weights.len() {
            return Err(Error::DimensionMismatch { expected: self.weights.len(), got: x.len() });
        }
        let mut s = self.bias;
        for j in 0..x.len() {
            s += self.weights[j] * (x[j] - self.standardize_mean[j]) / self.standardize_std[j];
        }
        Ok(s)
    }

    pub fn weight_norm(&self) -> f64 {
        dot(&self.weights, &self.weights).sqrt()
    }

    /// Signed distance to the hyperplane in standardized space.
    pub fn distance(&self, x: &[f64]) -> Result<f64> {
        let d = self.decision(x)?;
        let n = self.weight_norm();
        Ok(if n > 0.0 { d / n } else { 0.0 })
    }

    /// True when the decision is strictly positive.
    pub fn predict_positive(&self, x: &[f64]) -> Result<bool> {
        Ok(self.decision(x)? > 0.0)
    }

    pub fn predict_label(&self, x: &[f64]) -> Result<&str> {
        Ok(if self.predict_positive(x)? { &self.positive_label } else { &self.negative_label })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// Weights normalized by the largest magnitude, sorted by descending |value|
/// (ties keep feature order).
pub fn feature_importance(names: &[String], weights: &[f64]) -> Vec<(String, f64)> {
    let m = weights.iter().fold(0.0f64, |a, w| a.max(w.abs()));
    let mut out: Vec<(String, f64)> = names
        .iter()
        .zip(weights)
        .map(|(n, &w)| (n.clone(), if m > 0.0 { w / m } else { 0.0 }))
        .collect();
    out.sort_by(|a, b| b.1.abs().total_cmp(&a.1.abs()));
    out
}

/// 2×2 confusion matrix. Rows are true classes, columns predictions, both in
/// `labels` order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub labels: [String; 2],
    pub counts: [[u64; 2]; 2],
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn correct(&self) -> u64 {
        self.counts[0][0] + self.counts[1][1]
    }

    pub fn accuracy(&self) -> f64 {
        let t = self.total();
        if t == 0 {
            0.0
        } else {
            self.correct() as f64 / t as f64
        }
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_path(path)?;
        w.write_record(["true\\predicted", &self.labels[0], &self.labels[1]])?;
        for (i, row) in self.counts.iter().enumerate() {
            w.write_record([self.labels[i].clone(), row[0].to_string(), row[1].to_string()])?;
        }
        w.write_record(["accuracy".to_string(), format!("{:.6}", self.accuracy()), String::new()])?;
        w.flush()?;
        Ok(())
    }
}

/// Tallies class indices (0 or 1) by (truth, prediction).
pub fn confusion(truth: &[usize], pred: &[usize], labels: [&str; 2]) -> Result<ConfusionMatrix> {
    if truth.len() != pred.len() {
        return Err(Error::LengthMismatch(truth.len(), pred.len()));
    }
    let mut counts = [[0u64; 2]; 2];
    for (&t, &p) in truth.iter().zip(pred) {
        if t > 1 || p > 1 {
            return Err(Error::InvalidParams(format!("class index out of range: {t}, {p}")));
        }
        counts[t][p] += 1;
    }
    Ok(ConfusionMatrix { labels: labels.map(str::to_string), counts })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn two_point_zscore() {
        let x = Matrix::new(2, 1, vec![1.0, 3.0]);
        let (z, s) = standardize_fit_apply(&x).unwrap();
        assert_eq!(s.mean, vec![2.0]);
        assert_eq!(s.std, vec![1.0]);
        assert_eq!(z.data, vec![-1.0, 1.0]);
    }

    #[test]
    fn constant_column_sentinel() {
        let x = Matrix::new(3, 2, vec![5.0, 1.0, 5.0, 2.0, 5.0, 4.0]);
        let (z, s) = standardize_fit_apply(&x).unwrap();
        assert!(s.constant[0] && !s.constant[1]);
        assert_eq!(s.std[0], 1.0);
        assert_eq!(z.column(0), vec![0.0; 3]);
        assert!(matches!(Standardizer::fit(&Matrix::new(1, 2, vec![1.0, 2.0])), Err(Error::TooFewRows { .. })));
    }

    #[test]
    fn decision_formula() {
        let s = Standardizer { mean: vec![0.0, 0.0], std: vec![1.0, 1.0], constant: vec![false, false] };
        let m = LinearModel::from_parts(ModelKind::Svm, vec!["a".into(), "b".into()], &s, vec![1.0, 0.0], 0.0, ("tumor", "stroma"), 0);
        assert_eq!(m.decision(&[2.0, 5.0]).unwrap(), 2.0);
        assert_eq!(m.distance(&[2.0, 5.0]).unwrap(), 2.0);
        assert_eq!(m.predict_label(&[0.0, 3.0]).unwrap(), "stroma");
        assert_eq!(m.predict_label(&[0.1, 3.0]).unwrap(), "tumor");
        assert!(matches!(m.decision(&[1.0]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn importance_examples() {
        let names = vec!["a".to_string(), "b".to_string()];
        let imp = feature_importance(&names, &[2.0, -1.0]);
        assert_eq!(imp, vec![("a".into(), 1.0), ("b".into(), -0.5)]);
        let imp = feature_importance(&names, &[0.0, 0.0]);
        assert!(imp.iter().all(|(_, v)| *v == 0.0));
    }

    #[test]
    fn confusion_examples() {
        let t = [0, 0, 1, 1];
        let c = confusion(&t, &t, ["tumor", "stroma"]).unwrap();
        assert_eq!(c.counts, [[2, 0], [0, 2]]);
        assert_eq!(c.accuracy(), 1.0);
        let c = confusion(&t, &[1, 1, 0, 0], ["tumor", "stroma"]).unwrap();
        assert_eq!(c.accuracy(), 0.0);
        let c = confusion(&t, &[0, 0, 1, 0], ["tumor", "stroma"]).unwrap();
        assert_eq!(c.accuracy(), 0.75);
        assert!(matches!(confusion(&t, &[0], ["a", "b"]), Err(Error::LengthMismatch(4, 1))));
    }

    proptest! {
        #[test]
        fn standardized_moments(rows in prop::collection::vec(prop::collection::vec(-50.0f64..50.0, 3), 2..40)) {
            let x = Matrix::from_rows(&rows).unwrap();
            let (z, s) = standardize_fit_apply(&x).unwrap();
            for j in 0..3 {
                let col = z.column(j);
                let n = col.len() as f64;
                let m = col.iter().sum::<f64>() / n;
                prop_assert!(m.abs() < 1e-9);
                if !s.constant[j] {
                    let sd = (col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n).sqrt();
                    prop_assert!((sd - 1.0).abs() < 1e-9);
                }
            }
        }

        #[test]
        fn importance_scale_invariant(w in prop::collection::vec(-5.0f64..5.0, 1..12), a in 0.01f64..100.0) {
            let names: Vec<String> = (0..w.len()).map(|i| format!("f{i}")).collect();
            let scaled: Vec<f64> = w.iter().map(|v| v * a).collect();
            let i1: Vec<String> = feature_importance(&names, &w).into_iter().map(|p| p.0).collect();
            let i2: Vec<String> = feature_importance(&names, &scaled).into_iter().map(|p| p.0).collect();
            prop_assert_eq!(i1, i2);
            if w.iter().any(|v| *v != 0.0) {
                let m = feature_importance(&names, &w).iter().fold(0.0f64, |a, p| a.max(p.1.abs()));
                prop_assert!((m - 1.0).abs() < 1e-15);
            }
        }

        #[test]
        fn confusion_matches_tally(pairs in prop::collection::vec((0usize..2, 0usize..2), 0..100)) {
            let (t, p): (Vec<usize>, Vec<usize>) = pairs.iter().copied().unzip();
            let c = confusion(&t, &p, ["a", "b"]).unwrap();
            for a in 0..2 {
                for b in 0..2 {
                    let n = pairs.iter().filter(|&&(x, y)| x == a && y == b).count() as u64;
                    prop_assert_eq!(c.counts[a][b], n);
                }
            }
            prop_assert_eq!(c.total(), pairs.len() as u64);
        }
    }
}
