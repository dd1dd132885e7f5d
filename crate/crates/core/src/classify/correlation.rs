//! Feature inter-correlation and average-linkage ordering.

use crate::classify::Matrix;
use crate::error::{Error, Result};

/// Pearson correlation between all column pairs. A constant column correlates
/// 0 with everything, itself included.
pub fn pearson_matrix(x: &Matrix) -> Result<Vec<Vec<f64>>> {
    if x.rows < 3 {
        return Err(Error::TooFewRows { needed: 3, got: x.rows });
    }
    let p = x.cols;
    let n = x.rows as f64;
    let cols: Vec<Vec<f64>> = (0..p)
        .map(|j| {
            let c = x.column(j);
            let m = c.iter().sum::<f64>() / n;
            c.into_iter().map(|v| v - m).collect()
        })
        .collect();
    let norms: Vec<f64> = cols.iter().map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
    let mut r = vec![vec![0.0; p]; p];
    for a in 0..p {
        for b in a..p {
            let v = if norms[a] > 0.0 && norms[b] > 0.0 {
                let s: f64 = cols[a].iter().zip(&cols[b]).map(|(u, w)| u * w).sum();
                (s / (norms[a] * norms[b])).clamp(-1.0, 1.0)
            } else {
                0.0
            };
            r[a][b] = v;
            r[b][a] = v;
        }
    }
    Ok(r)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Merge {
    pub left: Vec<usize>,
    pub right: Vec<usize>,
    pub height: f64,
}

/// Agglomerative average-linkage clustering on the distance 1 − |r|.
/// Returns the merge sequence and the dendrogram leaf order.
pub fn average_linkage(r: &[Vec<f64>]) -> (Vec<Merge>, Vec<usize>) {
    let p = r.len();
    let dist = |a: usize, b: usize| 1.0 - r[a][b].abs();
    let mut clusters: Vec<Vec<usize>> = (0..p).map(|i| vec![i]).collect();
    let mut merges = Vec::new();
    while clusters.len() > 1 {
        let mut best = (0, 1, f64::INFINITY);
        for a in 0..clusters.len() {
            for b in a + 1..clusters.len() {
                let mut s = 0.0;
                for &i in &clusters[a] {
                    for &j in &clusters[b] {
                        s += dist(i, j);
                    }
                }
                let d = s / (clusters[a].len() * clusters[b].len()) as f64;
                if d < best.2 {
                    best = (a, b, d);
                }
            }
        }
        let (a, b, h) = best;
        let right = clusters.remove(b);
        let left = clusters[a].clone();
        merges.push(Merge { left: left.clone(), right: right.clone(), height: h });
        clusters[a].extend(right);
    }
    let order = clusters.pop().unwrap_or_default();
    (merges, order)
}

/// Correlation matrix with rows and columns permuted into leaf order.
pub fn reorder(r: &[Vec<f64>], order: &[usize]) -> Vec<Vec<f64>> {
    order.iter().map(|&i| order.iter().map(|&j| r[i][j]).collect()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn self_and_negation() {
        let rows: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64, -(i as f64), 3.0, (i * i) as f64]).collect();
        let r = pearson_matrix(&Matrix::from_rows(&rows).unwrap()).unwrap();
        assert!((r[0][0] - 1.0).abs() < 1e-12);
        assert!((r[0][1] + 1.0).abs() < 1e-12);
        assert_eq!(r[2][0], 0.0);
        assert_eq!(r[2][2], 0.0);
    }

    #[test]
    fn independent_columns_uncorrelated() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let rows: Vec<Vec<f64>> = (0..10_000).map(|_| vec![rng.random::<f64>(), rng.random::<f64>()]).collect();
        let r = pearson_matrix(&Matrix::from_rows(&rows).unwrap()).unwrap();
        assert!(r[0][1].abs() < 0.05);
    }

    #[test]
    fn too_few_rows() {
        let x = Matrix::new(2, 2, vec![0.0; 4]);
        assert!(matches!(pearson_matrix(&x), Err(Error::TooFewRows { .. })));
    }

    #[test]
    fn linkage_groups_correlated_features() {
        let r = vec![
            vec![1.0, 0.1, 0.95, 0.0],
            vec![0.1, 1.0, 0.0, -0.9],
            vec![0.95, 0.0, 1.0, 0.1],
            vec![0.0, -0.9, 0.1, 1.0],
        ];
        let (merges, order) = average_linkage(&r);
        assert_eq!(merges.len(), 3);
        assert_eq!(merges[0].left, vec![0]);
        assert_eq!(merges[0].right, vec![2]);
        let pos = |f: usize| order.iter().position(|&o| o == f).unwrap();
        assert_eq!((pos(0) as i64 - pos(2) as i64).abs(), 1);
        assert_eq!((pos(1) as i64 - pos(3) as i64).abs(), 1);
        let re = reorder(&r, &order);
        assert_eq!(re[0][0], 1.0);
    }
}
