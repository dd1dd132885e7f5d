//! k-means with k-means++ seeding, used to group misclassified cells.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::classify::Matrix;

pub const MAX_LLOYD_ITERATIONS: usize = 300;

#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    /// Cluster index per input row.
    pub assignment: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    /// Row index of the member nearest each centroid (`None` for an empty cluster).
    pub representatives: Vec<Option<usize>>,
    pub iterations: usize,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

fn nearest(row: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (k, c) in centroids.iter().enumerate() {
        let d = sq_dist(row, c);
        if d < best.1 {
            best = (k, d);
        }
    }
    best
}

fn seed_centroids(x: &Matrix, k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = x.rows;
    let mut chosen = vec![rng.random_range(0..n)];
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(x.row(i), x.row(chosen[0]))).collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if w > 0.0 && u < w {
                    pick = i;
                    break;
                }
                u -= w;
            }
            // Guard against rounding landing on an already chosen point.
            if d2[pick] == 0.0 {
                pick = (0..n).rev().find(|&i| d2[i] > 0.0).unwrap_or(pick);
            }
            pick
        } else {
            // All remaining points coincide with a centroid.
            (0..n).find(|i| !chosen.contains(i)).unwrap_or(0)
        };
        chosen.push(next);
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(x.row(i), x.row(next)));
        }
    }
    chosen.into_iter().map(|i| x.row(i).to_vec()).collect()
}

/// Clusters the rows of `x` into min(k, n) groups. Deterministic given `seed`.
pub fn kmeans(x: &Matrix, k: usize, seed: u64) -> Clustering {
    let n = x.rows;
    if n == 0 || k == 0 {
        return Clustering { assignment: vec![], centroids: vec![], representatives: vec![], iterations: 0 };
    }
    let k = k.min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = seed_centroids(x, k, &mut rng);
    let mut assignment: Vec<usize> = (0..n).map(|i| nearest(x.row(i), &centroids).0).collect();
    let mut iterations = 0;
    while iterations < MAX_LLOYD_ITERATIONS {
        iterations += 1;
        let mut sums = vec![vec![0.0; x.cols]; k];
        let mut counts = vec![0usize; k];
        for (i, &a) in assignment.iter().enumerate() {
            counts[a] += 1;
            for (s, v) in sums[a].iter_mut().zip(x.row(i)) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                centroids[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
        let next: Vec<usize> = (0..n).map(|i| nearest(x.row(i), &centroids).0).collect();
        if next == assignment {
            break;
        }
        assignment = next;
    }
    let mut representatives = vec![None; k];
    let mut best = vec![f64::INFINITY; k];
    for (i, &a) in assignment.iter().enumerate() {
        let d = sq_dist(x.row(i), &centroids[a]);
        if d < best[a] {
            best[a] = d;
            representatives[a] = Some(i);
        }
    }
    Clustering { assignment, centroids, representatives, iterations }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_blobs_recovered() {
        let mut data = Vec::new();
        for i in 0..20 {
            let base = if i < 10 { 0.0 } else { 100.0 };
            data.push(base + (i % 10) as f64 * 0.01);
            data.push(base - (i % 3) as f64 * 0.01);
        }
        let x = Matrix::new(20, 2, data);
        for seed in 0..20 {
            let c = kmeans(&x, 2, seed);
            let first = c.assignment[0];
            assert!(c.assignment[..10].iter().all(|&a| a == first));
            assert!(c.assignment[10..].iter().all(|&a| a != first));
        }
    }

    #[test]
    fn fewer_points_than_clusters() {
        let x = Matrix::new(3, 2, vec![0.0, 0.0, 5.0, 5.0, 9.0, 1.0]);
        let c = kmeans(&x, 10, 42);
        assert_eq!(c.centroids.len(), 3);
        let mut a = c.assignment.clone();
        a.sort();
        a.dedup();
        assert_eq!(a.len(), 3);
        assert!(c.representatives.iter().all(Option::is_some));
    }

    #[test]
    fn duplicate_points_do_not_hang() {
        let x = Matrix::new(4, 1, vec![1.0, 1.0, 1.0, 1.0]);
        let c = kmeans(&x, 3, 0);
        assert_eq!(c.assignment.len(), 4);
    }

    #[test]
    fn seed_determinism() {
        let data: Vec<f64> = (0..200).map(|i| ((i * 7919) % 101) as f64).collect();
        let x = Matrix::new(100, 2, data);
        assert_eq!(kmeans(&x, 10, 9), kmeans(&x, 10, 9));
    }
}
