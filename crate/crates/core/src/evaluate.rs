//! ROC analysis, decision histograms and subject-level bootstrap calls.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    pub threshold: f64,
}

/// ROC curve with a point per distinct decision value (predict positive when
/// decision ≥ threshold) and trapezoidal AUC.
pub fn roc_auc(decisions: &[f64], positive: &[bool]) -> Result<(Vec<RocPoint>, f64)> {
    if decisions.len() != positive.len() {
        return Err(Error::LengthMismatch(decisions.len(), positive.len()));
    }
    let n_pos = positive.iter().filter(|p| **p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::SingleClass);
    }
    let mut order: Vec<usize> = (0..decisions.len()).collect();
    order.sort_by(|&a, &b| decisions[b].total_cmp(&decisions[a]));
    let mut points = vec![RocPoint { fpr: 0.0, tpr: 0.0, threshold: f64::INFINITY }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut k = 0;
    while k < order.len() {
        let t = decisions[order[k]];
        while k < order.len() && decisions[order[k]] == t {
            if positive[order[k]] {
                tp += 1;
            } else {
                fp += 1;
            }
            k += 1;
        }
        points.push(RocPoint { fpr: fp as f64 / n_neg as f64, tpr: tp as f64 / n_pos as f64, threshold: t });
    }
    let auc = points.windows(2).map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0).sum();
    Ok((points, auc))
}

pub fn write_roc_csv(path: &Path, points: &[RocPoint]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_path(path)?;
    w.write_record(["fpr", "tpr", "threshold"])?;
    for p in points {
        w.write_record([format!("{:?}", p.fpr), format!("{:?}", p.tpr), format!("{:?}", p.threshold)])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    /// (group name, counts per bin)
    pub counts: Vec<(String, Vec<u64>)>,
}

/// Uniform bins over the range observed across all groups. The top edge is
/// inclusive. A degenerate range is widened to one unit around the value.
pub fn histogram(groups: &[(&str, &[f64])], bins: usize) -> Result<Histogram> {
    if bins == 0 {
        return Err(Error::InvalidParams("histogram needs at least one bin".into()));
    }
    let all = groups.iter().flat_map(|(_, v)| v.iter().copied());
    let (mut lo, mut hi) = all.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return Err(Error::EmptyInput);
    }
    if hi <= lo {
        lo -= 0.5;
        hi += 0.5;
    }
    let width = (hi - lo) / bins as f64;
    let edges: Vec<f64> = (0..=bins).map(|k| if k == bins { hi } else { lo + width * k as f64 }).collect();
    let counts = groups
        .iter()
        .map(|(name, v)| {
            let mut c = vec![0u64; bins];
            for &x in v.iter() {
                let b = (((x - lo) / width).floor() as usize).min(bins - 1);
                c[b] += 1;
            }
            (name.to_string(), c)
        })
        .collect();
    Ok(Histogram { edges, counts })
}

impl Histogram {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_path(path)?;
        let mut header = vec!["bin_lo".to_string(), "bin_hi".to_string()];
        header.extend(self.counts.iter().map(|(n, _)| n.clone()));
        w.write_record(&header)?;
        for b in 0..self.edges.len() - 1 {
            let mut rec = vec![format!("{:?}", self.edges[b]), format!("{:?}", self.edges[b + 1])];
            rec.extend(self.counts.iter().map(|(_, c)| c[b].to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectCall {
    pub subject_id: String,
    pub n_patches: usize,
    pub replicate_means: Vec<f64>,
    pub fraction_positive: f64,
    pub median: f64,
    /// True for a positive-class call (median of replicate means > 0).
    pub positive: bool,
    pub seed: u64,
}

/// RNG for one bootstrap replicate, derived only from (seed, subject, replicate).
fn replicate_rng(seed: u64, subject_id: &str, replicate: usize) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(subject_id.as_bytes());
    let key: [u8; 32] = h.finalize().into();
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(replicate as u64);
    rng
}

pub fn median(values: &[f64]) -> f64 {
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        s[n / 2]
    } else {
        (s[n / 2 - 1] + s[n / 2]) / 2.0
    }
}

/// Resamples the patch decisions `b` times with replacement and calls the
/// subject from the sign of the median replicate mean (zero is negative).
pub fn subject_bootstrap(subject_id: &str, decisions: &[f64], b: usize, seed: u64) -> Result<SubjectCall> {
    let n = decisions.len();
    if n == 0 {
        return Err(Error::NoEligiblePatches);
    }
    if b == 0 {
        return Err(Error::InvalidParams("bootstrap needs at least one replicate".into()));
    }
    let replicate_means: Vec<f64> = (0..b)
        .into_par_iter()
        .map(|r| {
            let mut rng = replicate_rng(seed, subject_id, r);
            (0..n).map(|_| decisions[rng.random_range(0..n)]).sum::<f64>() / n as f64
        })
        .collect();
    let fraction_positive = replicate_means.iter().filter(|m| **m > 0.0).count() as f64 / b as f64;
    let med = median(&replicate_means);
    Ok(SubjectCall {
        subject_id: subject_id.to_string(),
        n_patches: n,
        replicate_means,
        fraction_positive,
        median: med,
        positive: med > 0.0,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn concordance(d: &[f64], pos: &[bool]) -> f64 {
        let (mut s, mut pairs) = (0.0, 0.0);
        for i in 0..d.len() {
            for j in 0..d.len() {
                if pos[i] && !pos[j] {
                    pairs += 1.0;
                    if d[i] > d[j] {
                        s += 1.0;
                    } else if d[i] == d[j] {
                        s += 0.5;
                    }
                }
            }
        }
        s / pairs
    }

    #[test]
    fn perfect_and_tied() {
        let (_, auc) = roc_auc(&[3.0, 2.0, -1.0, -2.0], &[true, true, false, false]).unwrap();
        assert_eq!(auc, 1.0);
        let (pts, auc) = roc_auc(&[0.5; 6], &[true, false, true, false, true, false]).unwrap();
        assert_eq!(auc, 0.5);
        assert_eq!(pts.len(), 2);
        assert!(matches!(roc_auc(&[1.0], &[true]), Err(Error::SingleClass)));
    }

    #[test]
    fn random_fifty_point_instance() {
        let mut rng = ChaCha8Rng::seed_from_u64(50);
        let d: Vec<f64> = (0..50).map(|_| (rng.random::<f64>() * 10.0).round() / 10.0).collect();
        let pos: Vec<bool> = (0..50).map(|i| i % 3 != 0).collect();
        let (_, auc) = roc_auc(&d, &pos).unwrap();
        let c = concordance(&d, &pos);
        assert!((auc - c).abs() <= 1e-12 * c);
    }

    #[test]
    fn histogram_bins() {
        let a = [0.0, 1.0, 2.0];
        let b = [10.0];
        let h = histogram(&[("HGSOC", &a), ("SBOT", &b)], 50).unwrap();
        assert_eq!(h.edges.len(), 51);
        assert_eq!(h.edges[0], 0.0);
        assert_eq!(h.edges[50], 10.0);
        assert_eq!(h.counts[0].1.iter().sum::<u64>(), 3);
        assert_eq!(h.counts[1].1[49], 1);
        let h = histogram(&[("x", &[2.0, 2.0][..])], 4).unwrap();
        assert_eq!(h.counts[0].1.iter().sum::<u64>(), 2);
    }

    #[test]
    fn bootstrap_examples() {
        let c = subject_bootstrap("s", &[0.5, 1.0, 2.0], 1000, 7).unwrap();
        assert_eq!(c.fraction_positive, 1.0);
        assert!(c.positive);
        assert_eq!(c.replicate_means.len(), 1000);
        let c = subject_bootstrap("s", &[-0.25], 1000, 7).unwrap();
        assert!(c.replicate_means.iter().all(|m| *m == -0.25));
        assert!(!c.positive);
        let c = subject_bootstrap("s", &[0.0, 0.0], 10, 7).unwrap();
        assert!(!c.positive);
        assert!(matches!(subject_bootstrap("s", &[], 1000, 7), Err(Error::NoEligiblePatches)));
    }

    #[test]
    fn bootstrap_bit_identical() {
        let d: Vec<f64> = (0..37).map(|i| ((i * 37) % 11) as f64 - 5.0).collect();
        let a = subject_bootstrap("HGSOC_s03", &d, 1000, 7).unwrap();
        let b = subject_bootstrap("HGSOC_s03", &d, 1000, 7).unwrap();
        let bits = |c: &SubjectCall| c.replicate_means.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
        // The first replicates do not depend on how many follow.
        let short = subject_bootstrap("HGSOC_s03", &d, 10, 7).unwrap();
        assert_eq!(&a.replicate_means[..10], &short.replicate_means[..]);
    }

    #[test]
    fn bootstrap_stable_in_b() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let d: Vec<f64> = (0..20).map(|_| 0.1 + rng.sample::<f64, _>(StandardNormal)).collect();
        let seeds = 0..8u64;
        let avg = |b: usize| {
            seeds.clone().map(|s| subject_bootstrap("x", &d, b, s).unwrap().fraction_positive).sum::<f64>() / 8.0
        };
        assert!((avg(1000) - avg(4000)).abs() < 0.03);
    }

    proptest! {
        #[test]
        fn auc_equals_concordance(pts in prop::collection::vec((-5i32..5, any::<bool>()), 2..60)) {
            let d: Vec<f64> = pts.iter().map(|p| f64::from(p.0) * 0.5).collect();
            let pos: Vec<bool> = pts.iter().map(|p| p.1).collect();
            prop_assume!(pos.iter().any(|p| *p) && pos.iter().any(|p| !*p));
            let (_, auc) = roc_auc(&d, &pos).unwrap();
            let c = concordance(&d, &pos);
            prop_assert!((auc - c).abs() <= 1e-12 * c.max(1e-12));
        }

        #[test]
        fn roc_invariant_under_monotone_map(pts in prop::collection::vec((-3.0f64..3.0, any::<bool>()), 2..40)) {
            let d: Vec<f64> = pts.iter().map(|p| p.0).collect();
            let pos: Vec<bool> = pts.iter().map(|p| p.1).collect();
            prop_assume!(pos.iter().any(|p| *p) && pos.iter().any(|p| !*p));
            let mapped: Vec<f64> = d.iter().map(|v| v.exp() * 3.0 + 1.0).collect();
            let (p1, a1) = roc_auc(&d, &pos).unwrap();
            let (p2, a2) = roc_auc(&mapped, &pos).unwrap();
            prop_assert_eq!(a1, a2);
            let strip = |p: &[RocPoint]| p.iter().map(|q| (q.fpr, q.tpr)).collect::<Vec<_>>();
            prop_assert_eq!(strip(&p1), strip(&p2));
        }
    }
}
