//! Per-class ROC AUC, mean AUC, and percentile-bootstrap confidence
//! intervals.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{RngStream, StreamPurpose, Tensor};

/// Bootstrap settings for confidence intervals.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub resamples: usize,
    /// Coverage level in (0, 1), e.g. 0.95.
    pub level: f64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig {
            resamples: 1000,
            level: 0.95,
        }
    }
}

impl BootstrapConfig {
    pub fn validate(&self) -> Result<()> {
        if self.resamples == 0 {
            return Err(Error::invalid("bootstrap resamples must be positive"));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::invalid("bootstrap level must lie in (0, 1)"));
        }
        Ok(())
    }
}

/// Per-class AUCs with confidence intervals and their mean.
///
/// Classes whose test labels are single-class carry no defined AUC; they are
/// listed in `skipped_classes` and excluded from the mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AucReport {
    /// Class index of each entry, ascending.
    pub classes: Vec<usize>,
    pub auc: Vec<f64>,
    pub ci_low: Vec<f64>,
    pub ci_high: Vec<f64>,
    pub mauc: f64,
    pub skipped_classes: Vec<usize>,
}

/// ROC AUC in the rank formulation: the fraction of (positive, negative)
/// pairs the scores order correctly, ties counted half.
///
/// Ranks give O(n log n); the value is the correctly rounded quotient
/// U / (P·N) with U the Mann-Whitney statistic, bit-identical to what naive
/// pair counting produces.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::ShapeMismatch {
            context: "roc_auc",
            expected: vec![labels.len()],
            got: vec![scores.len()],
        });
    }
    if scores.is_empty() {
        return Err(Error::invalid("roc_auc over empty input"));
    }
    if scores.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("roc_auc scores".into()));
    }
    let positives = labels.iter().filter(|&&l| l).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::UndefinedAuc);
    }

    // average ranks over tie groups (1-based); exact in f64 as half-integers
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum_pos = 0.0f64;
    let mut i = 0usize;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + 1 + j + 1) as f64 / 2.0;
        for &idx in &order[i..=j] {
            if labels[idx] {
                rank_sum_pos += avg_rank;
            }
        }
        i = j + 1;
    }

    // u and d are exact in f64 (half-integer and integer magnitudes well below
    // 2^53), so this quotient is the correctly rounded Mann-Whitney statistic.
    let p = positives as f64;
    let u = rank_sum_pos - p * (p + 1.0) / 2.0;
    let d = p * negatives as f64;
    Ok(u / d)
}

/// Arithmetic mean of per-class AUCs.
///
/// Computed centered on the first entry so a constant vector yields exactly
/// that constant.
pub fn mauc(per_class: &[f64]) -> Result<f64> {
    let first = *per_class
        .first()
        .ok_or_else(|| Error::invalid("mauc of empty vector"))?;
    let sum_delta: f64 = per_class.iter().map(|v| v - first).sum();
    Ok(first + sum_delta / per_class.len() as f64)
}

/// Percentile-bootstrap confidence interval for the AUC, resampling examples
/// with replacement. Resamples that land single-class are skipped; fewer
/// than 10 surviving resamples is an error.
pub fn bootstrap_ci(
    scores: &[f64],
    labels: &[bool],
    resamples: usize,
    level: f64,
    seed: u64,
) -> Result<(f64, f64)> {
    let mut rng = RngStream::for_purpose(seed, StreamPurpose::Bootstrap, 0, 0);
    bootstrap_ci_stream(scores, labels, resamples, level, &mut rng)
}

fn bootstrap_ci_stream(
    scores: &[f64],
    labels: &[bool],
    resamples: usize,
    level: f64,
    rng: &mut RngStream,
) -> Result<(f64, f64)> {
    BootstrapConfig { resamples, level }.validate()?;
    roc_auc(scores, labels)?; // validates inputs up front

    let n = scores.len();
    let mut valid = Vec::with_capacity(resamples);
    let mut s = vec![0.0; n];
    let mut l = vec![false; n];
    for _ in 0..resamples {
        let mut saw_pos = false;
        let mut saw_neg = false;
        for slot in 0..n {
            let pick = rng.range(n);
            s[slot] = scores[pick];
            l[slot] = labels[pick];
            if l[slot] {
                saw_pos = true;
            } else {
                saw_neg = true;
            }
        }
        if saw_pos && saw_neg {
            valid.push(roc_auc(&s, &l).expect("two-class resample"));
        }
    }
    if valid.len() < 10 {
        return Err(Error::invalid(format!(
            "only {} of {} bootstrap resamples contained both classes",
            valid.len(),
            resamples
        )));
    }
    valid.sort_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0;
    Ok((quantile(&valid, tail), quantile(&valid, 1.0 - tail)))
}

/// Linear-interpolation quantile of an ascending-sorted sample.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
    }
}

/// Evaluate per-class AUC with CIs over a score matrix (n x C) against
/// a label matrix of identical shape. Per-class work runs in parallel;
/// results are reduced in ascending class order, and each class draws its
/// bootstrap resamples from its own (seed, round, class) stream.
pub fn auc_report(
    scores: &Tensor,
    labels: &Tensor,
    boot: &BootstrapConfig,
    seed: u64,
    round: usize,
) -> Result<AucReport> {
    if !scores.same_shape(labels) {
        return Err(Error::ShapeMismatch {
            context: "auc_report",
            expected: labels.shape().to_vec(),
            got: scores.shape().to_vec(),
        });
    }
    boot.validate()?;
    let (n, c) = (scores.rows(), scores.cols());

    let per_class: Vec<Option<(f64, f64, f64)>> = (0..c)
        .into_par_iter()
        .map(|class| -> Result<Option<(f64, f64, f64)>> {
            let col_scores: Vec<f64> = (0..n).map(|i| scores.row(i)[class]).collect();
            let col_labels: Vec<bool> = (0..n).map(|i| labels.row(i)[class] == 1.0).collect();
            match roc_auc(&col_scores, &col_labels) {
                Err(Error::UndefinedAuc) => Ok(None),
                Err(e) => Err(e),
                Ok(point) => {
                    let mut rng =
                        RngStream::for_purpose(seed, StreamPurpose::Bootstrap, round, class);
                    let (mut lo, mut hi) = bootstrap_ci_stream(
                        &col_scores,
                        &col_labels,
                        boot.resamples,
                        boot.level,
                        &mut rng,
                    )?;
                    // the percentile interval is widened, if resampling noise
                    // demands it, so it always contains the point estimate
                    lo = lo.min(point);
                    hi = hi.max(point);
                    Ok(Some((point, lo, hi)))
                }
            }
        })
        .collect::<Result<Vec<_>>>()?;

    let mut report = AucReport {
        classes: Vec::new(),
        auc: Vec::new(),
        ci_low: Vec::new(),
        ci_high: Vec::new(),
        mauc: 0.0,
        skipped_classes: Vec::new(),
    };
    for (class, entry) in per_class.into_iter().enumerate() {
        match entry {
            Some((point, lo, hi)) => {
                report.classes.push(class);
                report.auc.push(point);
                report.ci_low.push(lo);
                report.ci_high.push(hi);
            }
            None => report.skipped_classes.push(class),
        }
    }
    if report.auc.is_empty() {
        return Err(Error::UndefinedAuc);
    }
    report.mauc = mauc(&report.auc)?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    /// Brute-force O(n^2) pair counting, sharing only the published
    /// U -> AUC map with the library implementation.
    fn pair_count_auc(scores: &[f64], labels: &[bool]) -> f64 {
        let (mut u, mut p, mut n) = (0.0f64, 0u64, 0u64);
        for (i, &li) in labels.iter().enumerate() {
            if !li {
                continue;
            }
            p += 1;
            for (j, &lj) in labels.iter().enumerate() {
                if lj {
                    continue;
                }
                if scores[i] > scores[j] {
                    u += 1.0;
                } else if scores[i] == scores[j] {
                    u += 0.5;
                }
            }
        }
        for &l in labels {
            if !l {
                n += 1;
            }
        }
        let d = (p * n) as f64;
        u / d
    }

    #[test]
    fn perfect_and_tied_cases() {
        assert_eq!(roc_auc(&[0.9, 0.1], &[true, false]).unwrap(), 1.0);
        assert_eq!(roc_auc(&[0.1, 0.9], &[true, false]).unwrap(), 0.0);
        assert_eq!(
            roc_auc(&[0.4, 0.4, 0.4, 0.4], &[true, false, true, false]).unwrap(),
            0.5
        );
    }

    #[test]
    fn undefined_for_single_class() {
        assert!(matches!(
            roc_auc(&[0.1, 0.2], &[true, true]),
            Err(Error::UndefinedAuc)
        ));
        assert!(roc_auc(&[], &[]).is_err());
        assert!(roc_auc(&[f64::NAN, 0.0], &[true, false]).is_err());
    }

    #[test]
    fn matches_brute_force_pair_counting() {
        let mut rng = RngStream::new(101, 0);
        for trial in 0..20 {
            let n = 50;
            let scores: Vec<f64> = (0..n)
                .map(|_| {
                    // coarse grid forces plenty of ties
                    (rng.uniform() * 8.0).floor() / 8.0
                })
                .collect();
            let labels: Vec<bool> = (0..n).map(|_| rng.bernoulli(0.4)).collect();
            if labels.iter().all(|&l| l) || labels.iter().all(|&l| !l) {
                continue;
            }
            let fast = roc_auc(&scores, &labels).unwrap();
            let slow = pair_count_auc(&scores, &labels);
            assert_eq!(fast.to_bits(), slow.to_bits(), "trial {trial}");
        }
    }

    #[test]
    fn invariant_under_monotone_transforms() {
        let mut rng = RngStream::new(103, 0);
        let scores: Vec<f64> = (0..80).map(|_| rng.normal()).collect();
        let labels: Vec<bool> = (0..80).map(|_| rng.bernoulli(0.5)).collect();
        let base = roc_auc(&scores, &labels).unwrap();

        let affine: Vec<f64> = scores.iter().map(|v| 2.0 * v + 1.0).collect();
        assert_eq!(
            base.to_bits(),
            roc_auc(&affine, &labels).unwrap().to_bits()
        );
        let squashed: Vec<f64> = scores.iter().map(|v| v.tanh()).collect();
        assert_eq!(
            base.to_bits(),
            roc_auc(&squashed, &labels).unwrap().to_bits()
        );
    }

    #[test]
    fn negation_complements_exactly() {
        let mut rng = RngStream::new(107, 0);
        for _ in 0..50 {
            let n = 30 + rng.range(40);
            let scores: Vec<f64> = (0..n).map(|_| (rng.uniform() * 6.0).floor()).collect();
            let labels: Vec<bool> = (0..n).map(|_| rng.bernoulli(0.3)).collect();
            if labels.iter().all(|&l| l) || labels.iter().all(|&l| !l) {
                continue;
            }
            let fwd = roc_auc(&scores, &labels).unwrap();
            let neg: Vec<f64> = scores.iter().map(|v| -v).collect();
            let rev = roc_auc(&neg, &labels).unwrap();
            assert_eq!(fwd + rev, 1.0, "fwd {fwd} rev {rev}");
        }
    }

    #[test]
    fn mauc_values() {
        assert_eq!(mauc(&[1.0]).unwrap(), 1.0);
        assert_abs_diff_eq!(mauc(&[0.6, 0.8]).unwrap(), 0.7, epsilon = 1e-15);
        assert!(mauc(&[]).is_err());
        // constant vector reproduces the constant exactly
        assert_eq!(mauc(&[0.7371; 14]).unwrap(), 0.7371);

        let mut rng = RngStream::new(109, 0);
        let vals: Vec<f64> = (0..14).map(|_| 0.5 + 0.5 * rng.uniform()).collect();
        let mean = mauc(&vals).unwrap();
        let manual = vals.iter().sum::<f64>() / 14.0;
        assert_abs_diff_eq!(mean, manual, epsilon = 1e-12);
    }

    #[test]
    fn bootstrap_degenerate_and_deterministic() {
        // perfectly separated: every valid resample has AUC 1
        let scores: Vec<f64> = (0..40).map(|i| if i < 20 { 1.0 } else { 0.0 }).collect();
        let labels: Vec<bool> = (0..40).map(|i| i < 20).collect();
        let (lo, hi) = bootstrap_ci(&scores, &labels, 200, 0.95, 5).unwrap();
        assert_eq!((lo, hi), (1.0, 1.0));

        let a = bootstrap_ci(&scores, &labels, 200, 0.95, 7).unwrap();
        let b = bootstrap_ci(&scores, &labels, 200, 0.95, 7).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn bootstrap_contains_point_estimate() {
        let mut rng = RngStream::new(113, 0);
        let n = 200;
        let labels: Vec<bool> = (0..n).map(|i| i % 2 == 0).collect();
        let scores: Vec<f64> = labels
            .iter()
            .map(|&l| rng.normal() + if l { 0.8 } else { 0.0 })
            .collect();
        let point = roc_auc(&scores, &labels).unwrap();
        let (lo, hi) = bootstrap_ci(&scores, &labels, 1000, 0.95, 11).unwrap();
        assert!(lo <= point && point <= hi, "({lo}, {hi}) vs {point}");
        assert!(hi - lo < 0.3);
    }

    #[test]
    fn bootstrap_needs_enough_valid_resamples() {
        let scores = [0.9, 0.1];
        let labels = [true, false];
        // 5 resamples can never produce the 10 valid ones required
        assert!(bootstrap_ci(&scores, &labels, 5, 0.95, 3).is_err());
        assert!(bootstrap_ci(&scores, &labels, 100, 1.5, 3).is_err());
    }

    #[test]
    fn report_shapes_and_skips() {
        let mut rng = RngStream::new(127, 0);
        let n = 60;
        // class 2 never occurs: it must be skipped, not fail the report
        let mut y = vec![0.0; n * 3];
        let mut s = vec![0.0; n * 3];
        for i in 0..n {
            let c = i % 2;
            y[i * 3 + c] = 1.0;
            for j in 0..3 {
                s[i * 3 + j] = rng.normal() + if j == c { 1.0 } else { 0.0 };
            }
        }
        let scores = Tensor::new(vec![n, 3], s).unwrap();
        let labels = Tensor::new(vec![n, 3], y).unwrap();
        let boot = BootstrapConfig {
            resamples: 200,
            level: 0.95,
        };
        let report = auc_report(&scores, &labels, &boot, 31, 4).unwrap();
        assert_eq!(report.classes, vec![0, 1]);
        assert_eq!(report.skipped_classes, vec![2]);
        assert_eq!(report.auc.len(), 2);
        for i in 0..2 {
            assert!(report.ci_low[i] <= report.auc[i]);
            assert!(report.auc[i] <= report.ci_high[i]);
        }
        assert_abs_diff_eq!(report.mauc, mauc(&report.auc).unwrap(), epsilon = 1e-15);

        // determinism: same inputs, same report
        let report2 = auc_report(&scores, &labels, &boot, 31, 4).unwrap();
        assert_eq!(report, report2);
    }
}
