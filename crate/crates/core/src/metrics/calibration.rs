//! Calibration of dense scores against final pass/fail labels:
//! point-biserial correlation and rank-based AUC with half-credit ties.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum CalibrationError {
    #[error("scores and labels differ in length ({scores} vs {labels})")]
    LengthMismatch { scores: usize, labels: usize },
    #[error("need at least two samples")]
    TooFewSamples,
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
}

/// Calibration report for one score family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub point_biserial: f64,
    pub auc: f64,
    pub positives: usize,
    pub negatives: usize,
}

fn check_inputs(scores: &[f64], labels: &[bool]) -> Result<(usize, usize), CalibrationError> {
    if scores.len() != labels.len() {
        return Err(CalibrationError::LengthMismatch {
            scores: scores.len(),
            labels: labels.len(),
        });
    }
    if scores.len() < 2 {
        return Err(CalibrationError::TooFewSamples);
    }
    let positives = labels.iter().filter(|l| **l).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(CalibrationError::DegenerateInput("single class".to_string()));
    }
    Ok((positives, negatives))
}

/// Point-biserial correlation between scores and binary labels:
/// r = (M1 - M0) / s_n * sqrt(n1 n0 / n^2) with the population
/// standard deviation s_n.
pub fn point_biserial(scores: &[f64], labels: &[bool]) -> Result<f64, CalibrationError> {
    let (positives, negatives) = check_inputs(scores, labels)?;
    let n = scores.len() as f64;
    let mean = scores.iter().sum::<f64>() / n;
    let variance = scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n;
    if variance == 0.0 {
        return Err(CalibrationError::DegenerateInput("zero score variance".to_string()));
    }
    let mean_pos = scores
        .iter()
        .zip(labels)
        .filter(|(_, l)| **l)
        .map(|(s, _)| s)
        .sum::<f64>()
        / positives as f64;
    let mean_neg = scores
        .iter()
        .zip(labels)
        .filter(|(_, l)| !**l)
        .map(|(s, _)| s)
        .sum::<f64>()
        / negatives as f64;
    let weight = ((positives as f64 * negatives as f64) / (n * n)).sqrt();
    Ok((mean_pos - mean_neg) / variance.sqrt() * weight)
}

/// Rank-based AUC (Mann-Whitney U with average ranks): the fraction of
/// (positive, negative) pairs where the positive scores strictly higher,
/// with half credit for ties.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64, CalibrationError> {
    let (positives, negatives) = check_inputs(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // Average ranks over tie groups (1-based ranks).
    let mut ranks = vec![0.0; scores.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start;
        while end + 1 < order.len() && scores[order[end + 1]] == scores[order[start]] {
            end += 1;
        }
        let mean_rank = (start + end) as f64 / 2.0 + 1.0;
        for &idx in &order[start..=end] {
            ranks[idx] = mean_rank;
        }
        start = end + 1;
    }

    let rank_sum_pos: f64 = ranks.iter().zip(labels).filter(|(_, l)| **l).map(|(r, _)| r).sum();
    let n_pos = positives as f64;
    let n_neg = negatives as f64;
    let u = rank_sum_pos - n_pos * (n_pos + 1.0) / 2.0;
    Ok(u / (n_pos * n_neg))
}

/// Computes both calibration statistics over one score/label set.
pub fn calibrate(scores: &[f64], labels: &[bool]) -> Result<Calibration, CalibrationError> {
    let (positives, negatives) = check_inputs(scores, labels)?;
    Ok(Calibration {
        point_biserial: point_biserial(scores, labels)?,
        auc: auc(scores, labels)?,
        positives,
        negatives,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Brute-force pairwise AUC used as the oracle for the rank version.
    pub fn auc_pairwise(scores: &[f64], labels: &[bool]) -> f64 {
        let mut wins = 0.0;
        let mut pairs = 0.0;
        for (sp, lp) in scores.iter().zip(labels) {
            if !lp {
                continue;
            }
            for (sn, ln) in scores.iter().zip(labels) {
                if *ln {
                    continue;
                }
                pairs += 1.0;
                if sp > sn {
                    wins += 1.0;
                } else if sp == sn {
                    wins += 0.5;
                }
            }
        }
        wins / pairs
    }

    /// Pearson correlation as the direct-formula oracle for point-biserial.
    pub fn pearson(scores: &[f64], labels: &[bool]) -> f64 {
        let n = scores.len() as f64;
        let xs: Vec<f64> = labels.iter().map(|l| if *l { 1.0 } else { 0.0 }).collect();
        let mean_x = xs.iter().sum::<f64>() / n;
        let mean_y = scores.iter().sum::<f64>() / n;
        let mut cov = 0.0;
        let mut var_x = 0.0;
        let mut var_y = 0.0;
        for (x, y) in xs.iter().zip(scores) {
            cov += (x - mean_x) * (y - mean_y);
            var_x += (x - mean_x).powi(2);
            var_y += (y - mean_y).powi(2);
        }
        cov / (var_x.sqrt() * var_y.sqrt())
    }

    #[test]
    fn perfect_separation_gives_auc_one() {
        let scores = [0.9, 0.8, 0.1, 0.2];
        let labels = [true, true, false, false];
        assert_eq!(auc(&scores, &labels).unwrap(), 1.0);
    }

    #[test]
    fn all_ties_give_auc_half() {
        let scores = [0.5, 0.5, 0.5, 0.5];
        let labels = [true, false, true, false];
        assert!((auc(&scores, &labels).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn four_point_example_matches_pairwise_oracle() {
        let scores = [0.2, 0.6, 0.4, 0.9];
        let labels = [false, true, false, true];
        // All four (pos, neg) pairs rank correctly.
        assert_eq!(auc(&scores, &labels).unwrap(), 1.0);
        assert_eq!(auc_pairwise(&scores, &labels), 1.0);
        let r = point_biserial(&scores, &labels).unwrap();
        assert!((r - pearson(&scores, &labels)).abs() < 1e-12);
    }

    #[test]
    fn single_class_is_degenerate() {
        let scores = [0.2, 0.6];
        assert!(matches!(
            auc(&scores, &[true, true]),
            Err(CalibrationError::DegenerateInput(_))
        ));
    }

    #[test]
    fn zero_variance_scores_break_point_biserial_only() {
        let scores = [0.5, 0.5, 0.5];
        let labels = [true, false, true];
        assert!(matches!(
            point_biserial(&scores, &labels),
            Err(CalibrationError::DegenerateInput(_))
        ));
        assert!((auc(&scores, &labels).unwrap() - 0.5).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn rank_auc_matches_pairwise_oracle(
            raw in proptest::collection::vec((0u8..40, proptest::bool::ANY), 2..50),
            quantize in proptest::bool::ANY,
        ) {
            let mut scores: Vec<f64> = raw
                .iter()
                .map(|(s, _)| if quantize { (*s / 8) as f64 / 5.0 } else { *s as f64 / 40.0 })
                .collect();
            let mut labels: Vec<bool> = raw.iter().map(|(_, l)| *l).collect();
            // Force both classes to be present.
            labels[0] = true;
            scores.push(0.0);
            labels.push(false);
            let rank = auc(&scores, &labels).unwrap();
            let brute = auc_pairwise(&scores, &labels);
            prop_assert!((rank - brute).abs() < 1e-12);
        }

        #[test]
        fn point_biserial_matches_pearson(
            raw in proptest::collection::vec((0.0f64..1.0, proptest::bool::ANY), 3..40),
        ) {
            let mut scores: Vec<f64> = raw.iter().map(|(s, _)| *s).collect();
            let mut labels: Vec<bool> = raw.iter().map(|(_, l)| *l).collect();
            labels[0] = true;
            scores.push(0.123456);
            labels.push(false);
            // Zero-variance inputs are rejected, not compared.
            match point_biserial(&scores, &labels) {
                Ok(r) => prop_assert!((r - pearson(&scores, &labels)).abs() < 1e-12),
                Err(CalibrationError::DegenerateInput(_)) => {}
                Err(other) => return Err(TestCaseError::fail(format!("{other}"))),
            }
        }
    }
}
