//! One-class anomaly scoring by distance to the centroid of normal training data.

use alloc::vec::Vec;
use core::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnomalyMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub auroc: f64,
    pub threshold: f64,
}

/// Area under the ROC curve by the rank-sum statistic, tied scores sharing
/// their average rank. `labels[i]` is true for anomalies (higher score = more anomalous).
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(invalid("one label per score required"));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite { op: "auroc" });
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::InsufficientData("AUROC needs both classes".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap_or(Ordering::Equal));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += order[i..=j].iter().filter(|&&k| labels[k]).count() as f64 * avg;
        i = j + 1;
    }
    let (p, n) = (pos as f64, neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// `q`-quantile (`q ∈ [0, 1]`) with linear interpolation between order statistics.
pub fn quantile(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::InsufficientData("quantile of an empty set".into()));
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(invalid("quantile must be in [0, 1]"));
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
    let pos = q * (v.len() - 1) as f64;
    let lo = libm::floor(pos) as usize;
    let hi = (lo + 1).min(v.len() - 1);
    Ok(v[lo] + (v[hi] - v[lo]) * (pos - lo as f64))
}

pub fn centroid(points: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = points.first().ok_or_else(|| Error::InsufficientData("empty normal set".into()))?;
    let mut c = alloc::vec![0.0; first.len()];
    for p in points {
        if p.len() != c.len() {
            return Err(invalid("points differ in dimension"));
        }
        for (s, v) in c.iter_mut().zip(p) {
            *s += v;
        }
    }
    let n = points.len() as f64;
    Ok(c.into_iter().map(|s| s / n).collect())
}

/// Euclidean distance of every point to `center`.
pub fn centroid_scores(center: &[f64], points: &[Vec<f64>]) -> Vec<f64> {
    points
        .iter()
        .map(|p| libm::sqrt(p.iter().zip(center).map(|(a, b)| (a - b) * (a - b)).sum()))
        .collect()
}

/// Fits the centroid on normal training representations, flags test points
/// scoring above the `q` quantile of training scores.
pub fn anomaly_eval(train_normal: &[Vec<f64>], test: &[Vec<f64>], test_labels: &[bool], q: f64) -> Result<AnomalyMetrics> {
    if test.len() != test_labels.len() {
        return Err(invalid("one label per test point required"));
    }
    let center = centroid(train_normal)?;
    let threshold = quantile(&centroid_scores(&center, train_normal), q)?;
    let scores = centroid_scores(&center, test);
    let (mut tp, mut fp, mut fneg) = (0.0, 0.0, 0.0);
    for (&s, &l) in scores.iter().zip(test_labels) {
        match (s > threshold, l) {
            (true, true) => tp += 1.0,
            (true, false) => fp += 1.0,
            (false, true) => fneg += 1.0,
            (false, false) => {}
        }
    }
    let precision = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
    let recall = if tp + fneg > 0.0 { tp / (tp + fneg) } else { 0.0 };
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok(AnomalyMetrics {
        precision,
        recall,
        f1,
        auroc: auroc(&scores, test_labels)?,
        threshold,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn rank_sum_examples() {
        let s = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(auroc(&s, &[false, false, true, true]).unwrap(), 1.0);
        assert_eq!(auroc(&s, &[false, true, false, true]).unwrap(), 0.75);
        assert_eq!(auroc(&[1.0, 1.0], &[false, true]).unwrap(), 0.5);
        assert!(auroc(&s, &[false; 4]).is_err());
    }

    #[test]
    fn quantile_interpolates() {
        assert_eq!(quantile(&[1.0, 2.0, 3.0, 4.0, 5.0], 0.5).unwrap(), 3.0);
        assert!((quantile(&[0.0, 10.0], 0.95).unwrap() - 9.5).abs() < 1e-12);
    }

    #[test]
    fn centroid_point_scores_lowest() {
        let train = vec![vec![0.0, 0.0], vec![2.0, 0.0], vec![1.0, 1.0], vec![1.0, -1.0]];
        let test = vec![vec![1.0, 0.0], vec![5.0, 5.0], vec![1.2, 0.1]];
        let c = centroid(&train).unwrap();
        let s = centroid_scores(&c, &test);
        assert_eq!(s[0], 0.0);
        let m = anomaly_eval(&train, &test, &[false, true, false], 0.95).unwrap();
        assert_eq!(m.auroc, 1.0);
        assert_eq!(m.recall, 1.0);
        assert!(anomaly_eval(&[], &test, &[false, true, false], 0.95).is_err());
    }
}
