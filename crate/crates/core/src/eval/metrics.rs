//! Classification metrics.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub macro_f1: f64,
}

/// `k × k` counts, rows = truth, columns = prediction.
pub fn confusion(truth: &[usize], pred: &[usize], k: usize) -> Result<Vec<Vec<u64>>> {
    if truth.len() != pred.len() {
        return Err(invalid("truth and prediction lengths differ"));
    }
    let mut m = vec![vec![0u64; k]; k];
    for (&t, &p) in truth.iter().zip(pred) {
        if t >= k || p >= k {
            return Err(invalid("label out of range for the confusion matrix"));
        }
        m[t][p] += 1;
    }
    Ok(m)
}

fn check_square(conf: &[Vec<u64>]) -> Result<()> {
    if conf.is_empty() || conf.iter().any(|r| r.len() != conf.len()) {
        return Err(invalid("confusion matrix must be square and non-empty"));
    }
    Ok(())
}

/// Unweighted mean of per-class F1; a class with `P + R = 0` scores 0.
pub fn macro_f1(conf: &[Vec<u64>]) -> Result<f64> {
    check_square(conf)?;
    let k = conf.len();
    let mut total = 0.0;
    for c in 0..k {
        let tp = conf[c][c] as f64;
        let predicted: u64 = conf.iter().map(|r| r[c]).sum();
        let actual: u64 = conf[c].iter().sum();
        let p = if predicted > 0 { tp / predicted as f64 } else { 0.0 };
        let r = if actual > 0 { tp / actual as f64 } else { 0.0 };
        total += if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
    }
    Ok(total / k as f64)
}

pub fn accuracy(conf: &[Vec<u64>]) -> Result<f64> {
    check_square(conf)?;
    let n: u64 = conf.iter().flatten().sum();
    if n == 0 {
        return Err(invalid("accuracy of an empty confusion matrix"));
    }
    let hit: u64 = (0..conf.len()).map(|c| conf[c][c]).sum();
    Ok(hit as f64 / n as f64)
}

impl Metrics {
    pub fn from_predictions(truth: &[usize], pred: &[usize], k: usize) -> Result<Self> {
        let conf = confusion(truth, pred, k)?;
        Ok(Metrics {
            accuracy: accuracy(&conf)?,
            macro_f1: macro_f1(&conf)?,
        })
    }
}

/// Index of the largest entry; the first one on ties.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}
