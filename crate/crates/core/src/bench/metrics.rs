use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::predictive::PredictiveDist;

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::DimensionMismatch {
            context: "predictions vs targets",
            expected: b,
            found: a,
        });
    }
    if a == 0 {
        return Err(Error::invalid("no points to score"));
    }
    Ok(())
}

pub fn rmse(predictions: &[f64], targets: &[f64]) -> Result<f64> {
    check_lengths(predictions.len(), targets.len())?;
    let mse = predictions
        .iter()
        .zip(targets)
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / targets.len() as f64;
    Ok(mse.sqrt())
}

/// Mean Gaussian negative log-likelihood using each point's total variance.
pub fn gaussian_nll(dists: &[PredictiveDist], targets: &[f64]) -> Result<f64> {
    check_lengths(dists.len(), targets.len())?;
    let mut total = 0.0;
    for (d, t) in dists.iter().zip(targets) {
        let var = d.total_var();
        if !(var > 0.0) {
            return Err(Error::invalid(format!(
                "predictive variance must be positive, got {var}"
            )));
        }
        total += 0.5 * (2.0 * PI * var).ln() + (t - d.mean) * (t - d.mean) / (2.0 * var);
    }
    Ok(total / targets.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitMetrics {
    pub rmse: f64,
    pub nll: f64,
}

/// Per-split metrics with mean and standard error across splits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub per_split: Vec<SplitMetrics>,
    pub rmse_mean: f64,
    pub rmse_stderr: f64,
    pub nll_mean: f64,
    pub nll_stderr: f64,
}

fn mean_stderr(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

impl MetricReport {
    pub fn from_splits(per_split: Vec<SplitMetrics>) -> Self {
        let rmses: Vec<f64> = per_split.iter().map(|s| s.rmse).collect();
        let nlls: Vec<f64> = per_split.iter().map(|s| s.nll).collect();
        let (rmse_mean, rmse_stderr) = mean_stderr(&rmses);
        let (nll_mean, nll_stderr) = mean_stderr(&nlls);
        Self {
            per_split,
            rmse_mean,
            rmse_stderr,
            nll_mean,
            nll_stderr,
        }
    }
}
