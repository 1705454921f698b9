use serde::{Deserialize, Serialize};

/// Gaussian predictive distribution at one query point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictiveDist {
    pub mean: f64,
    pub epistemic_var: f64,
    pub aleatoric_var: f64,
}

impl PredictiveDist {
    pub fn new(mean: f64, epistemic_var: f64, aleatoric_var: f64) -> Self {
        Self {
            mean,
            epistemic_var,
            aleatoric_var,
        }
    }

    pub fn total_var(&self) -> f64 {
        self.epistemic_var + self.aleatoric_var
    }

    pub fn total_std(&self) -> f64 {
        self.total_var().sqrt()
    }

    /// `mean -/+ k * total_std`
    pub fn band(&self, k: f64) -> (f64, f64) {
        let half = k * self.total_std();
        (self.mean - half, self.mean + half)
    }

    /// Maps a prediction made on standardized targets back to raw units.
    pub fn denormalize(&self, mean: f64, std: f64) -> Self {
        Self {
            mean: self.mean * std + mean,
            epistemic_var: self.epistemic_var * std * std,
            aleatoric_var: self.aleatoric_var * std * std,
        }
    }
}
