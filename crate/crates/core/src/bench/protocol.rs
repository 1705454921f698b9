use std::time::Instant;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::dataset::{split_indices, NormStats, RegressionDataset};
use super::metrics::{gaussian_nll, rmse, MetricReport, SplitMetrics};
use crate::ensemble::{build_ensemble, PriorSpec};
use crate::error::{Error, Result};
use crate::network::{Activation, Batch, NetworkShape, TrainConfig};

/// Repeated random-split evaluation of an anchored ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchConfig {
    pub splits: usize,
    pub train_fraction: f64,
    pub members: usize,
    pub hidden_width: usize,
    pub activation: Activation,
    pub prior: PriorSpec,
    pub train: TrainConfig,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            splits: 5,
            train_fraction: 0.9,
            members: 5,
            hidden_width: 50,
            activation: Activation::Relu,
            prior: PriorSpec::default(),
            train: TrainConfig {
                epochs: 2000,
                ..TrainConfig::default()
            },
            seed: 0,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.splits == 0 || self.members == 0 || self.hidden_width == 0 {
            return Err(Error::invalid("splits, members and hidden width must be positive"));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::invalid(format!(
                "train fraction must be in (0, 1), got {}",
                self.train_fraction
            )));
        }
        self.prior.validate()?;
        self.train.validate()
    }
}

/// One split's outcome; metrics are in the dataset's raw target units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitRecord {
    pub dataset: String,
    pub split: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub rmse: f64,
    pub nll: f64,
}

#[derive(Debug, Clone)]
pub struct BenchOutcome {
    pub records: Vec<SplitRecord>,
    pub report: MetricReport,
    /// Seconds per split. Kept apart from the records so that reports are
    /// reproducible byte for byte.
    pub wall_seconds: Vec<f64>,
}

fn split_seed(base: u64, split: usize) -> u64 {
    base.wrapping_add(1_000_003 * split as u64)
}

/// Runs every split: standardize with training statistics, train the
/// ensemble on standardized data, score de-normalized predictions.
pub fn run_benchmark(data: &RegressionDataset, config: &BenchConfig, threads: Option<usize>) -> Result<BenchOutcome> {
    config.validate()?;
    if data.is_normalized() {
        return Err(Error::invalid("benchmark expects raw (unnormalized) data"));
    }
    let mut records = Vec::with_capacity(config.splits);
    let mut wall_seconds = Vec::with_capacity(config.splits);
    for s in 0..config.splits {
        let start = Instant::now();
        let seed = split_seed(config.seed, s);
        let (train_idx, test_idx) = split_indices(data.len(), config.train_fraction, seed)?;
        let (train_raw, test_raw) = (data.select(&train_idx), data.select(&test_idx));
        let stats = NormStats::fit(&train_raw);
        let train = train_raw.normalized_with(&stats)?;
        let test = test_raw.normalized_with(&stats)?;

        let shape = NetworkShape::new(data.n_features(), config.hidden_width, config.activation)?;
        let mut ensemble = build_ensemble(config.members, shape, &config.prior, data.sigma_eps_sq, seed)?;
        ensemble.train(Batch::new(&train.x, &train.y)?, &config.train, threads)?;
        let dists: Vec<_> = ensemble
            .predict(&test.x)?
            .iter()
            .map(|d| d.denormalize(stats.y_mean, stats.y_std))
            .collect();
        let means: Vec<f64> = dists.iter().map(|d| d.mean).collect();
        let targets: &DVector<f64> = &test_raw.y;
        records.push(SplitRecord {
            dataset: data.name.clone(),
            split: s,
            n_train: train.len(),
            n_test: test.len(),
            rmse: rmse(&means, targets.as_slice())?,
            nll: gaussian_nll(&dists, targets.as_slice())?,
        });
        wall_seconds.push(start.elapsed().as_secs_f64());
    }
    let report = MetricReport::from_splits(
        records
            .iter()
            .map(|r| SplitMetrics {
                rmse: r.rmse,
                nll: r.nll,
            })
            .collect(),
    );
    Ok(BenchOutcome {
        records,
        report,
        wall_seconds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tiny() -> RegressionDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = DMatrix::from_fn(40, 2, |_, _| rng.gen_range(-1.0..1.0));
        let y = DVector::from_fn(40, |i, _| {
            3.0 * x[(i, 0)] - x[(i, 1)] + 0.1 * rng.gen_range(-1.0..1.0) + 10.0
        });
        RegressionDataset::new("tiny", x, y, 0.01).unwrap()
    }

    #[test]
    fn deterministic_and_well_formed() {
        let cfg = BenchConfig {
            splits: 2,
            members: 2,
            hidden_width: 8,
            train: TrainConfig {
                epochs: 200,
                ..TrainConfig::default()
            },
            ..BenchConfig::default()
        };
        let a = run_benchmark(&tiny(), &cfg, Some(1)).unwrap();
        let b = run_benchmark(&tiny(), &cfg, Some(1)).unwrap();
        assert_eq!(a.records, b.records);
        assert_eq!(a.records.len(), 2);
        assert_eq!((a.records[0].n_train, a.records[0].n_test), (36, 4));
        assert!(a.report.rmse_mean.is_finite() && a.report.nll_mean.is_finite());
    }

    #[test]
    fn rejects_normalized_input() {
        let d = tiny().normalize().unwrap();
        assert!(run_benchmark(&d, &BenchConfig::default(), None).is_err());
    }
}
