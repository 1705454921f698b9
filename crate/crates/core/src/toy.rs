//! Built-in one-dimensional toy problem: two clusters of noisy `sin(2x)`
//! observations with a gap between them, an anchored ensemble and the
//! matching infinite-width GP evaluated on a shared grid.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::ensemble::{build_ensemble, MemberSummary, PriorSpec};
use crate::error::{Error, Result};
use crate::gp::{gp_fit, KernelSpec};
use crate::network::{Activation, Batch, NetworkShape, TrainConfig};
use crate::predictive::PredictiveDist;

pub const TOY_NOISE_STD: f64 = 0.05;
pub const TOY_NOISE_VAR: f64 = TOY_NOISE_STD * TOY_NOISE_STD;
const CLUSTER_SIZE: usize = 6;

fn linspace(a: f64, b: f64, n: usize) -> impl Iterator<Item = f64> {
    (0..n).map(move |i| {
        if n == 1 {
            a
        } else {
            a + (b - a) * i as f64 / (n - 1) as f64
        }
    })
}

/// Twelve points, six evenly spaced on each of `[-2, -0.5]` and `[0.7, 2]`.
pub fn toy_dataset(seed: u64) -> (DMatrix<f64>, DVector<f64>) {
    let xs: Vec<f64> = linspace(-2.0, -0.5, CLUSTER_SIZE)
        .chain(linspace(0.7, 2.0, CLUSTER_SIZE))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, TOY_NOISE_STD).expect("valid normal");
    let y = DVector::from_iterator(xs.len(), xs.iter().map(|x| (2.0 * x).sin() + noise.sample(&mut rng)));
    (DMatrix::from_column_slice(xs.len(), 1, &xs), y)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyConfig {
    pub activation: Activation,
    pub hidden_width: usize,
    pub members: usize,
    /// `None` picks the activation's default prior, see [`toy_prior`].
    pub prior: Option<PriorSpec>,
    pub rbf_width_sq: f64,
    pub train: TrainConfig,
    pub grid_points: usize,
    /// `None` uses 4, or 20 for rbf so the grid edge sits at ten times the
    /// data radius.
    pub grid_half_width: Option<f64>,
    pub seed: u64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            activation: Activation::Relu,
            hidden_width: 100,
            members: 10,
            prior: None,
            rbf_width_sq: NetworkShape::DEFAULT_RBF_WIDTH_SQ,
            train: TrainConfig::default(),
            grid_points: 201,
            grid_half_width: None,
            seed: 0,
        }
    }
}

/// Unit variances everywhere, except that rbf networks get a small output
/// bias variance so their far-field prediction is close to zero.
pub fn toy_prior(activation: Activation) -> PriorSpec {
    match activation {
        Activation::Rbf => PriorSpec {
            output_bias_var: 0.001,
            ..PriorSpec::default()
        },
        _ => PriorSpec::default(),
    }
}

impl ToyConfig {
    pub fn prior_spec(&self) -> PriorSpec {
        self.prior.unwrap_or_else(|| toy_prior(self.activation))
    }

    pub fn half_width(&self) -> f64 {
        self.grid_half_width
            .unwrap_or(if self.activation == Activation::Rbf { 20.0 } else { 4.0 })
    }

    pub fn validate(&self) -> Result<()> {
        if self.activation == Activation::Linear {
            return Err(Error::invalid("the toy problem needs relu, erf or rbf"));
        }
        if self.hidden_width == 0 || self.members == 0 {
            return Err(Error::invalid("hidden width and ensemble size must be positive"));
        }
        if self.grid_points < 2 {
            return Err(Error::invalid("the grid needs at least two points"));
        }
        let hw = self.half_width();
        if !(hw > 0.0 && hw.is_finite()) {
            return Err(Error::invalid(format!("grid half-width must be positive, got {hw}")));
        }
        self.prior_spec().validate()?;
        self.train.validate()
    }
}

#[derive(Debug, Clone)]
pub struct ToyCurves {
    pub x_train: DMatrix<f64>,
    pub y_train: DVector<f64>,
    pub grid: Vec<f64>,
    pub ensemble: Vec<PredictiveDist>,
    pub gp: Vec<PredictiveDist>,
    /// Prior variance `k(x, x)` of the GP at each grid point.
    pub gp_prior_var: Vec<f64>,
    pub training: Vec<MemberSummary>,
}

pub fn run_toy(config: &ToyConfig, threads: Option<usize>) -> Result<ToyCurves> {
    config.validate()?;
    let (x, y) = toy_dataset(config.seed);
    let shape = NetworkShape::with_rbf_width(1, config.hidden_width, config.activation, config.rbf_width_sq)?;
    let prior = config.prior_spec();

    // anchors use a seed stream disjoint from the data noise
    let mut ensemble = build_ensemble(
        config.members,
        shape,
        &prior,
        TOY_NOISE_VAR,
        config.seed.wrapping_add(1),
    )?;
    let training = ensemble.train(Batch::new(&x, &y)?, &config.train, threads)?;

    let hw = config.half_width();
    let grid: Vec<f64> = linspace(-hw, hw, config.grid_points).collect();
    let xq = DMatrix::from_column_slice(grid.len(), 1, &grid);
    let ens = ensemble.predict(&xq)?;

    let kernel = KernelSpec::for_network(&shape, &prior)?;
    let post = gp_fit(&x, &y, &kernel, TOY_NOISE_VAR)?;
    let gp = post.predict(&xq)?;
    let gp_prior_var = grid
        .iter()
        .map(|g| crate::gp::kernel_eval(&kernel, &[*g], &[*g]))
        .collect::<Result<Vec<_>>>()?;

    Ok(ToyCurves {
        x_train: x,
        y_train: y,
        grid,
        ensemble: ens,
        gp,
        gp_prior_var,
        training,
    })
}

impl ToyCurves {
    /// Grid-aligned curves; bands are `mean -/+ 2 * total_std`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "x",
            "ens_mean",
            "ens_lower",
            "ens_upper",
            "ens_epistemic_var",
            "gp_mean",
            "gp_lower",
            "gp_upper",
            "gp_epistemic_var",
        ])?;
        for (i, x) in self.grid.iter().enumerate() {
            let (e, g) = (&self.ensemble[i], &self.gp[i]);
            let (el, eu) = e.band(2.0);
            let (gl, gu) = g.band(2.0);
            let row = [*x, e.mean, el, eu, e.epistemic_var, g.mean, gl, gu, g.epistemic_var];
            out.write_record(row.iter().map(|v| format!("{v:e}")))?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn write_training_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["x", "y"])?;
        for (x, y) in self.x_train.iter().zip(self.y_train.iter()) {
            out.write_record([format!("{x:e}"), format!("{y:e}")])?;
        }
        out.flush()?;
        Ok(())
    }

    /// Fraction of grid points where the GP mean lies inside the ensemble's
    /// `mean -/+ k * total_std` band.
    pub fn band_coverage(&self, k: f64) -> f64 {
        let inside = self
            .ensemble
            .iter()
            .zip(&self.gp)
            .filter(|(e, g)| {
                let (lo, hi) = e.band(k);
                (lo..=hi).contains(&g.mean)
            })
            .count();
        inside as f64 / self.grid.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dataset_shape() {
        let (x, y) = toy_dataset(3);
        assert_eq!((x.nrows(), y.len()), (12, 12));
        assert!(x.iter().all(|v| (-2.0..=-0.5).contains(v) || (0.7..=2.0).contains(v)));
        assert!(x
            .iter()
            .zip(y.iter())
            .all(|(x, y)| (y - (2.0 * x).sin()).abs() < 5.0 * TOY_NOISE_STD));
        assert_eq!(toy_dataset(3), (x, y));
    }

    #[test]
    fn single_member_has_no_epistemic_band() {
        let cfg = ToyConfig {
            members: 1,
            hidden_width: 10,
            grid_points: 11,
            train: TrainConfig {
                epochs: 50,
                ..TrainConfig::default()
            },
            ..ToyConfig::default()
        };
        let c = run_toy(&cfg, Some(1)).unwrap();
        for d in &c.ensemble {
            assert_eq!(d.epistemic_var, 0.0);
            assert_eq!(d.total_var(), TOY_NOISE_VAR);
        }
    }

    #[test]
    fn csv_is_reproducible() {
        let cfg = ToyConfig {
            members: 3,
            hidden_width: 10,
            grid_points: 5,
            activation: Activation::Erf,
            train: TrainConfig {
                epochs: 30,
                ..TrainConfig::default()
            },
            ..ToyConfig::default()
        };
        let render = || {
            let mut buf = Vec::new();
            run_toy(&cfg, None).unwrap().write_csv(&mut buf).unwrap();
            buf
        };
        let a = render();
        assert_eq!(a, render());
        assert_eq!(String::from_utf8(a).unwrap().lines().count(), 6);
    }
}
