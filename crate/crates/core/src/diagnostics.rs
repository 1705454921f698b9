//! Self-checks behind the `oracle-check`, `gradcheck` and `theorem1`
//! subcommands.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bench::{is_decreasing, synthetic_dataset, theorem1_check, Theorem1Row};
use crate::ensemble::{materialize_prior, PriorSpec};
use crate::error::{Error, Result};
use crate::gaussian::{
    anchor_distribution, anchor_map_matrix, gaussian_posterior, sample_gaussian, sample_moments, GaussianDist,
};
use crate::linalg::rel_frobenius;
use crate::network::{loss_and_grad, Activation, Batch, NetworkParams, NetworkShape};

fn random_spd(rng: &mut ChaCha8Rng, dim: usize, scale: f64) -> DMatrix<f64> {
    let a = DMatrix::from_fn(dim, dim, |_, _| rng.sample::<f64, _>(StandardNormal));
    (&a * a.transpose() / dim as f64 + DMatrix::identity(dim, dim) * 0.1) * scale
}

fn random_vector(rng: &mut ChaCha8Rng, dim: usize) -> DVector<f64> {
    DVector::from_fn(dim, |_, _| rng.sample(StandardNormal))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnchorMode {
    /// Anchors from the exact anchor distribution.
    Exact,
    /// Anchors from the prior; underestimates the posterior covariance.
    Prior,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OracleConfig {
    pub pairs: usize,
    pub max_dim: usize,
    pub identity_tol: f64,
    pub samples: usize,
    pub mc_dim: usize,
    pub mc_tol: f64,
    pub anchor_mode: AnchorMode,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            pairs: 100,
            max_dim: 5,
            identity_tol: 1e-8,
            samples: 200_000,
            mc_dim: 3,
            mc_tol: 0.02,
            anchor_mode: AnchorMode::Exact,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub anchor_mode: AnchorMode,
    pub identity_pairs: usize,
    /// Largest `||A S_0 A^T - S_post||_F / ||S_post||_F` over the pairs.
    pub identity_max_error: f64,
    pub identity_passed: bool,
    pub mc_samples: usize,
    /// Relative Frobenius error of the sample covariance of anchored MAP
    /// estimates against the posterior covariance.
    pub mc_cov_error: f64,
    /// `trace(sample cov) / trace(S_post)`; below 1 means underestimation.
    pub mc_variance_ratio: f64,
    pub mc_mean_error: f64,
    pub mc_passed: bool,
    pub passed: bool,
}

/// Analytic and Monte-Carlo consistency of anchored MAP sampling for
/// Gaussian prior/likelihood pairs.
pub fn run_oracle_suite(config: &OracleConfig, seed: u64) -> Result<OracleReport> {
    if config.pairs == 0 || config.max_dim == 0 || config.mc_dim == 0 || config.samples < 2 {
        return Err(Error::invalid("oracle suite sizes must be positive (samples >= 2)"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut identity_max_error: f64 = 0.0;
    for i in 0..config.pairs {
        let dim = 1 + i % config.max_dim;
        let prior = GaussianDist::new(random_vector(&mut rng, dim), random_spd(&mut rng, dim, 1.0))?;
        let like = GaussianDist::new(random_vector(&mut rng, dim), random_spd(&mut rng, dim, 1.0))?;
        let post = gaussian_posterior(&prior, &like)?;
        let a = anchor_map_matrix(&prior, &like)?;
        let s0 = anchor_distribution(&prior, &like)?;
        let implied = &a * s0.cov() * a.transpose();
        identity_max_error = identity_max_error.max(rel_frobenius(&implied, post.cov()));
    }

    // likelihood-dominated pair: the prior is ten times broader
    let dim = config.mc_dim;
    let prior = GaussianDist::new(random_vector(&mut rng, dim), random_spd(&mut rng, dim, 10.0))?;
    let like = GaussianDist::new(random_vector(&mut rng, dim), random_spd(&mut rng, dim, 0.5))?;
    let post = gaussian_posterior(&prior, &like)?;
    let a = anchor_map_matrix(&prior, &like)?;
    let offset = crate::gaussian::map_with_anchor(&prior, &like, &DVector::zeros(dim))?;
    let anchors = match config.anchor_mode {
        AnchorMode::Exact => anchor_distribution(&prior, &like)?,
        AnchorMode::Prior => prior.clone(),
    };
    let draws = sample_gaussian(&anchors, rng.gen(), config.samples)?;
    let mut maps = draws * a.transpose();
    for mut row in maps.row_iter_mut() {
        row += offset.transpose();
    }
    let (mean, cov) = sample_moments(&maps);
    let mc_cov_error = rel_frobenius(&cov, post.cov());
    let mc_mean_error = (&mean - post.mean()).norm() / post.mean().norm().max(post.cov().trace().sqrt());

    let identity_passed = identity_max_error < config.identity_tol;
    let mc_passed = mc_cov_error < config.mc_tol && mc_mean_error < config.mc_tol;
    Ok(OracleReport {
        anchor_mode: config.anchor_mode,
        identity_pairs: config.pairs,
        identity_max_error,
        identity_passed,
        mc_samples: config.samples,
        mc_cov_error,
        mc_variance_ratio: cov.trace() / post.cov().trace(),
        mc_mean_error,
        mc_passed,
        passed: identity_passed && mc_passed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GradcheckConfig {
    pub instances: usize,
    pub step: f64,
    pub tol: f64,
    pub activations: Vec<Activation>,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            instances: 20,
            step: 1e-5,
            tol: 1e-5,
            activations: vec![Activation::Relu, Activation::Erf, Activation::Rbf],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckRow {
    pub activation: Activation,
    pub instances: usize,
    /// Largest `||g - g_fd|| / max(||g||, ||g_fd||)` over the instances.
    pub max_rel_error: f64,
    pub passed: bool,
}

/// Analytic gradient against central finite differences on random small
/// networks, data, anchors and regularisers.
pub fn run_gradcheck(config: &GradcheckConfig, seed: u64) -> Result<Vec<GradcheckRow>> {
    if !(config.step > 0.0) {
        return Err(Error::invalid("finite-difference step must be positive"));
    }
    let mut rows = Vec::new();
    for (a_idx, &activation) in config.activations.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(a_idx as u64));
        let mut worst: f64 = 0.0;
        for _ in 0..config.instances {
            let d = rng.gen_range(1..=3);
            let h = if activation == Activation::Linear {
                d
            } else {
                rng.gen_range(2..=6)
            };
            let n = rng.gen_range(1..=8);
            let width = rng.gen_range(0.5..2.0);
            let shape = NetworkShape::with_rbf_width(d, h, activation, width)?;
            let p = shape.num_params();
            let params = NetworkParams::new(shape, random_vector(&mut rng, p))?;
            let anchor = random_vector(&mut rng, p);
            let gamma = DVector::from_fn(p, |_, _| rng.gen_range(0.1..2.0));
            let x = DMatrix::from_fn(n, d, |_, _| rng.sample::<f64, _>(StandardNormal));
            let y = random_vector(&mut rng, n);
            let batch = Batch::new(&x, &y)?;

            let (_, g) = loss_and_grad(&params, &anchor, &gamma, batch)?;
            let mut fd = DVector::zeros(p);
            let mut probe = params.clone();
            for k in 0..p {
                let base = params.theta()[k];
                probe.theta_mut()[k] = base + config.step;
                let up = loss_and_grad(&probe, &anchor, &gamma, batch)?.0;
                probe.theta_mut()[k] = base - config.step;
                let down = loss_and_grad(&probe, &anchor, &gamma, batch)?.0;
                probe.theta_mut()[k] = base;
                fd[k] = (up - down) / (2.0 * config.step);
            }
            let scale = g.norm().max(fd.norm()).max(f64::MIN_POSITIVE);
            worst = worst.max((&g - &fd).norm() / scale);
        }
        rows.push(GradcheckRow {
            activation,
            instances: config.instances,
            max_rel_error: worst,
            passed: worst < config.tol,
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Theorem1Config {
    pub widths: Vec<usize>,
    pub points: usize,
    pub input_dim: usize,
    pub noise_var: f64,
    pub seeds: usize,
    pub activations: Vec<Activation>,
    pub prior: PriorSpec,
}

impl Default for Theorem1Config {
    fn default() -> Self {
        Self {
            widths: vec![10, 100, 1000],
            points: 200,
            input_dim: 1,
            noise_var: 0.1,
            seeds: 5,
            activations: vec![Activation::Relu, Activation::Erf],
            prior: PriorSpec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Theorem1Run {
    pub activation: Activation,
    pub seed: u64,
    pub rows: Vec<Theorem1Row>,
    pub decreasing: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Theorem1Summary {
    pub runs: Vec<Theorem1Run>,
    /// Per activation: strictly more than half of the seeds decreasing.
    pub passed: bool,
}

pub fn run_theorem1(config: &Theorem1Config, seed: u64) -> Result<Theorem1Summary> {
    if config.widths.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid("widths must be strictly increasing"));
    }
    if config.seeds == 0 {
        return Err(Error::invalid("at least one seed is needed"));
    }
    let mut runs = Vec::new();
    let mut passed = true;
    for &activation in &config.activations {
        let mut wins = 0;
        for s in 0..config.seeds as u64 {
            let run_seed = seed.wrapping_add(s);
            let data = synthetic_dataset(config.points, config.input_dim, config.noise_var, run_seed)?;
            let rows = theorem1_check(&data, activation, &config.widths, &config.prior, run_seed)?;
            let decreasing = is_decreasing(&rows);
            wins += decreasing as usize;
            runs.push(Theorem1Run {
                activation,
                seed: run_seed,
                rows,
                decreasing,
            });
        }
        passed &= 2 * wins > config.seeds;
    }
    Ok(Theorem1Summary { runs, passed })
}

/// Draws per independently seeded chunk in [`prior_output_covariance`].
const COVARIANCE_CHUNK: usize = 1000;

/// Sample covariance of the network output at the rows of `x` over `draws`
/// independent parameter draws from the prior.
///
/// Draws are generated in fixed chunks, each with its own ChaCha stream, so
/// the result does not depend on how many threads run them.
pub fn prior_output_covariance(
    shape: &NetworkShape,
    spec: &PriorSpec,
    x: &DMatrix<f64>,
    draws: usize,
    seed: u64,
) -> Result<DMatrix<f64>> {
    if draws < 2 {
        return Err(Error::invalid("need at least two draws"));
    }
    let prior = materialize_prior(shape, spec)?;
    let sd = prior.var.map(f64::sqrt);
    let q = x.nrows();
    let chunks = draws.div_ceil(COVARIANCE_CHUNK);
    let partial = (0..chunks)
        .into_par_iter()
        .map(|c| -> Result<(DVector<f64>, DMatrix<f64>)> {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c as u64);
            let mut params = NetworkParams::zeros(*shape);
            let (mut sum, mut outer) = (DVector::zeros(q), DMatrix::zeros(q, q));
            for _ in c * COVARIANCE_CHUNK..draws.min((c + 1) * COVARIANCE_CHUNK) {
                // the prior is zero-mean
                for (t, s) in params.theta_mut().iter_mut().zip(sd.iter()) {
                    *t = s * rng.sample::<f64, _>(StandardNormal);
                }
                let f = params.forward_batch(x)?;
                sum += &f;
                outer.ger(1.0, &f, &f, 1.0);
            }
            Ok((sum, outer))
        })
        .collect::<Result<Vec<_>>>()?;
    let (mut sum, mut outer) = (DVector::zeros(q), DMatrix::zeros(q, q));
    for (s, o) in partial {
        sum += s;
        outer += o;
    }
    let n = draws as f64;
    let mean = sum / n;
    Ok((outer - &mean * mean.transpose() * n) / (n - 1.0))
}

/// `s_ob^2 + (s_out^2 / H) sum_j h_j(x) h_j(x')` for one first layer drawn
/// from the prior: the output-layer covariance conditional on that layer.
pub fn empirical_feature_kernel(
    shape: &NetworkShape,
    spec: &PriorSpec,
    x: &DMatrix<f64>,
    seed: u64,
) -> Result<DMatrix<f64>> {
    let prior = materialize_prior(shape, spec)?;
    let h = NetworkParams::new(*shape, prior.sample(seed))?.hidden_activations(x)?;
    let scale = spec.output_layer_var_base / shape.hidden_width as f64;
    Ok((&h * h.transpose()) * scale + DMatrix::from_element(x.nrows(), x.nrows(), spec.output_bias_var))
}
