//! Exact multivariate-Gaussian algebra: Bayes-rule products, the anchored MAP
//! map, the anchor (perturbation) distribution that makes randomised MAP
//! solutions exact posterior samples, and conjugate Bayesian linear
//! regression.
//!
//! With prior `N(mu_p, S_p)` and normalised likelihood `N(mu_l, S_l)` the
//! posterior precision is `S_l^-1 + S_p^-1`. Replacing the prior mean by a
//! random anchor `theta0` gives the MAP estimate
//! `A theta0 + (S_l^-1 + S_p^-1)^-1 S_l^-1 mu_l` with
//! `A = (S_l^-1 + S_p^-1)^-1 S_p^-1`, which is affine in the anchor.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg;

const SYMMETRY_TOL: f64 = 1e-12;
const PSD_TOL: f64 = 1e-9;

/// Multivariate normal with a dense covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianDist {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
}

impl GaussianDist {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        if cov.nrows() != cov.ncols() {
            return Err(Error::DimensionMismatch {
                context: "covariance must be square",
                expected: cov.nrows(),
                found: cov.ncols(),
            });
        }
        if mean.len() != cov.nrows() {
            return Err(Error::DimensionMismatch {
                context: "mean length vs covariance dimension",
                expected: cov.nrows(),
                found: mean.len(),
            });
        }
        if mean.iter().chain(cov.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("Gaussian parameters".into()));
        }
        let scale = linalg::max_abs(&cov);
        let asym = linalg::asymmetry(&cov);
        if asym > SYMMETRY_TOL * scale {
            return Err(Error::NotSymmetric {
                what: "covariance".into(),
                asymmetry: asym,
            });
        }
        if cov.nrows() > 0 {
            let ev = linalg::symmetric_eigenvalues(&cov);
            let (lo, hi) = (ev[0], ev[ev.len() - 1]);
            if lo < -PSD_TOL * hi.abs().max(f64::MIN_POSITIVE) {
                return Err(Error::NotPsd {
                    what: "covariance".into(),
                    min_eigenvalue: lo,
                });
            }
        }
        Ok(Self { mean, cov })
    }

    pub fn isotropic(mean: DVector<f64>, var: f64) -> Result<Self> {
        let n = mean.len();
        Self::new(mean, DMatrix::identity(n, n) * var)
    }

    pub fn diagonal(mean: DVector<f64>, var: &DVector<f64>) -> Result<Self> {
        Self::new(mean, DMatrix::from_diagonal(var))
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn into_parts(self) -> (DVector<f64>, DMatrix<f64>) {
        (self.mean, self.cov)
    }
}

/// Gaussian with diagonal covariance. Network priors have tens of thousands of
/// parameters, so they are never densified unless a caller asks for it.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagGaussian {
    pub mean: DVector<f64>,
    pub var: DVector<f64>,
}

impl DiagGaussian {
    pub fn new(mean: DVector<f64>, var: DVector<f64>) -> Result<Self> {
        if mean.len() != var.len() {
            return Err(Error::DimensionMismatch {
                context: "diagonal Gaussian mean vs variance",
                expected: var.len(),
                found: mean.len(),
            });
        }
        if let Some(v) = var.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::invalid(format!(
                "variance entry {v} must be finite and non-negative"
            )));
        }
        Ok(Self { mean, var })
    }

    pub fn zero_mean(var: DVector<f64>) -> Self {
        Self {
            mean: DVector::zeros(var.len()),
            var,
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// One draw using `rng`.
    pub fn sample_with<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        DVector::from_iterator(
            self.dim(),
            self.mean.iter().zip(self.var.iter()).map(|(m, v)| {
                let z: f64 = StandardNormal.sample(rng);
                m + v.sqrt() * z
            }),
        )
    }

    /// One draw, deterministic in `seed`.
    pub fn sample(&self, seed: u64) -> DVector<f64> {
        self.sample_with(&mut ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn to_dense(&self) -> Result<GaussianDist> {
        GaussianDist::diagonal(self.mean.clone(), &self.var)
    }
}

/// Observed linear-Gaussian model `y = features * w + eps`, `eps ~ N(0, noise_var)`.
#[derive(Debug, Clone)]
pub struct LinearDesign {
    features: DMatrix<f64>,
    targets: DVector<f64>,
    noise_var: f64,
}

impl LinearDesign {
    pub fn new(features: DMatrix<f64>, targets: DVector<f64>, noise_var: f64) -> Result<Self> {
        if features.nrows() != targets.len() {
            return Err(Error::DimensionMismatch {
                context: "design rows vs targets",
                expected: features.nrows(),
                found: targets.len(),
            });
        }
        if !(noise_var > 0.0 && noise_var.is_finite()) {
            return Err(Error::invalid(format!(
                "noise variance must be positive, got {noise_var}"
            )));
        }
        Ok(Self {
            features,
            targets,
            noise_var,
        })
    }

    pub fn features(&self) -> &DMatrix<f64> {
        &self.features
    }

    pub fn targets(&self) -> &DVector<f64> {
        &self.targets
    }

    pub fn noise_var(&self) -> f64 {
        self.noise_var
    }

    pub fn n_rows(&self) -> usize {
        self.features.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.features.ncols()
    }
}

fn check_same_dim(prior: &GaussianDist, like: &GaussianDist) -> Result<()> {
    if prior.dim() != like.dim() {
        return Err(Error::DimensionMismatch {
            context: "prior vs likelihood dimension",
            expected: prior.dim(),
            found: like.dim(),
        });
    }
    Ok(())
}

/// Shared pieces of the posterior computation.
struct PosteriorParts {
    prior_precision: DMatrix<f64>,
    post_cov: DMatrix<f64>,
    /// `S_l^-1 mu_l`
    like_term: DVector<f64>,
}

fn posterior_parts(prior: &GaussianDist, like: &GaussianDist) -> Result<PosteriorParts> {
    check_same_dim(prior, like)?;
    let prior_precision = linalg::spd_inverse(prior.cov(), "prior covariance")?;
    let like_precision = linalg::spd_inverse(like.cov(), "likelihood covariance")?;
    let post_cov = linalg::spd_inverse(&(&like_precision + &prior_precision), "posterior precision")?;
    let like_term = &like_precision * like.mean();
    Ok(PosteriorParts {
        prior_precision,
        post_cov,
        like_term,
    })
}

fn anchored_mean(parts: &PosteriorParts, anchor: &DVector<f64>) -> DVector<f64> {
    &parts.post_cov * (&parts.like_term + &parts.prior_precision * anchor)
}

/// Product of two Gaussian densities, renormalised.
pub fn gaussian_posterior(prior: &GaussianDist, like: &GaussianDist) -> Result<GaussianDist> {
    let parts = posterior_parts(prior, like)?;
    let mean = anchored_mean(&parts, prior.mean());
    GaussianDist::new(mean, parts.post_cov)
}

/// MAP estimate when the prior mean is replaced by `theta0`.
///
/// With `theta0 == prior.mean()` this is bitwise identical to the mean of
/// [`gaussian_posterior`].
pub fn map_with_anchor(prior: &GaussianDist, like: &GaussianDist, theta0: &DVector<f64>) -> Result<DVector<f64>> {
    if theta0.len() != prior.dim() {
        return Err(Error::DimensionMismatch {
            context: "anchor length",
            expected: prior.dim(),
            found: theta0.len(),
        });
    }
    let parts = posterior_parts(prior, like)?;
    Ok(anchored_mean(&parts, theta0))
}

/// Linear part `A = (S_l^-1 + S_p^-1)^-1 S_p^-1` of [`map_with_anchor`].
pub fn anchor_map_matrix(prior: &GaussianDist, like: &GaussianDist) -> Result<DMatrix<f64>> {
    let parts = posterior_parts(prior, like)?;
    Ok(&parts.post_cov * &parts.prior_precision)
}

/// Distribution of anchors under which [`map_with_anchor`] outputs exact
/// posterior samples: mean `mu_p`, covariance `S_p + S_p S_l^-1 S_p`.
///
/// The sandwich form coincides with `S_p + S_p^2 S_l^-1` whenever the two
/// covariances commute (for example both diagonal) and is the only choice that
/// gives `A S_0 A^T = S_post` when they do not.
pub fn anchor_distribution(prior: &GaussianDist, like: &GaussianDist) -> Result<GaussianDist> {
    check_same_dim(prior, like)?;
    let like_precision = linalg::spd_inverse(like.cov(), "likelihood covariance")?;
    let sp = prior.cov();
    let cov = linalg::symmetrize(&(sp + sp * &like_precision * sp));
    GaussianDist::new(prior.mean().clone(), cov)
}

/// Conjugate posterior over linear weights.
pub fn blr_fit(design: &LinearDesign, prior: &GaussianDist) -> Result<GaussianDist> {
    if prior.dim() != design.n_features() {
        return Err(Error::DimensionMismatch {
            context: "prior dimension vs feature columns",
            expected: design.n_features(),
            found: prior.dim(),
        });
    }
    if design.n_rows() == 0 {
        return Ok(prior.clone());
    }
    let phi = design.features();
    let noise = design.noise_var();
    let prior_precision = linalg::spd_inverse(prior.cov(), "prior covariance")?;
    let precision = phi.transpose() * phi / noise + &prior_precision;
    let cov = linalg::spd_inverse(&precision, "posterior precision")?;
    let mean = &cov * (phi.transpose() * design.targets() / noise + &prior_precision * prior.mean());
    GaussianDist::new(mean, cov)
}

/// Closed-form minimiser of the anchored loss for a linear model,
/// `(Phi^T Phi + Gamma)^-1 (Phi^T y + Gamma theta0)`.
pub fn blr_anchored_map(design: &LinearDesign, gamma: &DVector<f64>, theta0: &DVector<f64>) -> Result<DVector<f64>> {
    let p = design.n_features();
    if gamma.len() != p {
        return Err(Error::DimensionMismatch {
            context: "regulariser length",
            expected: p,
            found: gamma.len(),
        });
    }
    if theta0.len() != p {
        return Err(Error::DimensionMismatch {
            context: "anchor length",
            expected: p,
            found: theta0.len(),
        });
    }
    if gamma.iter().any(|g| !(*g > 0.0)) {
        return Err(Error::invalid("regulariser entries must be positive"));
    }
    let phi = design.features();
    let mut normal = phi.transpose() * phi;
    for k in 0..p {
        normal[(k, k)] += gamma[k];
    }
    let rhs = phi.transpose() * design.targets() + gamma.component_mul(theta0);
    linalg::spd_solve(&normal, &rhs, "normal-equation matrix")
}

/// `n` draws (one per row), deterministic in `seed`.
pub fn sample_gaussian(dist: &GaussianDist, seed: u64, n: usize) -> Result<DMatrix<f64>> {
    if n == 0 {
        return Err(Error::invalid("sample count must be at least 1"));
    }
    let p = dist.dim();
    let factor = match nalgebra::Cholesky::new(dist.cov().clone()) {
        Some(c) => c.l(),
        None => {
            let eig = SymmetricEigen::new(linalg::symmetrize(dist.cov()));
            let hi = eig.eigenvalues.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
            let lo = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
            if lo < -PSD_TOL * hi.max(f64::MIN_POSITIVE) {
                return Err(Error::NotPsd {
                    what: "sampling covariance".into(),
                    min_eigenvalue: lo,
                });
            }
            let sqrt_ev = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
            &eig.eigenvectors * DMatrix::from_diagonal(&sqrt_ev)
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = DMatrix::zeros(n, p);
    let mut z = DVector::zeros(p);
    for row in 0..n {
        for v in z.iter_mut() {
            *v = StandardNormal.sample(&mut rng);
        }
        let x = dist.mean() + &factor * &z;
        out.set_row(row, &x.transpose());
    }
    Ok(out)
}

/// Column means and unbiased covariance of row samples.
pub fn sample_moments(samples: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = samples.nrows();
    let mean = DVector::from_iterator(samples.ncols(), samples.column_iter().map(|c| c.mean()));
    let mut centered = samples.clone();
    for mut row in centered.row_iter_mut() {
        row -= mean.transpose();
    }
    let denom = if n > 1 { (n - 1) as f64 } else { 1.0 };
    let cov = centered.transpose() * &centered / denom;
    (mean, cov)
}
