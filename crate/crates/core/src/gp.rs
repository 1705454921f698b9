//! Exact GP regression with the infinite-width covariance functions of the
//! single-hidden-layer networks in [`crate::network`].
//!
//! For a network `f(x) = sum_j v_j h_j(x) + c` with `v_j ~ N(0, s/H)` and
//! `c ~ N(0, s_c)`, the output covariance is `s_c + s * E[h(x) h(x')]` at any
//! width, where the expectation is over one hidden unit's prior:
//!
//! * relu: order-1 arc-cosine kernel on `(sigma_b, sigma_w x)`;
//! * erf: the arcsine kernel on `(1, x)` with `diag(sigma_b^2, sigma_w^2 I)`;
//! * rbf: Gaussian bumps of squared width `g` with centres `N(0, u I)`, which
//!   gives `(g / m)^(D/2) exp(-|x|^2 / 2m) exp(-|x - x'|^2 / 2s) exp(-|x'|^2 / 2m)`
//!   with `m = 2u + g` and `s = 2g + g^2 / u`. Unlike the squared-exponential
//!   kernel it decays to the output-bias variance far from the origin.

use std::f64::consts::PI;
use std::str::FromStr;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::ensemble::PriorSpec;
use crate::error::{Error, Result};
use crate::linalg;
use crate::network::{Activation, NetworkShape};
use crate::predictive::PredictiveDist;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    ReluArccos,
    Erf,
    RbfFinite,
}

impl FromStr for KernelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" | "relu_arccos" => Ok(KernelKind::ReluArccos),
            "erf" => Ok(KernelKind::Erf),
            "rbf" | "rbf_finite" => Ok(KernelKind::RbfFinite),
            other => Err(Error::invalid(format!("unknown kernel `{other}`"))),
        }
    }
}

/// Prior hyperparameters of the network the kernel describes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelHyper {
    pub weight_var: f64,
    pub bias_var: f64,
    pub output_var: f64,
    pub output_bias_var: f64,
    pub center_var: f64,
    pub rbf_width_sq: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub kind: KernelKind,
    pub hyper: KernelHyper,
}

impl KernelSpec {
    /// Kernel of an infinitely wide network with the given prior.
    pub fn for_network(shape: &NetworkShape, prior: &PriorSpec) -> Result<Self> {
        let kind = match shape.activation {
            Activation::Relu => KernelKind::ReluArccos,
            Activation::Erf => KernelKind::Erf,
            Activation::Rbf => KernelKind::RbfFinite,
            Activation::Linear => return Err(Error::invalid("the linear test shape has no network kernel")),
        };
        let spec = Self {
            kind,
            hyper: KernelHyper {
                weight_var: prior.first_layer_var,
                bias_var: prior.bias_var,
                output_var: prior.output_layer_var_base,
                output_bias_var: prior.output_bias_var,
                center_var: prior.center_var,
                rbf_width_sq: shape.rbf_width_sq,
            },
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Bias variances may be zero; everything else must be positive.
    pub fn validate(&self) -> Result<()> {
        let h = &self.hyper;
        let positive = [
            ("weight_var", h.weight_var),
            ("output_var", h.output_var),
            ("center_var", h.center_var),
            ("rbf_width_sq", h.rbf_width_sq),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("kernel {name} must be positive, got {v}")));
            }
        }
        for (name, v) in [("bias_var", h.bias_var), ("output_bias_var", h.output_bias_var)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("kernel {name} must be non-negative, got {v}")));
            }
        }
        Ok(())
    }

    /// `E[h(x) h(x')]` for one hidden unit drawn from the prior.
    pub fn unit_covariance(&self, x: &[f64], x2: &[f64]) -> Result<f64> {
        if x.len() != x2.len() {
            return Err(Error::DimensionMismatch {
                context: "kernel inputs",
                expected: x.len(),
                found: x2.len(),
            });
        }
        let h = &self.hyper;
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).sum::<f64>();
        Ok(match self.kind {
            KernelKind::ReluArccos => {
                let kxx = h.bias_var + h.weight_var * dot(x, x);
                let kyy = h.bias_var + h.weight_var * dot(x2, x2);
                let kxy = h.bias_var + h.weight_var * dot(x, x2);
                let norms = (kxx * kyy).sqrt();
                if norms == 0.0 {
                    0.0
                } else {
                    let cos = (kxy / norms).clamp(-1.0, 1.0);
                    let theta = cos.acos();
                    norms * (theta.sin() + (PI - theta) * cos) / (2.0 * PI)
                }
            }
            KernelKind::Erf => {
                let kxx = h.bias_var + h.weight_var * dot(x, x);
                let kyy = h.bias_var + h.weight_var * dot(x2, x2);
                let kxy = h.bias_var + h.weight_var * dot(x, x2);
                let arg = 2.0 * kxy / ((1.0 + 2.0 * kxx) * (1.0 + 2.0 * kyy)).sqrt();
                2.0 / PI * arg.clamp(-1.0, 1.0).asin()
            }
            KernelKind::RbfFinite => {
                let (u, g) = (h.center_var, h.rbf_width_sq);
                let m = 2.0 * u + g;
                let s = 2.0 * g + g * g / u;
                let d = x.len() as f64;
                let diff: f64 = x.iter().zip(x2).map(|(a, b)| (a - b) * (a - b)).sum();
                (g / m).powf(d / 2.0) * (-dot(x, x) / (2.0 * m) - diff / (2.0 * s) - dot(x2, x2) / (2.0 * m)).exp()
            }
        })
    }
}

/// Prior covariance of the network output at `x` and `x2`.
pub fn kernel_eval(spec: &KernelSpec, x: &[f64], x2: &[f64]) -> Result<f64> {
    Ok(spec.hyper.output_bias_var + spec.hyper.output_var * spec.unit_covariance(x, x2)?)
}

/// Kernel matrix between the rows of `a` and `b`.
pub fn kernel_matrix(spec: &KernelSpec, a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if a.ncols() != b.ncols() {
        return Err(Error::DimensionMismatch {
            context: "kernel matrix input columns",
            expected: a.ncols(),
            found: b.ncols(),
        });
    }
    let rows_a: Vec<Vec<f64>> = a.row_iter().map(|r| r.iter().copied().collect()).collect();
    let rows_b: Vec<Vec<f64>> = b.row_iter().map(|r| r.iter().copied().collect()).collect();
    let mut k = DMatrix::zeros(a.nrows(), b.nrows());
    for (i, ra) in rows_a.iter().enumerate() {
        for (j, rb) in rows_b.iter().enumerate() {
            k[(i, j)] = kernel_eval(spec, ra, rb)?;
        }
    }
    Ok(k)
}

/// Fitted GP: training data and the Cholesky factor of `K + noise I`.
#[derive(Debug, Clone)]
pub struct GpPosterior {
    spec: KernelSpec,
    x: DMatrix<f64>,
    noise_var: f64,
    chol: Option<Cholesky<f64, Dyn>>,
    alpha: DVector<f64>,
    jitter: f64,
}

pub fn gp_fit(x: &DMatrix<f64>, y: &DVector<f64>, spec: &KernelSpec, noise_var: f64) -> Result<GpPosterior> {
    spec.validate()?;
    if !(noise_var > 0.0 && noise_var.is_finite()) {
        return Err(Error::invalid(format!(
            "noise variance must be positive, got {noise_var}"
        )));
    }
    if x.nrows() != y.len() {
        return Err(Error::DimensionMismatch {
            context: "GP inputs vs targets",
            expected: x.nrows(),
            found: y.len(),
        });
    }
    if x.nrows() == 0 {
        return Ok(GpPosterior {
            spec: *spec,
            x: x.clone(),
            noise_var,
            chol: None,
            alpha: DVector::zeros(0),
            jitter: 0.0,
        });
    }
    let mut k = kernel_matrix(spec, x, x)?;
    for i in 0..k.nrows() {
        k[(i, i)] += noise_var;
    }
    let (chol, jitter) = linalg::cholesky_jittered(&k, "GP kernel matrix")?;
    let alpha = chol.solve(y);
    Ok(GpPosterior {
        spec: *spec,
        x: x.clone(),
        noise_var,
        chol: Some(chol),
        alpha,
        jitter,
    })
}

impl GpPosterior {
    pub fn spec(&self) -> &KernelSpec {
        &self.spec
    }

    pub fn noise_var(&self) -> f64 {
        self.noise_var
    }

    /// Jitter the factorization needed beyond the noise variance.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// Lower Cholesky factor of `K + noise I` (empty without data).
    pub fn factor(&self) -> DMatrix<f64> {
        self.chol
            .as_ref()
            .map(|c| c.l())
            .unwrap_or_else(|| DMatrix::zeros(0, 0))
    }

    /// Predictive distribution of the latent function plus observation noise.
    pub fn predict(&self, x_query: &DMatrix<f64>) -> Result<Vec<PredictiveDist>> {
        if x_query.ncols() != self.x.ncols() && self.x.nrows() > 0 {
            return Err(Error::DimensionMismatch {
                context: "GP query columns",
                expected: self.x.ncols(),
                found: x_query.ncols(),
            });
        }
        let mut out = Vec::with_capacity(x_query.nrows());
        for row in x_query.row_iter() {
            let q: Vec<f64> = row.iter().copied().collect();
            let prior_var = kernel_eval(&self.spec, &q, &q)?;
            let (mean, var) = match &self.chol {
                None => (0.0, prior_var),
                Some(chol) => {
                    let qm = DMatrix::from_row_slice(1, q.len(), &q);
                    let k_star = kernel_matrix(&self.spec, &self.x, &qm)?.column(0).into_owned();
                    let mean = k_star.dot(&self.alpha);
                    let v = chol
                        .l()
                        .solve_lower_triangular(&k_star)
                        .expect("triangular factor is non-singular");
                    (mean, (prior_var - v.norm_squared()).max(0.0))
                }
            };
            out.push(PredictiveDist::new(mean, var, self.noise_var));
        }
        Ok(out)
    }
}

/// Convenience wrapper matching [`GpPosterior::predict`].
pub fn gp_predict(post: &GpPosterior, x_query: &DMatrix<f64>) -> Result<Vec<PredictiveDist>> {
    post.predict(x_query)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hyper() -> KernelHyper {
        KernelHyper {
            weight_var: 1.0,
            bias_var: 1.0,
            output_var: 1.0,
            output_bias_var: 1.0,
            center_var: 1.0,
            rbf_width_sq: 1.0,
        }
    }

    #[test]
    fn erf_degenerate_input_is_zero() {
        let spec = KernelSpec {
            kind: KernelKind::Erf,
            hyper: KernelHyper {
                bias_var: 0.0,
                output_bias_var: 0.0,
                ..hyper()
            },
        };
        assert_eq!(kernel_eval(&spec, &[0.0], &[0.0]).unwrap(), 0.0);
    }

    #[test]
    fn kernels_are_symmetric_and_nonnegative_on_diagonal() {
        let pts = [[0.3, -1.2], [2.0, 0.5], [-0.7, -0.1]];
        for kind in [KernelKind::ReluArccos, KernelKind::Erf, KernelKind::RbfFinite] {
            let spec = KernelSpec { kind, hyper: hyper() };
            for a in &pts {
                assert!(kernel_eval(&spec, a, a).unwrap() >= 0.0);
                for b in &pts {
                    assert_eq!(kernel_eval(&spec, a, b).unwrap(), kernel_eval(&spec, b, a).unwrap());
                }
            }
            assert!(kernel_eval(&spec, &[1.0], &[1.0, 2.0]).is_err());
        }
    }

    #[test]
    fn rbf_decays_to_output_bias() {
        let spec = KernelSpec {
            kind: KernelKind::RbfFinite,
            hyper: hyper(),
        };
        let far = kernel_eval(&spec, &[30.0], &[30.0]).unwrap();
        assert!((far - 1.0).abs() < 1e-12);
    }

    #[test]
    fn empty_fit_returns_prior() {
        let spec = KernelSpec {
            kind: KernelKind::ReluArccos,
            hyper: hyper(),
        };
        let post = gp_fit(&DMatrix::zeros(0, 1), &DVector::zeros(0), &spec, 0.1).unwrap();
        let xq = DMatrix::from_row_slice(2, 1, &[0.5, -3.0]);
        for (p, x) in post.predict(&xq).unwrap().iter().zip([0.5, -3.0]) {
            assert_eq!(p.mean, 0.0);
            assert_eq!(p.epistemic_var, kernel_eval(&spec, &[x], &[x]).unwrap());
        }
    }

    #[test]
    fn single_point_interpolates_as_noise_vanishes() {
        let spec = KernelSpec {
            kind: KernelKind::Erf,
            hyper: hyper(),
        };
        let x = DMatrix::from_row_slice(1, 1, &[0.4]);
        let y = DVector::from_row_slice(&[0.9]);
        let post = gp_fit(&x, &y, &spec, 1e-10).unwrap();
        let p = post.predict(&x).unwrap()[0];
        assert!((p.mean - 0.9).abs() < 1e-6);
    }

    #[test]
    fn rejects_bad_noise() {
        let spec = KernelSpec {
            kind: KernelKind::Erf,
            hyper: hyper(),
        };
        assert!(gp_fit(&DMatrix::zeros(1, 1), &DVector::zeros(1), &spec, 0.0).is_err());
    }
}
