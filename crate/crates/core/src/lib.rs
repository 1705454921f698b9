//! Anchored ensembles of single-hidden-layer networks for approximate
//! Bayesian regression, plus the exact Gaussian, Bayesian linear regression
//! and infinite-width GP references they are checked against.

// `!(v > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod cli;
pub mod diagnostics;
pub mod ensemble;
pub mod error;
pub mod gaussian;
pub mod gp;
pub mod linalg;
pub mod network;
pub mod predictive;
pub mod toy;

pub use ensemble::{build_ensemble, materialize_prior, AnchoredMember, Ensemble, PriorSpec};
pub use error::{Error, Result};
pub use gaussian::{
    anchor_distribution, anchor_map_matrix, blr_anchored_map, blr_fit, gaussian_posterior, map_with_anchor,
    sample_gaussian, DiagGaussian, GaussianDist, LinearDesign,
};
pub use gp::{gp_fit, gp_predict, kernel_eval, GpPosterior, KernelKind, KernelSpec};
pub use network::{anchored_loss, Activation, Batch, NetworkParams, NetworkShape, TrainConfig};
pub use predictive::PredictiveDist;
