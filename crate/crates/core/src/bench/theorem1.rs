//! Prior-variance dominance check as the hidden layer widens.
//!
//! For a fixed first layer drawn from the prior, the output layer is linear
//! in the features `[h(x), 1]`, so its likelihood precision is
//! `Phi^T Phi / sigma_eps^2`. With a diagonal prior the ratio
//! `trace(S_prior^2 S_like^-1) / H` needs only the column norms of `Phi`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::RegressionDataset;
use crate::ensemble::{materialize_prior, PriorSpec};
use crate::error::{Error, Result};
use crate::network::{Activation, NetworkParams, NetworkShape};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Theorem1Row {
    pub hidden_width: usize,
    pub trace_ratio: f64,
}

/// `N x (H + 1)` output-layer design: hidden activations and a ones column.
pub fn random_features(x: &DMatrix<f64>, shape: &NetworkShape, spec: &PriorSpec, seed: u64) -> Result<DMatrix<f64>> {
    let prior = materialize_prior(shape, spec)?;
    let params = NetworkParams::new(*shape, prior.sample(seed))?;
    let hidden = params.hidden_activations(x)?;
    let mut phi = DMatrix::from_element(x.nrows(), shape.hidden_width + 1, 1.0);
    phi.columns_mut(0, shape.hidden_width).copy_from(&hidden);
    Ok(phi)
}

/// `trace(diag(v)^2 Phi^T Phi) / (sigma_eps^2 H)`.
pub fn trace_ratio(
    features: &DMatrix<f64>,
    output_prior_var: &DVector<f64>,
    sigma_eps_sq: f64,
    hidden_width: usize,
) -> Result<f64> {
    if features.ncols() != output_prior_var.len() {
        return Err(Error::DimensionMismatch {
            context: "features vs output prior",
            expected: output_prior_var.len(),
            found: features.ncols(),
        });
    }
    if features.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("feature matrix".into()));
    }
    let trace: f64 = features
        .column_iter()
        .zip(output_prior_var.iter())
        .map(|(c, v)| v * v * c.norm_squared())
        .sum::<f64>()
        / sigma_eps_sq;
    if trace == 0.0 {
        return Err(Error::Singular {
            what: "feature matrix is identically zero".into(),
            condition: f64::INFINITY,
        });
    }
    Ok(trace / hidden_width as f64)
}

pub fn theorem1_check(
    data: &RegressionDataset,
    activation: Activation,
    h_values: &[usize],
    spec: &PriorSpec,
    seed: u64,
) -> Result<Vec<Theorem1Row>> {
    if activation == Activation::Linear {
        return Err(Error::invalid("the width check needs a nonlinear hidden layer"));
    }
    let mut rows = Vec::with_capacity(h_values.len());
    for &h in h_values {
        let shape = NetworkShape::new(data.n_features(), h, activation)?;
        let phi = random_features(&data.x, &shape, spec, seed)?;
        let mut out_var = DVector::from_element(h + 1, spec.output_layer_var_base / h as f64);
        out_var[h] = spec.output_bias_var;
        rows.push(Theorem1Row {
            hidden_width: h,
            trace_ratio: trace_ratio(&phi, &out_var, data.sigma_eps_sq, h)?,
        });
    }
    Ok(rows)
}

/// Whether the ratio decreases from each width to the next.
pub fn is_decreasing(rows: &[Theorem1Row]) -> bool {
    rows.windows(2).all(|w| w[1].trace_ratio < w[0].trace_ratio)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::synthetic_dataset;

    #[test]
    fn matches_dense_computation() {
        let data = synthetic_dataset(30, 2, 0.1, 4).unwrap();
        let spec = PriorSpec::default();
        let shape = NetworkShape::new(2, 7, Activation::Erf).unwrap();
        let phi = random_features(&data.x, &shape, &spec, 9).unwrap();
        let mut v = DVector::from_element(8, 1.0 / 7.0);
        v[7] = 1.0;
        let prior = DMatrix::from_diagonal(&v);
        let like_inv = phi.transpose() * &phi / 0.1;
        let dense = (&prior * &prior * like_inv).trace() / 7.0;
        let fast = trace_ratio(&phi, &v, 0.1, 7).unwrap();
        assert!((dense - fast).abs() < 1e-10 * dense);
    }

    #[test]
    fn ratio_shrinks_with_width() {
        let data = synthetic_dataset(200, 1, 0.1, 3).unwrap();
        for act in [Activation::Relu, Activation::Erf] {
            let rows = theorem1_check(&data, act, &[10, 100, 1000], &PriorSpec::default(), 5).unwrap();
            assert!(is_decreasing(&rows), "{act}: {rows:?}");
        }
    }

    #[test]
    fn zero_features_rejected() {
        let phi = DMatrix::zeros(3, 2);
        assert!(trace_ratio(&phi, &DVector::from_element(2, 1.0), 0.1, 1).is_err());
    }
}
