//! Single-hidden-layer regression networks with hand-written backpropagation.
//!
//! Parameter layout of the flattened vector `theta`:
//!
//! | activation      | segments (in order)                                          |
//! |-----------------|--------------------------------------------------------------|
//! | `relu`, `erf`   | first-layer weights `H x D` row-major, first-layer biases `H`, output weights `H`, output bias |
//! | `rbf`           | centres `H x D` row-major, output weights `H`, output bias    |
//! | `linear`        | output weights `H` (with `H == D`), output bias              |
//!
//! The `linear` activation passes the input straight through to the output
//! layer, so the model is `w^T x + b`, linear in every parameter. It exists so
//! that trained networks can be compared against closed-form linear
//! regression.

pub(crate) mod format;
mod train;

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use format::{read_params, write_params, PARAMS_MAGIC};
pub use train::{train, Optimizer, TrainConfig, TrainOutcome};

/// Loss values above this are treated as divergence.
pub const DIVERGENCE_LIMIT: f64 = 1e10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Erf,
    Rbf,
    Linear,
}

impl Activation {
    pub fn as_str(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Erf => "erf",
            Activation::Rbf => "rbf",
            Activation::Linear => "linear",
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Erf => 1,
            Activation::Rbf => 2,
            Activation::Linear => 3,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => Activation::Relu,
            1 => Activation::Erf,
            2 => Activation::Rbf,
            3 => Activation::Linear,
            _ => return None,
        })
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "relu" => Ok(Activation::Relu),
            "erf" => Ok(Activation::Erf),
            "rbf" => Ok(Activation::Rbf),
            "linear" => Ok(Activation::Linear),
            other => Err(Error::invalid(format!("unknown activation `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NetworkShape {
    pub input_dim: usize,
    pub hidden_width: usize,
    pub activation: Activation,
    /// Squared bump width of RBF units; ignored by other activations.
    pub rbf_width_sq: f64,
}

/// Index ranges of each parameter block inside `theta`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamLayout {
    /// First-layer weights, or RBF centres.
    pub first_weights: Range<usize>,
    pub first_biases: Option<Range<usize>>,
    pub output_weights: Range<usize>,
    pub output_bias: usize,
}

impl NetworkShape {
    pub const DEFAULT_RBF_WIDTH_SQ: f64 = 1.0;

    pub fn new(input_dim: usize, hidden_width: usize, activation: Activation) -> Result<Self> {
        Self::with_rbf_width(input_dim, hidden_width, activation, Self::DEFAULT_RBF_WIDTH_SQ)
    }

    pub fn with_rbf_width(
        input_dim: usize,
        hidden_width: usize,
        activation: Activation,
        rbf_width_sq: f64,
    ) -> Result<Self> {
        if input_dim == 0 || hidden_width == 0 {
            return Err(Error::invalid("input dimension and hidden width must be positive"));
        }
        if activation == Activation::Linear && input_dim != hidden_width {
            return Err(Error::invalid(
                "linear pass-through shape needs hidden width == input dimension",
            ));
        }
        if !(rbf_width_sq > 0.0 && rbf_width_sq.is_finite()) {
            return Err(Error::invalid("RBF width must be positive"));
        }
        Ok(Self {
            input_dim,
            hidden_width,
            activation,
            rbf_width_sq,
        })
    }

    /// The linear pass-through test shape `y = w^T x + b`.
    pub fn linear(input_dim: usize) -> Result<Self> {
        Self::new(input_dim, input_dim, Activation::Linear)
    }

    pub fn layout(&self) -> ParamLayout {
        let (d, h) = (self.input_dim, self.hidden_width);
        match self.activation {
            Activation::Relu | Activation::Erf => ParamLayout {
                first_weights: 0..h * d,
                first_biases: Some(h * d..h * d + h),
                output_weights: h * d + h..h * d + 2 * h,
                output_bias: h * d + 2 * h,
            },
            Activation::Rbf => ParamLayout {
                first_weights: 0..h * d,
                first_biases: None,
                output_weights: h * d..h * d + h,
                output_bias: h * d + h,
            },
            Activation::Linear => ParamLayout {
                first_weights: 0..0,
                first_biases: None,
                output_weights: 0..h,
                output_bias: h,
            },
        }
    }

    pub fn num_params(&self) -> usize {
        self.layout().output_bias + 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    shape: NetworkShape,
    theta: DVector<f64>,
}

impl NetworkParams {
    pub fn new(shape: NetworkShape, theta: DVector<f64>) -> Result<Self> {
        if theta.len() != shape.num_params() {
            return Err(Error::DimensionMismatch {
                context: "parameter vector length",
                expected: shape.num_params(),
                found: theta.len(),
            });
        }
        Ok(Self { shape, theta })
    }

    pub fn zeros(shape: NetworkShape) -> Self {
        Self {
            theta: DVector::zeros(shape.num_params()),
            shape,
        }
    }

    pub fn shape(&self) -> &NetworkShape {
        &self.shape
    }

    pub fn theta(&self) -> &DVector<f64> {
        &self.theta
    }

    pub fn theta_mut(&mut self) -> &mut DVector<f64> {
        &mut self.theta
    }

    pub fn into_theta(self) -> DVector<f64> {
        self.theta
    }

    /// Prediction at a single input.
    pub fn forward(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.shape.input_dim {
            return Err(Error::DimensionMismatch {
                context: "input length",
                expected: self.shape.input_dim,
                found: x.len(),
            });
        }
        let xm = DMatrix::from_row_slice(1, x.len(), x);
        Ok(self.forward_batch(&xm)?[0])
    }

    /// Predictions for every row of `x` (`N x D`).
    pub fn forward_batch(&self, x: &DMatrix<f64>) -> Result<DVector<f64>> {
        self.check_inputs(x)?;
        let out = self.output(&self.activations(x));
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("network output".into()));
        }
        Ok(out)
    }

    /// Hidden-layer activations for every row of `x`, `N x H`.
    pub fn hidden_activations(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_inputs(x)?;
        Ok(self.activations(x))
    }

    fn check_inputs(&self, x: &DMatrix<f64>) -> Result<()> {
        if x.ncols() != self.shape.input_dim {
            return Err(Error::DimensionMismatch {
                context: "input columns",
                expected: self.shape.input_dim,
                found: x.ncols(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("network input".into()));
        }
        if self.theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("network parameters".into()));
        }
        Ok(())
    }

    fn first_weights(&self) -> DMatrix<f64> {
        let l = self.shape.layout();
        DMatrix::from_row_slice(
            self.shape.hidden_width,
            self.shape.input_dim,
            &self.theta.as_slice()[l.first_weights],
        )
    }

    /// Hidden-layer pre-activations and activations, each `N x H`.
    fn hidden(&self, x: &DMatrix<f64>) -> Hidden {
        let pre = self.pre_activations(x);
        let mut activations = pre.clone();
        self.activate(&mut activations);
        Hidden { pre, activations }
    }

    /// Activations without keeping the pre-activations around.
    fn activations(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut a = self.pre_activations(x);
        self.activate(&mut a);
        a
    }

    /// relu/erf: `x W^T + b`; rbf: squared distances to the centres;
    /// linear: the inputs themselves.
    fn pre_activations(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let l = self.shape.layout();
        match self.shape.activation {
            Activation::Linear => x.clone(),
            Activation::Relu | Activation::Erf => {
                let (n, d, h) = (x.nrows(), self.shape.input_dim, self.shape.hidden_width);
                let theta = self.theta.as_slice();
                let (w, b) = (&theta[l.first_weights], &theta[l.first_biases.unwrap_or(0..0)]);
                // filled one column (hidden unit) at a time, matching the storage order
                let mut pre = DMatrix::from_fn(n, h, |_, j| b[j]);
                for (j, mut col) in pre.column_iter_mut().enumerate() {
                    for k in 0..d {
                        col.axpy(w[j * d + k], &x.column(k), 1.0);
                    }
                }
                pre
            }
            Activation::Rbf => squared_distances(x, &self.first_weights()),
        }
    }

    fn activate(&self, m: &mut DMatrix<f64>) {
        match self.shape.activation {
            Activation::Linear => {}
            Activation::Relu => m.apply(|z| *z = z.max(0.0)),
            Activation::Erf => m.apply(|z| *z = libm::erf(*z)),
            Activation::Rbf => {
                let width = self.shape.rbf_width_sq;
                m.apply(|d| *d = (-*d / (2.0 * width)).exp());
            }
        }
    }

    fn output(&self, activations: &DMatrix<f64>) -> DVector<f64> {
        let l = self.shape.layout();
        let w2 = self.theta.rows(l.output_weights.start, self.shape.hidden_width);
        let b2 = self.theta[l.output_bias];
        activations * w2 + DVector::from_element(activations.nrows(), b2)
    }
}

struct Hidden {
    /// relu/erf: pre-activations; rbf: squared distances to the centres.
    pre: DMatrix<f64>,
    activations: DMatrix<f64>,
}

/// `||x_i - c_j||^2` for every row pair, `N x H`.
fn squared_distances(x: &DMatrix<f64>, centres: &DMatrix<f64>) -> DMatrix<f64> {
    let x_sq: Vec<f64> = x.row_iter().map(|r| r.norm_squared()).collect();
    let c_sq: Vec<f64> = centres.row_iter().map(|r| r.norm_squared()).collect();
    let mut cross = x * centres.transpose();
    for i in 0..cross.nrows() {
        for j in 0..cross.ncols() {
            cross[(i, j)] = (x_sq[i] + c_sq[j] - 2.0 * cross[(i, j)]).max(0.0);
        }
    }
    cross
}

/// Inputs and targets for a loss evaluation.
#[derive(Debug, Clone, Copy)]
pub struct Batch<'a> {
    pub x: &'a DMatrix<f64>,
    pub y: &'a DVector<f64>,
}

impl<'a> Batch<'a> {
    pub fn new(x: &'a DMatrix<f64>, y: &'a DVector<f64>) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(Error::DimensionMismatch {
                context: "batch rows vs targets",
                expected: x.nrows(),
                found: y.len(),
            });
        }
        if x.nrows() == 0 {
            return Err(Error::invalid("batch must contain at least one row"));
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("training data".into()));
        }
        Ok(Self { x, y })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

fn check_reg(params: &NetworkParams, anchor: &DVector<f64>, gamma: &DVector<f64>) -> Result<()> {
    let p = params.shape.num_params();
    for (context, len) in [("anchor length", anchor.len()), ("regulariser length", gamma.len())] {
        if len != p {
            return Err(Error::DimensionMismatch {
                context,
                expected: p,
                found: len,
            });
        }
    }
    Ok(())
}

/// `(1/N) ||y - y_hat||^2 + (1/N) sum_k gamma_k (theta_k - anchor_k)^2`.
pub fn anchored_loss(
    params: &NetworkParams,
    anchor: &DVector<f64>,
    gamma: &DVector<f64>,
    batch: Batch<'_>,
) -> Result<f64> {
    check_reg(params, anchor, gamma)?;
    let pred = params.forward_batch(batch.x)?;
    let n = batch.len() as f64;
    let data = (batch.y - pred).norm_squared() / n;
    let reg: f64 = params
        .theta
        .iter()
        .zip(anchor.iter())
        .zip(gamma.iter())
        .map(|((t, a), g)| g * (t - a) * (t - a))
        .sum::<f64>()
        / n;
    finite_loss(data + reg)
}

/// Anchored loss with the anchor at the origin (plain L2 regularisation).
pub fn regularised_loss(params: &NetworkParams, gamma: &DVector<f64>, batch: Batch<'_>) -> Result<f64> {
    anchored_loss(params, &DVector::zeros(params.theta.len()), gamma, batch)
}

fn finite_loss(v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite("loss".into()))
    }
}

/// Gradient of [`anchored_loss`] with respect to `theta`.
pub fn grad(
    params: &NetworkParams,
    anchor: &DVector<f64>,
    gamma: &DVector<f64>,
    batch: Batch<'_>,
) -> Result<DVector<f64>> {
    Ok(loss_and_grad(params, anchor, gamma, batch)?.1)
}

/// Loss and gradient from one forward/backward pass.
pub fn loss_and_grad(
    params: &NetworkParams,
    anchor: &DVector<f64>,
    gamma: &DVector<f64>,
    batch: Batch<'_>,
) -> Result<(f64, DVector<f64>)> {
    check_reg(params, anchor, gamma)?;
    params.check_inputs(batch.x)?;
    let shape = params.shape;
    let layout = shape.layout();
    let n = batch.len() as f64;
    let h = shape.hidden_width;

    let hidden = params.hidden(batch.x);
    let pred = params.output(&hidden.activations);
    let resid = pred - batch.y;
    let diff = &params.theta - anchor;

    let loss = resid.norm_squared() / n + diff.component_mul(&diff).dot(gamma) / n;
    let loss = finite_loss(loss)?;

    // d loss / d y_hat
    let dy = resid * (2.0 / n);
    let mut g = diff.component_mul(gamma) * (2.0 / n);

    let out_w = hidden.activations.transpose() * &dy;
    for (k, v) in out_w.iter().enumerate() {
        g[layout.output_weights.start + k] += v;
    }
    g[layout.output_bias] += dy.sum();

    if shape.activation != Activation::Linear {
        let w2 = params.theta.rows(layout.output_weights.start, h).into_owned();
        // delta_ij = dy_i * w2_j * d h_ij / d (pre-activation or centre)
        let mut delta = &dy * w2.transpose();
        match shape.activation {
            Activation::Relu => delta.zip_apply(&hidden.pre, |d, z| {
                if z <= 0.0 {
                    *d = 0.0
                }
            }),
            Activation::Erf => {
                let c = 2.0 / std::f64::consts::PI.sqrt();
                delta.zip_apply(&hidden.pre, |d, z| *d *= c * (-z * z).exp());
            }
            Activation::Rbf => delta.component_mul_assign(&hidden.activations),
            Activation::Linear => unreachable!(),
        }
        let dw = delta.transpose() * batch.x; // H x D
        let first = layout.first_weights.clone();
        match shape.activation {
            Activation::Rbf => {
                // d h / d u_jd = h (x_d - u_jd) / s
                let centres = params.first_weights();
                let col_sums: Vec<f64> = delta.column_iter().map(|c| c.sum()).collect();
                let s = shape.rbf_width_sq;
                for j in 0..h {
                    for d in 0..shape.input_dim {
                        g[first.start + j * shape.input_dim + d] += (dw[(j, d)] - col_sums[j] * centres[(j, d)]) / s;
                    }
                }
            }
            _ => {
                for j in 0..h {
                    for d in 0..shape.input_dim {
                        g[first.start + j * shape.input_dim + d] += dw[(j, d)];
                    }
                }
                if let Some(b) = layout.first_biases {
                    for j in 0..h {
                        g[b.start + j] += delta.column(j).sum();
                    }
                }
            }
        }
    }

    if g.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("gradient".into()));
    }
    Ok((loss, g))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn relu1(theta: [f64; 4]) -> NetworkParams {
        let shape = NetworkShape::new(1, 1, Activation::Relu).unwrap();
        NetworkParams::new(shape, DVector::from_row_slice(&theta)).unwrap()
    }

    #[test]
    fn parameter_counts() {
        assert_eq!(
            NetworkShape::new(3, 5, Activation::Relu).unwrap().num_params(),
            4 * 5 + 5 + 1
        );
        assert_eq!(NetworkShape::new(3, 5, Activation::Erf).unwrap().num_params(), 26);
        assert_eq!(
            NetworkShape::new(3, 5, Activation::Rbf).unwrap().num_params(),
            3 * 5 + 5 + 1
        );
        assert_eq!(NetworkShape::linear(4).unwrap().num_params(), 5);
        assert!(NetworkShape::new(2, 3, Activation::Linear).is_err());
    }

    #[test]
    fn zero_network_outputs_zero() {
        let p = NetworkParams::zeros(NetworkShape::new(2, 7, Activation::Relu).unwrap());
        assert_eq!(p.forward(&[3.0, -1.0]).unwrap(), 0.0);
    }

    #[test]
    fn hand_evaluated_relu() {
        let p = relu1([1.0, 0.0, 1.0, 0.0]);
        assert_eq!(p.forward(&[-2.0]).unwrap(), 0.0);
        assert_eq!(p.forward(&[3.0]).unwrap(), 3.0);
    }

    #[test]
    fn forward_rejects_bad_inputs() {
        let p = relu1([1.0, 0.0, 1.0, 0.0]);
        assert!(matches!(p.forward(&[1.0, 2.0]), Err(Error::DimensionMismatch { .. })));
        assert!(matches!(p.forward(&[f64::NAN]), Err(Error::NonFinite(_))));
        let bad = relu1([f64::INFINITY, 0.0, 1.0, 0.0]);
        assert!(matches!(bad.forward(&[1.0]), Err(Error::NonFinite(_))));
    }

    #[test]
    fn hand_computed_regularised_loss() {
        // x = [1, -1], y = [2, 0]; w1 = 2, b1 = 0.5, w2 = 1.5, b2 = -1
        // hidden: relu(2.5) = 2.5, relu(-1.5) = 0 -> y_hat = [2.75, -1]
        // data = ((0.75)^2 + 1^2) / 2 = 0.78125
        // reg  = (1*4 + 2*0.25 + 0.5*2.25 + 1*1) / 2 = 3.3125
        let p = relu1([2.0, 0.5, 1.5, -1.0]);
        let x = DMatrix::from_row_slice(2, 1, &[1.0, -1.0]);
        let y = DVector::from_row_slice(&[2.0, 0.0]);
        let gamma = DVector::from_row_slice(&[1.0, 2.0, 0.5, 1.0]);
        let loss = regularised_loss(&p, &gamma, Batch::new(&x, &y).unwrap()).unwrap();
        assert!((loss - (0.78125 + 3.3125)).abs() < 1e-14);
    }

    #[test]
    fn loss_identities() {
        let x = DMatrix::from_row_slice(3, 1, &[0.5, 1.0, -2.0]);
        let y = DVector::from_row_slice(&[1.0, -1.0, 2.0]);
        let batch = Batch::new(&x, &y).unwrap();
        let gamma = DVector::from_element(4, 0.3);
        let zero = relu1([0.0; 4]);
        let l = regularised_loss(&zero, &gamma, batch).unwrap();
        assert!((l - y.norm_squared() / 3.0).abs() < 1e-15);

        let p = relu1([0.4, -0.2, 1.1, 0.3]);
        let data_only = (&y - p.forward_batch(&x).unwrap()).norm_squared() / 3.0;
        assert_eq!(anchored_loss(&p, p.theta(), &gamma, batch).unwrap(), data_only);

        let g = grad(&p, p.theta(), &DVector::zeros(4), batch).unwrap();
        assert!(g.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn perfect_fit_at_anchor_is_zero() {
        let p = relu1([1.0, 0.0, 1.0, 0.0]);
        let x = DMatrix::from_row_slice(2, 1, &[1.0, 2.0]);
        let y = DVector::from_row_slice(&[1.0, 2.0]);
        let gamma = DVector::from_element(4, 5.0);
        assert_eq!(
            anchored_loss(&p, p.theta(), &gamma, Batch::new(&x, &y).unwrap()).unwrap(),
            0.0
        );
        assert_eq!(
            regularised_loss(&relu1([0.0; 4]), &gamma, Batch::new(&x, &DVector::zeros(2)).unwrap()).unwrap(),
            0.0
        );
    }

    #[test]
    fn regulariser_only_gradient() {
        // data term vanishes when the single target equals the prediction
        let p = relu1([0.7, 0.1, -0.4, 0.2]);
        let x = DMatrix::from_row_slice(1, 1, &[0.9]);
        let y = p.forward_batch(&x).unwrap();
        let anchor = DVector::from_row_slice(&[0.1, -0.3, 0.5, 0.0]);
        let gamma = DVector::from_row_slice(&[1.0, 2.0, 3.0, 4.0]);
        let g = grad(&p, &anchor, &gamma, Batch::new(&x, &y).unwrap()).unwrap();
        let expected = (p.theta() - &anchor).component_mul(&gamma) * 2.0;
        assert!((g - expected).norm() < 1e-14);
    }

    #[test]
    fn parses_activation_names() {
        assert_eq!("ReLU".parse::<Activation>().unwrap(), Activation::Relu);
        assert!("tanh".parse::<Activation>().is_err());
    }
}
