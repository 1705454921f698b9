use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::{loss_and_grad, Batch, NetworkParams, DIVERGENCE_LIMIT};
use crate::error::{Error, Result};

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;
/// Window (in epochs) over which early stopping measures loss improvement.
pub const EARLY_STOP_WINDOW: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    GradientDescent,
    #[serde(alias = "adam")]
    AdaptiveMoment,
}

/// Full-batch first-order training settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub optimizer: Optimizer,
    /// Stop once the loss improved by less than this over the last
    /// [`EARLY_STOP_WINDOW`] epochs. Zero disables early stopping.
    pub early_stop_tol: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            epochs: 5000,
            optimizer: Optimizer::AdaptiveMoment,
            early_stop_tol: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(self.early_stop_tol >= 0.0) {
            return Err(Error::invalid("early-stop tolerance must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: NetworkParams,
    pub initial_loss: f64,
    /// Anchored loss of the returned parameters.
    pub final_loss: f64,
    pub epochs_run: usize,
}

/// Minimises the anchored loss starting from `init`.
///
/// The returned parameters are the lowest-loss iterate seen, so the final loss
/// never exceeds the initial one.
pub fn train(
    init: &NetworkParams,
    anchor: &DVector<f64>,
    gamma: &DVector<f64>,
    batch: Batch<'_>,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    let mut params = init.clone();
    let p = params.theta().len();
    let mut m = DVector::<f64>::zeros(p);
    let mut v = DVector::<f64>::zeros(p);
    let mut history: Vec<f64> = Vec::with_capacity(config.epochs + 1);
    let mut best: Option<(f64, DVector<f64>)> = None;
    let mut epochs_run = 0;

    for epoch in 0..=config.epochs {
        let (loss, g) = loss_and_grad(&params, anchor, gamma, batch).map_err(|e| match e {
            Error::NonFinite(_) => Error::Divergence { epoch, loss: f64::NAN },
            other => other,
        })?;
        if loss > DIVERGENCE_LIMIT {
            return Err(Error::Divergence { epoch, loss });
        }
        if best.as_ref().is_none_or(|(b, _)| loss < *b) {
            best = Some((loss, params.theta().clone()));
        }
        history.push(loss);
        if epoch == config.epochs {
            break;
        }
        if config.early_stop_tol > 0.0
            && epoch >= EARLY_STOP_WINDOW
            && history[epoch - EARLY_STOP_WINDOW] - loss < config.early_stop_tol
        {
            break;
        }

        let lr = config.learning_rate;
        let theta = params.theta_mut();
        match config.optimizer {
            Optimizer::GradientDescent => theta.axpy(-lr, &g, 1.0),
            Optimizer::AdaptiveMoment => {
                let t = (epoch + 1) as i32;
                let c1 = 1.0 - ADAM_BETA1.powi(t);
                let c2 = 1.0 - ADAM_BETA2.powi(t);
                for k in 0..p {
                    m[k] = ADAM_BETA1 * m[k] + (1.0 - ADAM_BETA1) * g[k];
                    v[k] = ADAM_BETA2 * v[k] + (1.0 - ADAM_BETA2) * g[k] * g[k];
                    theta[k] -= lr * (m[k] / c1) / ((v[k] / c2).sqrt() + ADAM_EPS);
                }
            }
        }
        epochs_run = epoch + 1;
    }

    let (final_loss, theta) = best.expect("at least one loss evaluation");
    let params = NetworkParams::new(*init.shape(), theta)?;
    Ok(TrainOutcome {
        params,
        initial_loss: history[0],
        final_loss,
        epochs_run,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{anchored_loss, Activation, NetworkShape};
    use nalgebra::DMatrix;

    fn toy() -> (DMatrix<f64>, DVector<f64>) {
        let x = DMatrix::from_fn(8, 1, |i, _| -1.0 + i as f64 * 0.3);
        let y = x.column(0).map(|v| 0.5 * v + 0.2);
        (x, y)
    }

    #[test]
    fn zero_epochs_is_identity() {
        let (x, y) = toy();
        let shape = NetworkShape::new(1, 4, Activation::Erf).unwrap();
        let init = NetworkParams::new(shape, DVector::from_fn(shape.num_params(), |i, _| 0.1 * i as f64)).unwrap();
        let cfg = TrainConfig {
            epochs: 0,
            ..Default::default()
        };
        let out = train(
            &init,
            init.theta(),
            &DVector::from_element(13, 0.1),
            Batch::new(&x, &y).unwrap(),
            &cfg,
        )
        .unwrap();
        assert_eq!(out.params, init);
        assert_eq!(out.epochs_run, 0);
    }

    #[test]
    fn divergence_reports_epoch() {
        let (x, y) = toy();
        let shape = NetworkShape::linear(1).unwrap();
        let init = NetworkParams::zeros(shape);
        let cfg = TrainConfig {
            learning_rate: 50.0,
            epochs: 500,
            optimizer: Optimizer::GradientDescent,
            early_stop_tol: 0.0,
        };
        let err = train(
            &init,
            init.theta(),
            &DVector::from_element(2, 0.01),
            Batch::new(&x, &y).unwrap(),
            &cfg,
        )
        .unwrap_err();
        match err {
            Error::Divergence { epoch, .. } => assert!(epoch > 0),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn loss_never_increases_and_is_deterministic() {
        let (x, y) = toy();
        let batch = Batch::new(&x, &y).unwrap();
        let shape = NetworkShape::new(1, 6, Activation::Relu).unwrap();
        let init = NetworkParams::new(
            shape,
            DVector::from_fn(shape.num_params(), |i, _| ((i * 7 % 5) as f64 - 2.0) * 0.3),
        )
        .unwrap();
        let gamma = DVector::from_element(shape.num_params(), 0.05);
        let cfg = TrainConfig {
            epochs: 300,
            ..Default::default()
        };
        let a = train(&init, init.theta(), &gamma, batch, &cfg).unwrap();
        let b = train(&init, init.theta(), &gamma, batch, &cfg).unwrap();
        assert_eq!(a.params, b.params);
        assert!(a.final_loss <= a.initial_loss);
        assert_eq!(
            a.final_loss,
            anchored_loss(&a.params, init.theta(), &gamma, batch).unwrap()
        );
    }

    #[test]
    fn early_stopping_halts() {
        let (x, y) = toy();
        let shape = NetworkShape::linear(1).unwrap();
        let init = NetworkParams::zeros(shape);
        let cfg = TrainConfig {
            learning_rate: 0.1,
            epochs: 100_000,
            optimizer: Optimizer::GradientDescent,
            early_stop_tol: 1e-12,
        };
        let out = train(
            &init,
            init.theta(),
            &DVector::from_element(2, 0.01),
            Batch::new(&x, &y).unwrap(),
            &cfg,
        )
        .unwrap();
        assert!(out.epochs_run < 100_000);
    }
}
