//! Parameter update rules.

use serde::{Deserialize, Serialize};

use crate::error::{GcnError, Result};

pub const ADADELTA_RHO: f64 = 0.9;
pub const ADADELTA_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Optimizer {
    /// `p <- p - lr * (g + wd * p)`.
    Sgd,
    /// Adadelta with the final step scaled by the learning rate.
    Adadelta { rho: f64, eps: f64 },
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::Adadelta {
            rho: ADADELTA_RHO,
            eps: ADADELTA_EPS,
        }
    }
}

/// Running averages for one parameter tensor. Empty until the first Adadelta step.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamState {
    pub sq_grad: Vec<f64>,
    pub sq_delta: Vec<f64>,
}

impl Optimizer {
    pub fn step(
        &self,
        params: &mut [f64],
        grads: &[f64],
        state: &mut ParamState,
        lr: f64,
        weight_decay: f64,
    ) -> Result<()> {
        self.step_in_units(params, grads, state, lr, weight_decay, 1.0)
    }

    /// Like [`Optimizer::step`], but for parameters measured in multiples of
    /// `unit`: the rule, weight decay included, runs on `params / unit` and
    /// the step is scaled back.
    pub fn step_in_units(
        &self,
        params: &mut [f64],
        grads: &[f64],
        state: &mut ParamState,
        lr: f64,
        weight_decay: f64,
        unit: f64,
    ) -> Result<()> {
        if params.len() != grads.len() {
            return Err(GcnError::Shape(format!(
                "gradient has {} values for {} parameters",
                grads.len(),
                params.len()
            )));
        }
        match *self {
            Optimizer::Sgd => {
                for (p, &g) in params.iter_mut().zip(grads) {
                    *p -= lr * unit * (g * unit + weight_decay * *p / unit);
                }
            }
            Optimizer::Adadelta { rho, eps } => {
                if state.sq_grad.len() != params.len() {
                    state.sq_grad = vec![0.0; params.len()];
                    state.sq_delta = vec![0.0; params.len()];
                }
                for (((p, &g), eg), ed) in params
                    .iter_mut()
                    .zip(grads)
                    .zip(state.sq_grad.iter_mut())
                    .zip(state.sq_delta.iter_mut())
                {
                    let g = g * unit + weight_decay * *p / unit;
                    *eg = rho * *eg + (1.0 - rho) * g * g;
                    let delta = ((*ed + eps).sqrt() / (*eg + eps).sqrt()) * g;
                    *ed = rho * *ed + (1.0 - rho) * delta * delta;
                    *p -= lr * unit * delta;
                }
            }
        }
        Ok(())
    }
}
