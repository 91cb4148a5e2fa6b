//! Bias-corrected Adam and the halving learning-rate schedule.

use serde::{Deserialize, Serialize};

use super::backward::Gradients;
use super::{NetworkParams, TrainConfig};
use crate::error::{Error, Result};

/// First/second moment estimates per parameter tensor, plus the timestep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl AdamState {
    pub fn new(params: &mut NetworkParams) -> Self {
        let sizes: Vec<usize> = params
            .param_slices_mut()
            .iter()
            .map(|(_, s)| s.len())
            .collect();
        Self {
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
        }
    }

    pub fn timestep(&self) -> u64 {
        self.t
    }
}

/// One Adam update on a flat tensor. `t` is the already-incremented timestep
/// (t >= 1). Update: p -= lr * m_hat / (sqrt(v_hat) + eps).
#[allow(clippy::too_many_arguments)]
pub fn adam_update(
    param: &mut [f64],
    grad: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    t: u64,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
) {
    let bc1 = 1.0 - beta1.powi(t as i32);
    let bc2 = 1.0 - beta2.powi(t as i32);
    for i in 0..param.len() {
        let g = grad[i];
        m[i] = beta1 * m[i] + (1.0 - beta1) * g;
        v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        param[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}

/// Apply one Adam step over every parameter tensor.
pub fn adam_step(
    params: &mut NetworkParams,
    grads: &Gradients,
    state: &mut AdamState,
    lr: f64,
    config: &TrainConfig,
) -> Result<()> {
    state.t += 1;
    let grad_slices = grads.slices();
    let mut param_slices = params.param_slices_mut();
    if grad_slices.len() != param_slices.len() || grad_slices.len() != state.m.len() {
        return Err(Error::ShapeMismatch(
            "gradients / parameters / Adam state disagree".into(),
        ));
    }
    for (i, ((_, p), (_, g))) in param_slices.iter_mut().zip(&grad_slices).enumerate() {
        if p.len() != g.len() {
            return Err(Error::ShapeMismatch(format!(
                "tensor {i}: {} params vs {} gradients",
                p.len(),
                g.len()
            )));
        }
        adam_update(
            p,
            g,
            &mut state.m[i],
            &mut state.v[i],
            state.t,
            lr,
            config.adam_beta1,
            config.adam_beta2,
            config.adam_eps,
        );
    }
    Ok(())
}

/// Step-decay schedule: `base_lr * 2^-floor(iteration / period)`.
pub fn lr_at(iteration: usize, config: &TrainConfig) -> f64 {
    config.base_lr * 0.5f64.powi((iteration / config.lr_halving_period) as i32)
}
