//! First-order optimizers over flat [`ParamVector`]s.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ParamVector;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: ParamVector,
    pub v: ParamVector,
    pub t: u64,
    pub config: AdamConfig,
}

impl AdamState {
    pub fn new(like: &ParamVector, config: AdamConfig) -> Self {
        Self {
            m: ParamVector::zeros(like.layout().to_vec()),
            v: ParamVector::zeros(like.layout().to_vec()),
            t: 0,
            config,
        }
    }
}

fn check_grads(params: &ParamVector, grads: &ParamVector) -> Result<()> {
    params.check_layout(grads)?;
    if let Some(i) = grads.values().iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite {
            param: grads.name_at(i).to_string(),
        });
    }
    Ok(())
}

/// One bias-corrected ADAM update; `state.t` is incremented first.
pub fn adam_step(params: &mut ParamVector, grads: &ParamVector, state: &mut AdamState, lr: f64) -> Result<()> {
    check_grads(params, grads)?;
    params.check_layout(&state.m)?;
    state.t += 1;
    let AdamConfig { beta1, beta2, epsilon } = state.config;
    let bc1 = 1.0 - beta1.powi(state.t as i32);
    let bc2 = 1.0 - beta2.powi(state.t as i32);
    let m = state.m.values_mut();
    let v = state.v.values_mut();
    for (i, (p, &g)) in params.values_mut().iter_mut().zip(grads.values()).enumerate() {
        m[i] = beta1 * m[i] + (1.0 - beta1) * g;
        v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        *p -= lr * m_hat / (v_hat.sqrt() + epsilon);
    }
    Ok(())
}

/// Plain gradient descent, `p ← p − lr·g`.
pub fn sgd_step(params: &mut ParamVector, grads: &ParamVector, lr: f64) -> Result<()> {
    check_grads(params, grads)?;
    for (p, &g) in params.values_mut().iter_mut().zip(grads.values()) {
        *p -= lr * g;
    }
    Ok(())
}
