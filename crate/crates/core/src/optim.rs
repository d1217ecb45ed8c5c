//! Full-batch AdamW with decoupled weight decay.
//!
//! Update per scalar: m <- b1 m + (1-b1) g; v <- b2 v + (1-b2) g^2;
//! with bias correction m_hat = m/(1-b1^t), v_hat = v/(1-b2^t) and
//! theta <- theta - lr (m_hat/(sqrt(v_hat)+eps) + wd * theta).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-8,
            weight_decay: 1.0,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.weight_decay >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!(
                "bad optimizer config: {self:?}"
            )))
        }
    }
}

/// First/second moment accumulators congruent to the flat parameter vector.
#[derive(Debug, Clone)]
pub struct OptimizerState<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub t: u64,
}

impl<T: Real> OptimizerState<T> {
    pub fn new(n_params: usize) -> Self {
        OptimizerState {
            m: vec![T::zero(); n_params],
            v: vec![T::zero(); n_params],
            t: 0,
        }
    }
}

/// One AdamW step in place. Gradients must be finite.
pub fn adamw_step<T: Real>(
    params: &mut [T],
    grads: &[T],
    state: &mut OptimizerState<T>,
    cfg: &OptimizerConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::Precondition(
            "params, grads and optimizer state must be congruent".into(),
        ));
    }
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(Error::Numerical("NaN/Inf in gradients".into()));
    }
    state.t += 1;
    let b1 = T::of(cfg.beta1);
    let b2 = T::of(cfg.beta2);
    let one = T::one();
    // Bias-correction factors computed in f64 to avoid f32 pow drift.
    let c1 = T::of(1.0 / (1.0 - cfg.beta1.powi(state.t as i32)));
    let c2 = T::of(1.0 / (1.0 - cfg.beta2.powi(state.t as i32)));
    let lr = T::of(cfg.lr);
    let eps = T::of(cfg.eps);
    let wd = T::of(cfg.weight_decay);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = b1 * state.m[i] + (one - b1) * g;
        state.v[i] = b2 * state.v[i] + (one - b2) * g * g;
        let m_hat = state.m[i] * c1;
        let v_hat = state.v[i] * c2;
        params[i] = params[i] - lr * (m_hat / (v_hat.sqrt() + eps) + wd * params[i]);
    }
    Ok(())
}
