use serde::{Deserialize, Serialize};

use super::{ModelParams, Real};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<F> {
    pub m: ModelParams<F>,
    pub v: ModelParams<F>,
    pub step: u64,
}

impl<F: Real> AdamState<F> {
    pub fn new(like: &ModelParams<F>) -> Self {
        Self {
            m: like.zeros_like(),
            v: like.zeros_like(),
            step: 0,
        }
    }
}

/// One bias-corrected Adam update.
pub fn adam_step<F: Real>(
    params: &mut ModelParams<F>,
    grads: &ModelParams<F>,
    state: &mut AdamState<F>,
    cfg: &AdamConfig,
) {
    state.step += 1;
    let c = |v: f64| F::from_f64(v).unwrap_or_else(F::zero);
    let t = state.step as i32;
    let b1 = c(cfg.beta1);
    let b2 = c(cfg.beta2);
    let one = F::one();
    let corr1 = one - c(cfg.beta1.powi(t));
    let corr2 = one - c(cfg.beta2.powi(t));
    let lr = c(cfg.learning_rate);
    let eps = c(cfg.epsilon);
    let g_all = grads.tensors();
    for (((p, m), v), (_, _, g)) in params
        .tensors_mut()
        .into_iter()
        .zip(state.m.tensors_mut())
        .zip(state.v.tensors_mut())
        .zip(g_all)
    {
        for i in 0..p.len() {
            let gi = g[i];
            m[i] = b1 * m[i] + (one - b1) * gi;
            v[i] = b2 * v[i] + (one - b2) * gi * gi;
            let m_hat = m[i] / corr1;
            let v_hat = v[i] / corr2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}
