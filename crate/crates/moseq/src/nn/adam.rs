//! Adam with bias correction, one moment pair per parameter tensor.

use crate::error::{Error, Result};

use super::{Gradients, TaggerParams, TENSOR_COUNT, TENSOR_NAMES};

#[derive(Debug, Clone)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(params: &TaggerParams, lr: f64) -> Self {
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: (0..TENSOR_COUNT).map(|i| vec![0.0; params.tensor(i).len()]).collect(),
            v: (0..TENSOR_COUNT).map(|i| vec![0.0; params.tensor(i).len()]).collect(),
        }
    }
}

/// One Adam update. Rejects non-finite gradients before touching any state
/// so a failed step leaves parameters and moments unchanged.
pub fn adam_step(params: &mut TaggerParams, grads: &Gradients, state: &mut AdamState) -> Result<()> {
    for i in 0..TENSOR_COUNT {
        let g = grads.tensor(i);
        if g.len() != params.tensor(i).len() {
            return Err(Error::Internal(format!(
                "gradient shape mismatch for {}",
                TENSOR_NAMES[i]
            )));
        }
        if let Some(j) = g.iter().position(|v| !v.is_finite()) {
            return Err(Error::Internal(format!(
                "non-finite gradient in {}[{j}]",
                TENSOR_NAMES[i]
            )));
        }
    }

    state.step += 1;
    let bc1 = 1.0 - state.beta1.powi(state.step as i32);
    let bc2 = 1.0 - state.beta2.powi(state.step as i32);
    for i in 0..TENSOR_COUNT {
        let g = grads.tensor(i);
        let p = params.tensor_mut(i);
        let m = &mut state.m[i];
        let v = &mut state.v[i];
        for j in 0..p.len() {
            m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * g[j];
            v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * g[j] * g[j];
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            p[j] -= state.lr * m_hat / (v_hat.sqrt() + state.eps);
        }
    }
    Ok(())
}
