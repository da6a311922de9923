use serde::{Deserialize, Serialize};

use super::params::{Gradients, ParamStore};
use super::Tensor;
use crate::error::{structure_err, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates, one buffer per parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Tensor<f32>>,
    pub v: Vec<Tensor<f32>>,
}

impl AdamState {
    pub fn new(params: &ParamStore<f32>) -> Self {
        let zeros: Vec<Tensor<f32>> = (0..params.len())
            .map(|i| Tensor::zeros(params.tensor(i).shape()))
            .collect();
        Self {
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }
}

/// One bias-corrected Adam update. Parameters without a gradient are treated
/// as having a zero gradient.
pub fn adam_step(
    params: &mut ParamStore<f32>,
    grads: &Gradients<f32>,
    state: &mut AdamState,
    lr: f64,
    cfg: &AdamConfig,
) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return structure_err(format!(
            "adam: {} params, {} grads, {} moments",
            params.len(),
            grads.len(),
            state.m.len()
        ));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for id in 0..params.len() {
        let Some(g) = grads.get(id) else {
            // moments still decay
            for (m, v) in state.m[id]
                .data_mut()
                .iter_mut()
                .zip(state.v[id].data_mut())
            {
                *m = (cfg.beta1 * *m as f64) as f32;
                *v = (cfg.beta2 * *v as f64) as f32;
            }
            continue;
        };
        let p = params.tensor_mut(id).data_mut();
        let m = state.m[id].data_mut();
        let v = state.v[id].data_mut();
        for i in 0..p.len() {
            let gi = g.data()[i] as f64;
            let mi = cfg.beta1 * m[i] as f64 + (1.0 - cfg.beta1) * gi;
            let vi = cfg.beta2 * v[i] as f64 + (1.0 - cfg.beta2) * gi * gi;
            m[i] = mi as f32;
            v[i] = vi as f32;
            let update = lr * (mi / c1) / ((vi / c2).sqrt() + cfg.eps);
            p[i] = (p[i] as f64 - update) as f32;
        }
    }
    Ok(())
}
