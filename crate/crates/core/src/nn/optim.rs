use serde::{Deserialize, Serialize};

use super::params::{Grads, ParamId, ParamStore};
use super::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// First and second moment estimates for every parameter of a store.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

/// What one [`adamw_step`] did.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct StepReport {
    pub updated: usize,
    /// Parameters left untouched because their gradient had a NaN or infinity.
    pub skipped_non_finite: Vec<String>,
}

impl OptimizerState {
    pub fn new(params: &ParamStore) -> Self {
        let zeros: Vec<Tensor> = params.iter().map(|(_, _, t)| Tensor::zeros(t.shape())).collect();
        Self {
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn matches(&self, params: &ParamStore) -> bool {
        self.m.len() == params.len()
            && self.v.len() == params.len()
            && params
                .iter()
                .all(|(id, _, t)| self.m[id.0].shape() == t.shape() && self.v[id.0].shape() == t.shape())
    }
}

/// Decoupled-weight-decay Adam update of every parameter that has a gradient.
pub fn adamw_step(params: &mut ParamStore, grads: &Grads, state: &mut OptimizerState, cfg: &AdamWConfig) -> StepReport {
    assert!(state.matches(params), "optimizer state does not match parameters");
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    let mut report = StepReport::default();
    for i in 0..params.len() {
        let id = ParamId(i);
        let Some(g) = grads.get(id) else { continue };
        if !g.is_finite() {
            report.skipped_non_finite.push(params.name(id).to_string());
            continue;
        }
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        let p = params.get_mut(id).data_mut();
        for j in 0..p.len() {
            let gj = g.data()[j];
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * gj;
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * gj * gj;
            let mh = if bc1 > 0.0 { m[j] / bc1 } else { m[j] };
            let vh = if bc2 > 0.0 { v[j] / bc2 } else { v[j] };
            p[j] -= cfg.lr * (mh / (vh.sqrt() + cfg.eps) + cfg.weight_decay * p[j]);
        }
        report.updated += 1;
    }
    report
}
