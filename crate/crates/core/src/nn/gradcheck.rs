//! Central finite-difference checks of tape gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::ops::{Eval, Graph, Ops};
use super::params::{ParamId, ParamStore};
use super::tensor::Tensor;

/// A scalar-valued function written once against [`Ops`].
pub trait ScalarFn {
    fn eval<O: Ops>(&self, o: &mut O, inputs: &[O::T]) -> O::T;
}

#[derive(Clone, Debug)]
pub struct CheckReport {
    pub max_rel_err: f64,
    pub worst: String,
    pub checked: usize,
    /// Elements skipped because a non-differentiable point lies within one step.
    pub kinks: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct CheckConfig {
    pub step: f64,
    /// Denominator floor so entries with vanishing gradient compare absolutely.
    pub floor: f64,
    /// Cap on checked elements per tensor; the rest are sampled out.
    pub max_per_tensor: usize,
    pub seed: u64,
    /// When set, elements whose one-sided differences disagree by more than this
    /// relative amount sit on a kink and are skipped.
    pub kink_tolerance: Option<f64>,
}

impl Default for CheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-5,
            floor: 1e-6,
            max_per_tensor: 64,
            seed: 7,
            kink_tolerance: None,
        }
    }
}

pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

fn value(f: &impl ScalarFn, params: &ParamStore, inputs: &[Tensor]) -> f64 {
    let mut o = Eval::new(params);
    let ins: Vec<Tensor> = inputs.to_vec();
    let out = f.eval(&mut o, &ins);
    assert_eq!(out.len(), 1, "function must return one value");
    out.data()[0]
}

/// Compare analytic gradients for `inputs` and every parameter in `params`
/// (or only those listed in `only`) against central differences.
pub fn check(f: &impl ScalarFn, params: &ParamStore, inputs: &[Tensor], only: Option<&[ParamId]>, cfg: &CheckConfig) -> CheckReport {
    let mut g = Graph::new(params);
    let vars: Vec<_> = inputs.iter().map(|t| g.constant(t.clone())).collect();
    let param_ids: Vec<ParamId> = match only {
        Some(ids) => ids.to_vec(),
        None => params.ids().collect(),
    };
    for &id in &param_ids {
        g.param(id);
    }
    let loss = f.eval(&mut g, &vars);
    let grads = g.backward(loss);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut report = CheckReport {
        max_rel_err: 0.0,
        worst: String::new(),
        checked: 0,
        kinks: 0,
    };
    let base = cfg.kink_tolerance.map(|_| value(f, params, inputs));
    let on_kink = |up: f64, down: f64| match (cfg.kink_tolerance, base) {
        (Some(tol), Some(b)) => rel_err((up - b) / cfg.step, (b - down) / cfg.step, cfg.floor) > tol,
        _ => false,
    };
    let note = |report: &mut CheckReport, a: f64, fd: f64, what: String| {
        let e = rel_err(a, fd, cfg.floor);
        report.checked += 1;
        if e >= report.max_rel_err {
            report.max_rel_err = e;
            report.worst = format!("{what}: analytic {a:e} numeric {fd:e}");
        }
    };

    for (k, t) in inputs.iter().enumerate() {
        let zeros = Tensor::zeros(t.shape());
        let ga = grads.wrt(vars[k]).unwrap_or(&zeros);
        let picks = sample(&mut rng, t.len(), t.len().min(cfg.max_per_tensor));
        for j in picks {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[j] += cfg.step;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[j] -= cfg.step;
            let (up, down) = (value(f, params, &plus), value(f, params, &minus));
            if on_kink(up, down) {
                report.kinks += 1;
                continue;
            }
            let fd = (up - down) / (2.0 * cfg.step);
            note(&mut report, ga.data()[j], fd, format!("input {k}[{j}]"));
        }
    }

    for &id in &param_ids {
        let t = params.get(id);
        let zeros = Tensor::zeros(t.shape());
        let ga = grads.params().get(id).unwrap_or(&zeros);
        let picks = sample(&mut rng, t.len(), t.len().min(cfg.max_per_tensor));
        for j in picks {
            let mut p = params.clone();
            p.get_mut(id).data_mut()[j] += cfg.step;
            let up = value(f, &p, inputs);
            p.get_mut(id).data_mut()[j] -= 2.0 * cfg.step;
            let down = value(f, &p, inputs);
            if on_kink(up, down) {
                report.kinks += 1;
                continue;
            }
            let fd = (up - down) / (2.0 * cfg.step);
            note(&mut report, ga.data()[j], fd, format!("{}[{j}]", params.name(id)));
        }
    }
    report
}
