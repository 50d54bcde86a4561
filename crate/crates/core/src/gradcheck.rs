//! Central finite-difference checks of tape gradients.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::autograd::{Tape, Var};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

/// Step used for central differences.
pub const FD_EPS: f64 = 1e-6;

/// Gradients smaller than this (times `max(1, |loss|)`) are compared in
/// absolute terms; finite-difference round-off grows with the loss value.
pub const REL_ERR_FLOOR: f64 = 1e-5;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    scaled_relative_error(analytic, numeric, 1.0)
}

fn scaled_relative_error(analytic: f64, numeric: f64, loss: f64) -> f64 {
    let floor = REL_ERR_FLOOR * loss.abs().max(1.0);
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_err: f64,
    pub worst: Option<String>,
}

impl GradCheckReport {
    fn new() -> Self {
        Self {
            checked: 0,
            max_rel_err: 0.0,
            worst: None,
        }
    }

    fn record(&mut self, label: impl FnOnce() -> String, analytic: f64, numeric: f64, loss: f64) {
        self.checked += 1;
        let err = scaled_relative_error(analytic, numeric, loss);
        if err > self.max_rel_err || self.worst.is_none() {
            self.max_rel_err = self.max_rel_err.max(err);
            self.worst = Some(format!(
                "{} analytic={analytic:.6e} numeric={numeric:.6e}",
                label()
            ));
        }
    }
}

/// Checks gradients of `build` with respect to every entry of every input.
/// Returns the worst relative error.
pub fn check_leaf_gradients<F>(inputs: &[Tensor], build: F) -> f64
where
    F: for<'a> Fn(&mut Tape<'a>, &[Var]) -> Var,
{
    leaf_gradient_report(inputs, build).max_rel_err
}

pub fn leaf_gradient_report<F>(inputs: &[Tensor], build: F) -> GradCheckReport
where
    F: for<'a> Fn(&mut Tape<'a>, &[Var]) -> Var,
{
    leaf_gradient_report_with(Tape::detached().store(), inputs, build)
}

/// Like [`leaf_gradient_report`], with parameters read from `store`.
pub fn leaf_gradient_report_with<F>(
    store: &ParamStore,
    inputs: &[Tensor],
    build: F,
) -> GradCheckReport
where
    F: for<'a> Fn(&mut Tape<'a>, &[Var]) -> Var,
{
    let eval = |values: &[Tensor]| -> f64 {
        let mut tape = Tape::new(store);
        let vars: Vec<Var> = values.iter().map(|t| tape.leaf(t.clone())).collect();
        let loss = build(&mut tape, &vars);
        tape.value(loss).item()
    };

    let mut tape = Tape::new(store);
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let loss = build(&mut tape, &vars);
    let grads = tape.backward(loss);
    let loss_value = tape.value(loss).item();

    let mut report = GradCheckReport::new();
    let mut values = inputs.to_vec();
    for (k, v) in vars.iter().enumerate() {
        let analytic = grads
            .wrt(*v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(inputs[k].rows(), inputs[k].cols()));
        for e in 0..inputs[k].len() {
            let orig = values[k].data()[e];
            values[k].data_mut()[e] = orig + FD_EPS;
            let plus = eval(&values);
            values[k].data_mut()[e] = orig - FD_EPS;
            let minus = eval(&values);
            values[k].data_mut()[e] = orig;
            let numeric = (plus - minus) / (2.0 * FD_EPS);
            report.record(
                || format!("input {k}[{e}]"),
                analytic.data()[e],
                numeric,
                loss_value,
            );
        }
    }
    report
}

/// Checks parameter gradients of `build` at the listed `(param, flat index)`
/// entries.
pub fn check_param_gradients<F>(
    store: &ParamStore,
    entries: &[(ParamId, usize)],
    build: F,
) -> GradCheckReport
where
    F: for<'a> Fn(&mut Tape<'a>) -> Var,
{
    let (analytic, loss_value) = {
        let mut tape = Tape::new(store);
        let loss = build(&mut tape);
        let value = tape.value(loss).item();
        (tape.backward(loss).into_param_grads(), value)
    };
    let eval = |s: &ParamStore| -> f64 {
        let mut tape = Tape::new(s);
        let loss = build(&mut tape);
        tape.value(loss).item()
    };

    let mut work = store.clone();
    let mut report = GradCheckReport::new();
    for &(id, e) in entries {
        let orig = work.get(id).data()[e];
        work.get_mut(id).data_mut()[e] = orig + FD_EPS;
        let plus = eval(&work);
        work.get_mut(id).data_mut()[e] = orig - FD_EPS;
        let minus = eval(&work);
        work.get_mut(id).data_mut()[e] = orig;
        let numeric = (plus - minus) / (2.0 * FD_EPS);
        let a = analytic[id.index()].as_ref().map_or(0.0, |g| g.data()[e]);
        report.record(
            || format!("{}[{e}]", store.param(id).name),
            a,
            numeric,
            loss_value,
        );
    }
    report
}

/// Every entry of the listed parameters.
pub fn all_entries(store: &ParamStore, ids: &[ParamId]) -> Vec<(ParamId, usize)> {
    ids.iter()
        .flat_map(|&id| (0..store.get(id).len()).map(move |e| (id, e)))
        .collect()
}

/// A random `fraction` of all scalar parameters, with at least
/// `min_per_tensor` entries drawn from each tensor.
pub fn sample_entries<R: Rng + ?Sized>(
    store: &ParamStore,
    fraction: f64,
    min_per_tensor: usize,
    rng: &mut R,
) -> Vec<(ParamId, usize)> {
    let mut out = Vec::new();
    for id in store.ids() {
        let n = store.get(id).len();
        let take = ((n as f64 * fraction).ceil() as usize)
            .max(min_per_tensor)
            .min(n);
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(rng);
        out.extend(idx.into_iter().take(take).map(|e| (id, e)));
    }
    out
}
