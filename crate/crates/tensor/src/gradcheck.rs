//! Central finite-difference verification of tape gradients.

use crate::{ParamStore, Result, Tape, Tensor, Var};

/// Largest relative error seen during a check, with where it happened.
#[derive(Clone, Debug, PartialEq)]
pub struct GradReport {
    pub max_rel_error: f64,
    pub worst: String,
    pub checked: usize,
}

/// `|a - n| / max(|a|, |n|, floor)`; the floor keeps near-zero gradients from
/// dominating through rounding noise.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-5)
}

/// Compares the tape gradient of the scalar `loss_fn` with central differences
/// of step `h`, over every entry of every input and every parameter in `store`.
pub fn check<L>(store: &ParamStore<f64>, inputs: &[Tensor<f64>], h: f64, loss_fn: L) -> Result<GradReport>
where
    L: Fn(&mut Tape<'_, f64>, &[Var]) -> Result<Var>,
{
    let eval = |store: &ParamStore<f64>, inputs: &[Tensor<f64>]| -> Result<f64> {
        let mut tape = Tape::new(store);
        let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
        let loss = loss_fn(&mut tape, &vars)?;
        Ok(tape.value(loss).scalar())
    };

    let mut tape = Tape::new(store);
    let vars: Vec<Var> = inputs.iter().map(|t| tape.input(t.clone())).collect();
    let loss = loss_fn(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;

    let mut report = GradReport {
        max_rel_error: 0.0,
        worst: String::new(),
        checked: 0,
    };
    let note = |a: f64, n: f64, what: String, report: &mut GradReport| {
        let e = relative_error(a, n);
        report.checked += 1;
        if e > report.max_rel_error || report.worst.is_empty() {
            report.max_rel_error = e.max(report.max_rel_error);
            report.worst = format!("{what}: analytic {a:e} numeric {n:e}");
        }
    };

    for (k, t) in inputs.iter().enumerate() {
        for i in 0..t.len() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[i] += h;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[i] -= h;
            let n = (eval(store, &plus)? - eval(store, &minus)?) / (2.0 * h);
            let a = grads.input(vars[k]).map_or(0.0, |g| g.data()[i]);
            note(a, n, format!("input {k}[{i}]"), &mut report);
        }
    }
    for p in 0..store.len() {
        for i in 0..store.by_index(p).len() {
            let mut plus = store.clone();
            plus.by_index_mut(p).data_mut()[i] += h;
            let mut minus = store.clone();
            minus.by_index_mut(p).data_mut()[i] -= h;
            let n = (eval(&plus, inputs)? - eval(&minus, inputs)?) / (2.0 * h);
            let a = grads.param(p).map_or(0.0, |g| g.data()[i]);
            note(a, n, format!("{}[{i}]", store.name(p)), &mut report);
        }
    }
    Ok(report)
}
