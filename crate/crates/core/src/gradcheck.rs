//! Central finite-difference comparison against the tape gradients.

use alloc::string::String;
use alloc::vec::Vec;

use crate::autograd::{Graph, Var};
use crate::error::{invalid, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    /// Largest `|analytic − numeric| / max(|analytic|, |numeric|, floor)`.
    pub max_rel_err: f64,
    /// Parameter name and flat index of the worst entry.
    pub worst: (String, usize),
    pub checked: usize,
}

/// Compares `∂loss/∂θ` from the tape with `(f(θ+h) − f(θ−h)) / 2h` for every
/// scalar of every parameter in `store`. `floor` bounds the denominator away
/// from zero for vanishing gradients.
pub fn check_gradients(
    store: &ParamStore<f64>,
    h: f64,
    floor: f64,
    loss: impl Fn(&mut Graph<f64>, &ParamStore<f64>) -> Result<Var>,
) -> Result<GradCheck> {
    if !(h > 0.0) || !(floor > 0.0) {
        return Err(invalid("step and floor must be positive"));
    }
    let mut g = Graph::tracking(store);
    let l = loss(&mut g, store)?;
    let grads = g.backward(l)?;
    let eval = |s: &ParamStore<f64>| -> Result<f64> {
        let mut g = Graph::new();
        let l = loss(&mut g, s)?;
        g.value(l).item()
    };
    let mut probe = store.clone();
    let mut report = GradCheck {
        max_rel_err: 0.0,
        worst: (String::new(), 0),
        checked: 0,
    };
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let base = store.get(id).clone();
        let analytic = grads.get(id).cloned().unwrap_or_else(|| Tensor::zeros(base.shape()));
        for i in 0..base.numel() {
            let mut plus = base.data().to_vec();
            plus[i] += h;
            probe.set(id, Tensor::new(base.shape().to_vec(), plus)?)?;
            let fp = eval(&probe)?;
            let mut minus = base.data().to_vec();
            minus[i] -= h;
            probe.set(id, Tensor::new(base.shape().to_vec(), minus)?)?;
            let fm = eval(&probe)?;
            let numeric = (fp - fm) / (2.0 * h);
            let a = analytic.data()[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst = (String::from(store.name(id)), i);
            }
            report.checked += 1;
        }
        probe.set(id, base)?;
    }
    Ok(report)
}
