//! Central finite-difference reference gradients.
//!
//! Only the forward pass is used here, so the results are independent of the
//! backward implementation they are compared against.

use crate::params::{ParamId, ParamStore};

/// Central difference of `loss` w.r.t. every scalar of parameter `id`.
pub fn numeric_param_grad(
    store: &mut ParamStore,
    id: ParamId,
    step: f64,
    mut loss: impl FnMut(&ParamStore) -> f64,
) -> Vec<f64> {
    let n = store.value(id).numel();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let orig = store.value(id).data()[i];
        store.get_mut(id).value.data_mut()[i] = orig + step;
        let plus = loss(store);
        store.get_mut(id).value.data_mut()[i] = orig - step;
        let minus = loss(store);
        store.get_mut(id).value.data_mut()[i] = orig;
        out.push((plus - minus) / (2.0 * step));
    }
    out
}

/// `|a - b| / max(|a|, |b|, floor)` maximized over entries.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// Relative error of whole gradient vectors, `||a - n|| / max(||a||, ||n||, floor)`.
pub fn vector_relative_error(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    let diff: f64 = analytic.iter().zip(numeric).map(|(a, n)| (a - n) * (a - n)).sum::<f64>().sqrt();
    let na: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nn: f64 = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
    diff / na.max(nn).max(floor)
}
