use alloc::vec::Vec;

use super::ModelParams;
use crate::{Error, Result};

/// Central-difference gradient of `loss` at `params`:
/// `(f(p + eps e_i) - f(p - eps e_i)) / (2 eps)` for every coordinate.
pub fn finite_diff_gradient<F>(mut loss: F, params: &ModelParams, eps: f64) -> Result<ModelParams>
where
    F: FnMut(&ModelParams) -> f64,
{
    if eps.is_nan() || eps <= 0.0 {
        return Err(Error::Validation("finite-difference step must be positive".into()));
    }
    let mut probe = params.clone();
    let mut grad = Vec::with_capacity(params.len());
    for i in 0..params.len() {
        let orig = probe.values[i];
        probe.values[i] = orig + eps;
        let up = loss(&probe);
        probe.values[i] = orig - eps;
        let down = loss(&probe);
        probe.values[i] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::NonFinite("finite-difference probe"));
        }
        grad.push((up - down) / (2.0 * eps));
    }
    Ok(ModelParams {
        values: grad,
        layout: params.layout.clone(),
    })
}

/// `||a - b|| / max(||a||, ||b||)`, zero when both vectors are zero.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "relative_error on different lengths");
    let norm = |v: &mut dyn Iterator<Item = f64>| libm::sqrt(v.map(|x| x * x).sum());
    let diff = norm(&mut a.iter().zip(b).map(|(x, y)| x - y));
    let scale = norm(&mut a.iter().copied()).max(norm(&mut b.iter().copied()));
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}
