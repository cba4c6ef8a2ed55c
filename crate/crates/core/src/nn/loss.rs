use alloc::format;
use alloc::vec;

use super::Tensor;
use crate::{Error, Result};

/// Mean softmax cross-entropy over the batch and its gradient w.r.t. the
/// logits. Uses max-subtracted log-sum-exp.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let (rows, classes) = (logits.rows(), logits.cols());
    if labels.len() != rows {
        return Err(Error::shape("cross-entropy labels", &[rows], &[labels.len()]));
    }
    if rows == 0 {
        return Err(Error::Validation("cross-entropy over an empty batch".into()));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
        return Err(Error::Validation(format!(
            "label {bad} out of range for {classes} classes"
        )));
    }
    let scale = 1.0 / rows as f64;
    let mut grad = vec![0.0; rows * classes];
    let mut total = 0.0;
    for (r, &y) in labels.iter().enumerate() {
        let z = logits.row(r);
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = z.iter().map(|&v| libm::exp(v - max)).sum();
        let lse = max + libm::log(sum);
        total += lse - z[y];
        let g = &mut grad[r * classes..(r + 1) * classes];
        for (gj, &zj) in g.iter_mut().zip(z) {
            *gj = libm::exp(zj - lse) * scale;
        }
        g[y] -= scale;
    }
    let loss = total * scale;
    if !loss.is_finite() {
        return Err(Error::NonFinite("cross-entropy"));
    }
    Ok((loss, Tensor::matrix(rows, classes, grad)?))
}
