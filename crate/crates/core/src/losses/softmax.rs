//! Row-wise softmax utilities shared by the loss kernels.

use ndarray::Array2;

use crate::error::{Error, Result};

/// Numerically stable row-wise log-softmax (max-shifted).
pub fn log_softmax_rows(x: &Array2<f64>) -> Array2<f64> {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| v - max);
        let lse = row.mapv(f64::exp).sum().ln();
        row.mapv_inplace(|v| v - lse);
    }
    out
}

/// Row-wise softmax.
pub fn softmax_rows(x: &Array2<f64>) -> Array2<f64> {
    log_softmax_rows(x).mapv(f64::exp)
}

/// Mean cross-entropy of integer labels under row-wise softmax.
/// Returns the loss and its gradient with respect to the logits,
/// `(softmax - onehot) / n`.
pub fn softmax_cross_entropy(
    logits: &Array2<f64>,
    labels: &[usize],
) -> Result<(f64, Array2<f64>)> {
    let (n, classes) = logits.dim();
    if n == 0 {
        return Err(Error::ShapeMismatch("empty batch".into()));
    }
    if labels.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "{n} logit rows but {} labels",
            labels.len()
        )));
    }
    for &y in labels {
        if y >= classes {
            return Err(Error::BadLabel { label: y, classes });
        }
    }
    let log_p = log_softmax_rows(logits);
    let mut loss = 0.0f64;
    for (i, &y) in labels.iter().enumerate() {
        loss -= log_p[(i, y)];
    }
    loss /= n as f64;

    let mut grad = log_p.mapv(f64::exp);
    for (i, &y) in labels.iter().enumerate() {
        grad[(i, y)] -= 1.0;
    }
    grad.mapv_inplace(|v| v / n as f64);
    Ok((loss, grad))
}
