use crate::error::{Error, Result};

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|&z| (z - m).exp()).sum::<f64>().ln();
    logits.iter().map(|&z| z - lse).collect()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    log_softmax(logits).into_iter().map(f64::exp).collect()
}

/// Cross-entropy of `logits` against `label`, with gradient
/// `softmax(logits) - one_hot(label)`.
pub fn loss_softmax_ce(logits: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
    if label >= logits.len() {
        return Err(Error::Index {
            index: label,
            len: logits.len(),
        });
    }
    let lp = log_softmax(logits);
    let mut grad: Vec<f64> = lp.iter().map(|v| v.exp()).collect();
    grad[label] -= 1.0;
    Ok((-lp[label], grad))
}

pub fn loss_mse(pred: f64, target: f64) -> (f64, f64) {
    let e = pred - target;
    (e * e, 2.0 * e)
}
