//! Softmax cross-entropy over one-hot targets:
//! `L = -(1/N) * sum_n sum_k t[n,k] * log softmax(y)[n,k]`
//! with the max-subtraction trick and probabilities clamped at 1e-12
//! before the log.

use super::tensor::{Element, Tensor};
use super::NnError;

/// Smallest probability fed to the log; the loss is undefined at p = 0.
const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct LossValue<E: Element = f32> {
    /// Mean negative log-likelihood in nats. Never negative.
    pub value: f64,
    /// dL/d(logits), same shape as the logits: `(softmax(y) - t) / N`.
    pub gradient: Tensor<E>,
}

/// Row-wise softmax probabilities computed in f64.
pub fn softmax_rows<E: Element>(logits: &Tensor<E>) -> Result<Vec<f64>, NnError> {
    let [n, c] = logits.dims2()?;
    let mut probs = vec![0.0f64; n * c];
    for i in 0..n {
        let row = &logits.data()[i * c..(i + 1) * c];
        let max = row
            .iter()
            .map(|v| v.to_f64())
            .fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0f64;
        for (j, v) in row.iter().enumerate() {
            let e = (v.to_f64() - max).exp();
            probs[i * c + j] = e;
            z += e;
        }
        for p in &mut probs[i * c..(i + 1) * c] {
            *p /= z;
        }
    }
    Ok(probs)
}

pub fn softmax_cross_entropy<E: Element>(
    logits: &Tensor<E>,
    targets: &Tensor<E>,
) -> Result<LossValue<E>, NnError> {
    let [n, c] = logits.dims2()?;
    if targets.shape() != logits.shape() {
        return Err(NnError::Shape(format!(
            "targets shape {:?} does not match logits shape {:?}",
            targets.shape(),
            logits.shape()
        )));
    }
    if n == 0 {
        return Err(NnError::Validation("loss over an empty batch".into()));
    }
    for i in 0..n {
        let row = &targets.data()[i * c..(i + 1) * c];
        let ones = row.iter().filter(|&&v| v.to_f64() == 1.0).count();
        let zeros = row.iter().filter(|&&v| v.to_f64() == 0.0).count();
        if ones != 1 || zeros != c - 1 {
            return Err(NnError::Validation(format!(
                "target row {i} is not one-hot: {:?}",
                row.iter().map(|v| v.to_f64()).collect::<Vec<_>>()
            )));
        }
    }

    let probs = softmax_rows(logits)?;
    let mut total = 0.0f64;
    let mut gradient = Tensor::zeros(logits.shape().to_vec());
    for i in 0..n {
        for j in 0..c {
            let idx = i * c + j;
            let p = probs[idx];
            let t = targets.data()[idx].to_f64();
            if t != 0.0 {
                total -= t * p.max(PROB_FLOOR).ln();
            }
            gradient.data_mut()[idx] = E::from_f64((p - t) / n as f64);
        }
    }
    Ok(LossValue {
        value: total / n as f64,
        gradient,
    })
}
