use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Numerically stable softmax (max-shifted).
pub fn softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    let m = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let e: Vec<T> = logits.iter().map(|&z| (z - m).exp()).collect();
    let s: T = e.iter().copied().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// `-log softmax(z)[label]` and its gradient `softmax(z) - onehot(label)`.
/// `label` is a 0-based class index.
pub fn softmax_xent<T: Scalar>(logits: &[T], label: usize) -> Result<(T, Vec<T>)> {
    if label >= logits.len() {
        return Err(Error::IndexOutOfRange {
            index: label + 1,
            max: logits.len(),
        });
    }
    let m = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let lse = m + logits.iter().map(|&z| (z - m).exp()).sum::<T>().ln();
    let loss = lse - logits[label];
    let mut grad: Vec<T> = logits.iter().map(|&z| (z - lse).exp()).collect();
    grad[label] -= T::one();
    Ok((loss, grad))
}
