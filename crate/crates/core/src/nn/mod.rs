//! Small deterministic neural-network kernel: just enough layers, losses and
//! optimisation for the two beam predictors. Every numeric routine is generic
//! over [`Scalar`], so verification runs in `f64` and training in `f32`.
//!
//! Activations are plain row-major slices; layers own their parameters as
//! [`Tensor`]s and gradients live in a second instance of the same layer or
//! model (see [`Parameterized::zeros_like`]).

mod checkpoint;
mod gradcheck;
mod layers;
mod loss;
mod lstm;
mod optim;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub use checkpoint::{load_checkpoint, read_manifest, save_checkpoint, CheckpointManifest, ParamEntry};
pub use gradcheck::{grad_check, grad_check_params, GradCheckConfig};
pub use layers::{avgpool2, avgpool2_backward, pooled_dims, relu_backward, relu_inplace, Conv2d, Dense};
pub use loss::{softmax, softmax_xent};
pub use lstm::{Lstm, LstmCache};
pub use optim::{adam_step, lr_schedule, AdamState, TrainConfig};

/// Dense row-major array with an explicit shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![T::zero(); shape.iter().product()],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape(format!(
                "shape {shape:?} needs {n} values, got {}",
                data.len()
            )));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    /// Uniform in `[-bound, bound]`.
    pub fn uniform(shape: &[usize], bound: f64, rng: &mut ChaCha8Rng) -> Self {
        let n = shape.iter().product();
        let data = (0..n).map(|_| T::of(rng.gen_range(-bound..=bound))).collect();
        Self {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn fill_zero(&mut self) {
        self.data.iter_mut().for_each(|v| *v = T::zero());
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| U::of(v.as_f64())).collect(),
        }
    }
}

/// Anything that owns a fixed, ordered list of parameter tensors.
pub trait Parameterized<T: Scalar> {
    fn params(&self) -> Vec<&Tensor<T>>;
    fn params_mut(&mut self) -> Vec<&mut Tensor<T>>;

    /// Stable names, aligned with [`Parameterized::params`].
    fn param_names(&self) -> Vec<String>;

    fn n_params(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    /// Same structure with every parameter zeroed: the gradient accumulator.
    fn zeros_like(&self) -> Self
    where
        Self: Clone,
    {
        let mut g = self.clone();
        g.zero_params();
        g
    }

    fn zero_params(&mut self) {
        for p in self.params_mut() {
            p.fill_zero();
        }
    }

    /// `self += alpha * other`, parameter-wise.
    fn axpy(&mut self, alpha: T, other: &Self) {
        for (p, q) in self.params_mut().into_iter().zip(other.params()) {
            for (a, &b) in p.data_mut().iter_mut().zip(q.data()) {
                *a += alpha * b;
            }
        }
    }
}

/// A model mapping one input to `n_classes` logits, trained with softmax
/// cross-entropy. Labels are 0-based class indices.
pub trait Classifier<T: Scalar>: Parameterized<T> + Clone {
    type Input<'a>;

    fn n_classes(&self) -> usize;

    fn logits_batch(&self, xs: &[Self::Input<'_>]) -> Result<Vec<Vec<T>>>;

    /// Mean cross-entropy over the batch; its gradient is added to `grad`.
    fn loss_grad_batch(&self, xs: &[Self::Input<'_>], labels: &[usize], grad: &mut Self) -> Result<T>;

    fn loss_batch(&self, xs: &[Self::Input<'_>], labels: &[usize]) -> Result<T> {
        check_labels(xs.len(), labels)?;
        let logits = self.logits_batch(xs)?;
        let mut total = T::zero();
        for (z, &y) in logits.iter().zip(labels) {
            total += softmax_xent(z, y)?.0;
        }
        Ok(total / T::of(labels.len().max(1) as f64))
    }
}

pub(crate) fn check_labels(n: usize, labels: &[usize]) -> Result<()> {
    if n != labels.len() {
        return Err(Error::shape(format!("{n} inputs but {} labels", labels.len())));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;

    #[test]
    fn tensor_shape_checks() {
        assert!(Tensor::<f64>::from_vec(&[2, 3], vec![0.0; 6]).is_ok());
        assert!(matches!(
            Tensor::<f64>::from_vec(&[2, 3], vec![0.0; 5]),
            Err(Error::Shape(_))
        ));
        let t = Tensor::<f32>::uniform(&[4, 5], 0.5, &mut stream_rng(1, 0, 0));
        assert_eq!(t.len(), 20);
        assert!(t.data().iter().all(|v| v.abs() <= 0.5));
    }
}
