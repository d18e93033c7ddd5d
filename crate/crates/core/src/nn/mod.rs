//! Layers with hand-written backward passes, plus loss, optimizer and
//! training-trick helpers.

mod conv;
mod linear;
mod loss;
mod mixup;
mod optim;
mod pool;
mod relu;
mod schedule;
mod se;

pub use conv::Conv2d;
pub use linear::Linear;
pub use loss::{smooth_targets, softmax, softmax_cross_entropy, Targets};
pub use mixup::{mixup_batch, mixup_with, sample_beta, MixedBatch};
pub use optim::Sgd;
pub use pool::{GlobalAvgPool, MaxPool2d};
pub use relu::Relu;
pub use schedule::{cosine_lr, LrSchedule};
pub use se::SeBlock;

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// A trainable tensor and its accumulated gradient.
#[derive(Debug, Clone)]
pub struct Param<T: Scalar = f32> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
}

impl<T: Scalar> Param<T> {
    pub fn new(name: impl Into<String>, value: Tensor<T>) -> Self {
        let grad = Tensor::zeros(value.shape().to_vec());
        Self {
            name: name.into(),
            value,
            grad,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(T::zero());
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}

/// Forward/backward contract shared by every layer.
///
/// `forward` caches what `backward` needs; `backward` consumes that cache, so
/// it can run at most once per `forward`. `infer` never touches the cache and
/// is safe to call concurrently on a frozen layer.
pub trait Layer<T: Scalar>: Send + Sync {
    fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>>;

    fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>>;

    /// Accumulates parameter gradients and returns the input gradient.
    fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>>;

    fn params(&self) -> Vec<&Param<T>> {
        Vec::new()
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        Vec::new()
    }

    /// Distance of the last cached forward pass from a non-differentiable
    /// point (ReLU at zero, max-pool ties). `None` for smooth layers.
    fn kink_distance(&self) -> Option<f64> {
        None
    }
}

pub(crate) fn missing_forward(layer: &str) -> Error {
    Error::usage(format!("{layer}: backward called without a cached forward pass"))
}

/// Kaiming-uniform weights: `U(-b, b)` with `b = sqrt(6 / fan_in)`.
pub fn kaiming_uniform<T: Scalar, R: Rng + ?Sized>(
    shape: impl Into<Vec<usize>>,
    fan_in: usize,
    rng: &mut R,
) -> Tensor<T> {
    let bound = (6.0 / fan_in as f64).sqrt();
    Tensor::from_fn(shape, |_| T::from_f64_lossy(rng.random_range(-bound..bound)))
}

/// Kaiming-uniform with leaky slope `sqrt(5)`: `U(-b, b)` with `b = 1 / sqrt(fan_in)`.
/// Used for fully connected layers so initial logits stay near zero.
pub fn fan_in_uniform<T: Scalar, R: Rng + ?Sized>(
    shape: impl Into<Vec<usize>>,
    fan_in: usize,
    rng: &mut R,
) -> Tensor<T> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    Tensor::from_fn(shape, |_| T::from_f64_lossy(rng.random_range(-bound..bound)))
}

/// Layers applied in order.
#[derive(Default)]
pub struct Sequential<T: Scalar = f32> {
    layers: Vec<Box<dyn Layer<T>>>,
}

impl<T: Scalar> Sequential<T> {
    pub fn new() -> Self {
        Self { layers: Vec::new() }
    }

    pub fn push(&mut self, layer: impl Layer<T> + 'static) {
        self.layers.push(Box::new(layer));
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }
}

impl<T: Scalar> Layer<T> for Sequential<T> {
    fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut layers = self.layers.iter_mut();
        let Some(first) = layers.next() else {
            return Ok(x.clone());
        };
        let mut h = first.forward(x)?;
        for layer in layers {
            h = layer.forward(&h)?;
        }
        Ok(h)
    }

    fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut layers = self.layers.iter();
        let Some(first) = layers.next() else {
            return Ok(x.clone());
        };
        let mut h = first.infer(x)?;
        for layer in layers {
            h = layer.infer(&h)?;
        }
        Ok(h)
    }

    fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = grad.clone();
        for layer in self.layers.iter_mut().rev() {
            g = layer.backward(&g)?;
        }
        Ok(g)
    }

    fn params(&self) -> Vec<&Param<T>> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }

    fn kink_distance(&self) -> Option<f64> {
        self.layers
            .iter()
            .filter_map(|l| l.kink_distance())
            .reduce(f64::min)
    }
}
