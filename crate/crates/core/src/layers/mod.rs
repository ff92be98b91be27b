//! Forward and backward passes for every layer type in the network.

mod conv;
mod pool;

pub use conv::{ConvGrad, ConvLayer};
pub use pool::{maxpool_backward, maxpool_forward, pooled_extent, SwitchRecord};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::tensor::{gemm, Real, Tensor, TensorError};

#[derive(Debug, Error)]
pub enum LayerError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("invalid layer configuration: {0}")]
    Config(String),
    #[error("label {label} outside 0..{classes}")]
    Label { label: usize, classes: usize },
}

pub fn relu_forward(x: &Tensor) -> Tensor {
    x.map(|v| if v > 0.0 { v } else { 0.0 })
}

/// Passes `grad_out` where `saved_input > 0`; the gradient at exactly 0 is 0.
pub fn relu_backward(grad_out: &Tensor, saved_input: &Tensor) -> Result<Tensor, LayerError> {
    if grad_out.shape() != saved_input.shape() {
        return Err(LayerError::Shape(format!(
            "relu gradient {:?} vs input {:?}",
            grad_out.shape(),
            saved_input.shape()
        )));
    }
    let data = grad_out
        .data()
        .iter()
        .zip(saved_input.data())
        .map(|(&g, &x)| if x > 0.0 { g } else { 0.0 })
        .collect();
    Ok(Tensor::from_values(grad_out.shape(), data)?)
}

/// Fully connected layer `y = W x + b` over a flattened input.
#[derive(Clone, Debug, PartialEq)]
pub struct FcLayer {
    /// `[out, in]`
    pub weights: Tensor,
    /// `[out]`
    pub bias: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FcGrad {
    pub weights: Tensor,
    pub bias: Tensor,
}

impl FcGrad {
    pub fn zero(&mut self) {
        self.weights.fill(0.0);
        self.bias.fill(0.0);
    }
}

impl FcLayer {
    pub fn new(in_features: usize, out_features: usize) -> Result<Self, LayerError> {
        Ok(Self {
            weights: Tensor::zeros(&[out_features, in_features])?,
            bias: Tensor::zeros(&[out_features])?,
        })
    }

    pub fn init_gaussian<R: Rng + ?Sized>(&mut self, std: f64, rng: &mut R) {
        for w in self.weights.data_mut() {
            let z: f64 = StandardNormal.sample(rng);
            *w = (z * std) as Real;
        }
        self.bias.fill(0.0);
    }

    pub fn in_features(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn out_features(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn zero_grad(&self) -> FcGrad {
        FcGrad {
            weights: self.weights.zeros_like(),
            bias: self.bias.zeros_like(),
        }
    }

    /// Accepts any input with `in_features` elements; output is `[out]`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor, LayerError> {
        if x.len() != self.in_features() {
            return Err(LayerError::Shape(format!(
                "fc expects {} inputs, got {:?}",
                self.in_features(),
                x.shape()
            )));
        }
        let mut out = self.bias.data().to_vec();
        gemm(
            self.out_features(),
            self.in_features(),
            1,
            1.0,
            self.weights.data(),
            false,
            x.data(),
            false,
            1.0,
            &mut out,
        );
        Ok(Tensor::from_values(&[self.out_features()], out)?)
    }

    /// Returns `∂L/∂x` shaped like `saved_input`; accumulates parameter gradients.
    pub fn backward(
        &self,
        grad_out: &Tensor,
        saved_input: &Tensor,
        grads: &mut FcGrad,
    ) -> Result<Tensor, LayerError> {
        if grad_out.len() != self.out_features() || saved_input.len() != self.in_features() {
            return Err(LayerError::Shape(format!(
                "fc backward: gradient {:?}, input {:?} for layer {}->{}",
                grad_out.shape(),
                saved_input.shape(),
                self.in_features(),
                self.out_features()
            )));
        }
        gemm(
            self.out_features(),
            1,
            self.in_features(),
            1.0,
            grad_out.data(),
            false,
            saved_input.data(),
            false,
            1.0,
            grads.weights.data_mut(),
        );
        for (gb, &g) in grads.bias.data_mut().iter_mut().zip(grad_out.data()) {
            *gb += g;
        }
        let mut gx = vec![0.0; self.in_features()];
        gemm(
            self.in_features(),
            self.out_features(),
            1,
            1.0,
            self.weights.data(),
            true,
            grad_out.data(),
            false,
            0.0,
            &mut gx,
        );
        Ok(Tensor::from_values(saved_input.shape(), gx)?)
    }
}

pub fn softmax(logits: &Tensor) -> Tensor {
    let max = logits
        .data()
        .iter()
        .copied()
        .fold(Real::NEG_INFINITY, Real::max);
    let exps = logits.map(|v| (v - max).exp());
    let sum: Real = exps.data().iter().sum();
    exps.scale(1.0 / sum)
}

/// Returns `(−log p[label], p − onehot(label))`.
pub fn softmax_cross_entropy(logits: &Tensor, label: usize) -> Result<(f64, Tensor), LayerError> {
    let classes = logits.len();
    if label >= classes {
        return Err(LayerError::Label { label, classes });
    }
    let max = logits
        .data()
        .iter()
        .copied()
        .fold(Real::NEG_INFINITY, Real::max) as f64;
    let log_sum = logits
        .data()
        .iter()
        .map(|&v| (v as f64 - max).exp())
        .sum::<f64>()
        .ln()
        + max;
    let loss = log_sum - logits.data()[label] as f64;
    let mut grad = softmax(logits);
    grad.data_mut()[label] -= 1.0;
    Ok((loss, grad))
}

/// Inverted dropout: kept units are scaled by `1/(1−p)` at train time so
/// inference is the identity.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dropout {
    pub p: f64,
}

/// Keep-mask of one dropout application, already holding the `1/(1−p)` scale.
#[derive(Clone, Debug)]
pub struct DropoutMask(Tensor);

impl Dropout {
    pub fn forward_train<R: Rng + ?Sized>(&self, x: &Tensor, rng: &mut R) -> (Tensor, DropoutMask) {
        let keep = (1.0 / (1.0 - self.p)) as Real;
        let values = (0..x.len())
            .map(|_| {
                if rng.random::<f64>() < self.p {
                    0.0
                } else {
                    keep
                }
            })
            .collect();
        let mask = Tensor::from_values(x.shape(), values).expect("mask shares input shape");
        let y = x.mul(&mask).expect("mask shares input shape");
        (y, DropoutMask(mask))
    }

    pub fn backward(&self, grad_out: &Tensor, mask: &DropoutMask) -> Result<Tensor, LayerError> {
        Ok(grad_out.mul(&mask.0)?)
    }
}

impl DropoutMask {
    pub fn dropped(&self) -> usize {
        self.0.data().iter().filter(|&&m| m == 0.0).count()
    }
}
