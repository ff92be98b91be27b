//! Same-padded, stride-1 2-D convolution realised as a matrix product over
//! unrolled input patches.
//!
//! Unrolling turns the convolution into `y = W · cols(x)`, so the linear map
//! `x ↦ y` is the operator `C`, and the input gradient `Cᵀ·∂L/∂y` is computed
//! as `col2im(Wᵀ · ∂L/∂y)`. Deconvolution reuses the same transpose.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::LayerError;
use crate::tensor::{gemm, Real, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer {
    in_channels: usize,
    out_channels: usize,
    kernel_size: usize,
    /// `[out, in, k, k]`
    pub kernels: Tensor,
    /// `[out]`
    pub bias: Tensor,
}

/// Gradient buffers matching a [`ConvLayer`]'s parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvGrad {
    pub kernels: Tensor,
    pub bias: Tensor,
}

impl ConvGrad {
    pub fn zero(&mut self) {
        self.kernels.fill(0.0);
        self.bias.fill(0.0);
    }
}

impl ConvLayer {
    /// Zero-initialised layer. `kernel_size` must be odd so that same padding
    /// is symmetric.
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel_size: usize,
    ) -> Result<Self, LayerError> {
        if kernel_size % 2 == 0 || in_channels == 0 || out_channels == 0 {
            return Err(LayerError::Config(format!(
                "conv layer needs odd kernel and nonzero channels, got {in_channels}->{out_channels} k={kernel_size}"
            )));
        }
        Ok(Self {
            in_channels,
            out_channels,
            kernel_size,
            kernels: Tensor::zeros(&[out_channels, in_channels, kernel_size, kernel_size])?,
            bias: Tensor::zeros(&[out_channels])?,
        })
    }

    /// Gaussian kernels with standard deviation `std`, zero bias.
    pub fn init_gaussian<R: Rng + ?Sized>(&mut self, std: f64, rng: &mut R) {
        for w in self.kernels.data_mut() {
            let z: f64 = StandardNormal.sample(rng);
            *w = (z * std) as Real;
        }
        self.bias.fill(0.0);
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn kernel_size(&self) -> usize {
        self.kernel_size
    }

    pub fn padding(&self) -> usize {
        self.kernel_size / 2
    }

    pub fn fan_in(&self) -> usize {
        self.in_channels * self.kernel_size * self.kernel_size
    }

    pub fn zero_grad(&self) -> ConvGrad {
        ConvGrad {
            kernels: self.kernels.zeros_like(),
            bias: self.bias.zeros_like(),
        }
    }

    fn check_input(&self, input: &Tensor) -> Result<(usize, usize), LayerError> {
        match *input.shape() {
            [c, h, w] if c == self.in_channels => Ok((h, w)),
            _ => Err(LayerError::Shape(format!(
                "conv expects [{}, H, W] input, got {:?}",
                self.in_channels,
                input.shape()
            ))),
        }
    }

    /// Unrolls `input` into a `[C·k·k, H·W]` patch matrix (zero padded).
    fn im2col(&self, input: &Tensor, h: usize, w: usize) -> Vec<Real> {
        let k = self.kernel_size;
        let pad = self.padding() as isize;
        let hw = h * w;
        let x = input.data();
        let mut cols = vec![0.0; self.fan_in() * hw];
        for c in 0..self.in_channels {
            let plane = &x[c * hw..(c + 1) * hw];
            for u in 0..k {
                for v in 0..k {
                    let row = (c * k + u) * k + v;
                    let dst = &mut cols[row * hw..(row + 1) * hw];
                    let du = u as isize - pad;
                    let dv = v as isize - pad;
                    for i in 0..h {
                        let si = i as isize + du;
                        if si < 0 || si >= h as isize {
                            continue;
                        }
                        let src_row = &plane[si as usize * w..(si as usize + 1) * w];
                        let dst_row = &mut dst[i * w..(i + 1) * w];
                        let j0 = (-dv).max(0) as usize;
                        let j1 = (w as isize - dv).min(w as isize).max(0) as usize;
                        for j in j0..j1 {
                            dst_row[j] = src_row[(j as isize + dv) as usize];
                        }
                    }
                }
            }
        }
        cols
    }

    /// Adds a `[C·k·k, H·W]` patch matrix back onto a `[C, H, W]` image.
    fn col2im(&self, cols: &[Real], h: usize, w: usize) -> Tensor {
        let k = self.kernel_size;
        let pad = self.padding() as isize;
        let hw = h * w;
        let mut out = vec![0.0; self.in_channels * hw];
        for c in 0..self.in_channels {
            let plane = &mut out[c * hw..(c + 1) * hw];
            for u in 0..k {
                for v in 0..k {
                    let row = (c * k + u) * k + v;
                    let src = &cols[row * hw..(row + 1) * hw];
                    let du = u as isize - pad;
                    let dv = v as isize - pad;
                    for i in 0..h {
                        let si = i as isize + du;
                        if si < 0 || si >= h as isize {
                            continue;
                        }
                        let src_row = &src[i * w..(i + 1) * w];
                        let dst_row = &mut plane[si as usize * w..(si as usize + 1) * w];
                        let j0 = (-dv).max(0) as usize;
                        let j1 = (w as isize - dv).min(w as isize).max(0) as usize;
                        for j in j0..j1 {
                            dst_row[(j as isize + dv) as usize] += src_row[j];
                        }
                    }
                }
            }
        }
        Tensor::from_values(&[self.in_channels, h, w], out).expect("col2im shape")
    }

    /// `out[o,i,j] = bias[o] + Σ kernel[o,c,u,v] · x[c, i+u-p, j+v-p]`.
    pub fn forward(&self, input: &Tensor) -> Result<Tensor, LayerError> {
        let (h, w) = self.check_input(input)?;
        let hw = h * w;
        let cols = self.im2col(input, h, w);
        let mut out = vec![0.0; self.out_channels * hw];
        for (o, plane) in out.chunks_mut(hw).enumerate() {
            plane.fill(self.bias.data()[o]);
        }
        gemm(
            self.out_channels,
            self.fan_in(),
            hw,
            1.0,
            self.kernels.data(),
            false,
            &cols,
            false,
            1.0,
            &mut out,
        );
        Ok(Tensor::from_values(&[self.out_channels, h, w], out)?)
    }

    fn check_output(&self, grad_out: &Tensor) -> Result<(usize, usize), LayerError> {
        match *grad_out.shape() {
            [o, h, w] if o == self.out_channels => Ok((h, w)),
            _ => Err(LayerError::Shape(format!(
                "conv output gradient must be [{}, H, W], got {:?}",
                self.out_channels,
                grad_out.shape()
            ))),
        }
    }

    /// `Cᵀ · y`: the transpose of the bias-free convolution operator.
    pub fn transpose(&self, y: &Tensor) -> Result<Tensor, LayerError> {
        let (h, w) = self.check_output(y)?;
        let hw = h * w;
        let mut cols = vec![0.0; self.fan_in() * hw];
        gemm(
            self.fan_in(),
            self.out_channels,
            hw,
            1.0,
            self.kernels.data(),
            true,
            y.data(),
            false,
            0.0,
            &mut cols,
        );
        Ok(self.col2im(&cols, h, w))
    }

    /// Returns `∂L/∂x = Cᵀ·grad_out` and accumulates `∂L/∂kernels` and
    /// `∂L/∂bias` into `grads`.
    pub fn backward(
        &self,
        grad_out: &Tensor,
        saved_input: &Tensor,
        grads: &mut ConvGrad,
    ) -> Result<Tensor, LayerError> {
        let (h, w) = self.check_output(grad_out)?;
        let (ih, iw) = self.check_input(saved_input)?;
        if (h, w) != (ih, iw) {
            return Err(LayerError::Shape(format!(
                "gradient spatial extent {h}x{w} does not match saved input {ih}x{iw}"
            )));
        }
        let hw = h * w;
        let cols = self.im2col(saved_input, h, w);
        gemm(
            self.out_channels,
            hw,
            self.fan_in(),
            1.0,
            grad_out.data(),
            false,
            &cols,
            true,
            1.0,
            grads.kernels.data_mut(),
        );
        for (gb, plane) in grads
            .bias
            .data_mut()
            .iter_mut()
            .zip(grad_out.data().chunks(hw))
        {
            *gb += plane.iter().sum::<Real>();
        }
        self.transpose(grad_out)
    }
}
