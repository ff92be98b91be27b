//! 2×2 max pooling with recorded switches.

use super::LayerError;
use crate::tensor::{Real, Tensor};

/// Argmax positions of one 2×2 max-pool call.
///
/// `switches[k]` is the flat `[C, H, W]` offset (into the pre-pool tensor) of
/// the value that won pooled cell `k`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SwitchRecord {
    channels: usize,
    in_height: usize,
    in_width: usize,
    switches: Vec<usize>,
}

impl SwitchRecord {
    pub fn input_shape(&self) -> [usize; 3] {
        [self.channels, self.in_height, self.in_width]
    }

    pub fn output_shape(&self) -> [usize; 3] {
        [
            self.channels,
            pooled_extent(self.in_height),
            pooled_extent(self.in_width),
        ]
    }

    pub fn switches(&self) -> &[usize] {
        &self.switches
    }

    /// Pre-pool `(channel, row, col)` that won pooled cell `(channel, row, col)`.
    pub fn source_of(&self, channel: usize, row: usize, col: usize) -> (usize, usize, usize) {
        let [_, oh, ow] = self.output_shape();
        let s = self.switches[(channel * oh + row) * ow + col];
        let plane = self.in_height * self.in_width;
        (s / plane, (s % plane) / self.in_width, s % self.in_width)
    }
}

/// Pooled extent for an input extent. Odd extents behave as if padded on the
/// bottom/right with a value that never wins.
pub fn pooled_extent(n: usize) -> usize {
    n.div_ceil(2)
}

pub fn maxpool_forward(x: &Tensor) -> Result<(Tensor, SwitchRecord), LayerError> {
    let [c, h, w] = *x.shape() else {
        return Err(LayerError::Shape(format!(
            "max pool expects [C, H, W], got {:?}",
            x.shape()
        )));
    };
    let (oh, ow) = (pooled_extent(h), pooled_extent(w));
    let data = x.data();
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut switches = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        let base = ch * h * w;
        for i in 0..oh {
            for j in 0..ow {
                let mut best = base + 2 * i * w + 2 * j;
                let mut best_val: Real = data[best];
                // row-major scan with strict `>` keeps the first maximum
                for di in 0..2 {
                    let r = 2 * i + di;
                    if r >= h {
                        continue;
                    }
                    for dj in 0..2 {
                        let col = 2 * j + dj;
                        if col >= w {
                            continue;
                        }
                        let idx = base + r * w + col;
                        if data[idx] > best_val {
                            best = idx;
                            best_val = data[idx];
                        }
                    }
                }
                out.push(best_val);
                switches.push(best);
            }
        }
    }
    Ok((
        Tensor::from_values(&[c, oh, ow], out)?,
        SwitchRecord {
            channels: c,
            in_height: h,
            in_width: w,
            switches,
        },
    ))
}

/// Routes each pooled value to its switch location; everything else is zero.
///
/// Used both as the max-pool gradient and as the deconvnet unpooling step.
pub fn maxpool_backward(grad_out: &Tensor, switches: &SwitchRecord) -> Result<Tensor, LayerError> {
    if grad_out.shape() != switches.output_shape() {
        return Err(LayerError::Shape(format!(
            "switch record is for pooled shape {:?}, got {:?}",
            switches.output_shape(),
            grad_out.shape()
        )));
    }
    let mut out = Tensor::zeros(&switches.input_shape())?;
    let dst = out.data_mut();
    for (&g, &s) in grad_out.data().iter().zip(&switches.switches) {
        dst[s] += g;
    }
    Ok(out)
}
