//! Training-time augmentation and the deterministic evaluation transform.
//!
//! Augmentation order: random rotation in [−15°, +15°], horizontal flip with
//! probability 0.5, bilinear resize to `S + S/32` (99 for S = 96), random
//! `S × S` crop, per-image standardisation.

use rand::Rng;

use super::{DataError, GrayImage};
use crate::tensor::{Real, Tensor};

pub const MAX_ROTATION_DEG: f64 = 15.0;
pub const STD_EPSILON: f64 = 1e-6;
/// Smallest source image accepted by the transforms.
pub const MIN_SOURCE_EXTENT: usize = 8;

/// Size of the intermediate resize for an output of `size × size`.
pub fn resize_extent(size: usize) -> usize {
    size + size / 32
}

/// Float image plane used while transforming.
#[derive(Clone, Debug, PartialEq)]
pub struct Plane {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

impl From<&GrayImage> for Plane {
    fn from(img: &GrayImage) -> Self {
        Self {
            width: img.width(),
            height: img.height(),
            values: img.pixels().iter().map(|&p| p as f64).collect(),
        }
    }
}

impl Plane {
    fn at(&self, x: isize, y: isize) -> f64 {
        if x < 0 || y < 0 || x >= self.width as isize || y >= self.height as isize {
            0.0
        } else {
            self.values[y as usize * self.width + x as usize]
        }
    }

    /// Bilinear sample at pixel-centre coordinates; zero outside the source.
    fn sample(&self, x: f64, y: f64) -> f64 {
        let (x0, y0) = (x.floor(), y.floor());
        let (fx, fy) = (x - x0, y - y0);
        let (x0, y0) = (x0 as isize, y0 as isize);
        let top = self.at(x0, y0) * (1.0 - fx) + self.at(x0 + 1, y0) * fx;
        let bottom = self.at(x0, y0 + 1) * (1.0 - fx) + self.at(x0 + 1, y0 + 1) * fx;
        top * (1.0 - fy) + bottom * fy
    }

    /// Rotation about the image centre, counter-clockwise by `degrees`.
    pub fn rotate(&self, degrees: f64) -> Plane {
        let (s, c) = degrees.to_radians().sin_cos();
        let cx = (self.width as f64 - 1.0) / 2.0;
        let cy = (self.height as f64 - 1.0) / 2.0;
        let mut values = Vec::with_capacity(self.values.len());
        for y in 0..self.height {
            for x in 0..self.width {
                let (dx, dy) = (x as f64 - cx, y as f64 - cy);
                // inverse map: rotate the destination point by −θ
                let sx = c * dx - s * dy + cx;
                let sy = s * dx + c * dy + cy;
                values.push(self.sample(sx, sy));
            }
        }
        Plane {
            width: self.width,
            height: self.height,
            values,
        }
    }

    pub fn flip_horizontal(&self) -> Plane {
        let mut values = Vec::with_capacity(self.values.len());
        for row in self.values.chunks(self.width) {
            values.extend(row.iter().rev());
        }
        Plane {
            width: self.width,
            height: self.height,
            values,
        }
    }

    /// Bilinear resize with half-pixel alignment, edges clamped.
    pub fn resize(&self, width: usize, height: usize) -> Plane {
        let sx = self.width as f64 / width as f64;
        let sy = self.height as f64 / height as f64;
        let clamp = |v: f64, n: usize| v.clamp(0.0, (n - 1) as f64);
        let mut values = Vec::with_capacity(width * height);
        for y in 0..height {
            let fy = clamp((y as f64 + 0.5) * sy - 0.5, self.height);
            for x in 0..width {
                let fx = clamp((x as f64 + 0.5) * sx - 0.5, self.width);
                let (x0, y0) = (fx.floor() as usize, fy.floor() as usize);
                let (x1, y1) = ((x0 + 1).min(self.width - 1), (y0 + 1).min(self.height - 1));
                let (ax, ay) = (fx - x0 as f64, fy - y0 as f64);
                let v = |xx: usize, yy: usize| self.values[yy * self.width + xx];
                let top = v(x0, y0) * (1.0 - ax) + v(x1, y0) * ax;
                let bottom = v(x0, y1) * (1.0 - ax) + v(x1, y1) * ax;
                values.push(top * (1.0 - ay) + bottom * ay);
            }
        }
        Plane {
            width,
            height,
            values,
        }
    }

    pub fn crop(&self, x0: usize, y0: usize, size: usize) -> Plane {
        let mut values = Vec::with_capacity(size * size);
        for y in y0..y0 + size {
            values.extend_from_slice(&self.values[y * self.width + x0..y * self.width + x0 + size]);
        }
        Plane {
            width: size,
            height: size,
            values,
        }
    }

    /// Subtract the mean, divide by `max(std, 1e-6)`; returns a `[1, H, W]` tensor.
    pub fn standardize(&self) -> Tensor {
        let n = self.values.len() as f64;
        let mean = self.values.iter().sum::<f64>() / n;
        let var = self.values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let std = var.sqrt().max(STD_EPSILON);
        let data = self
            .values
            .iter()
            .map(|v| ((v - mean) / std) as Real)
            .collect();
        Tensor::from_values(&[1, self.height, self.width], data).expect("plane shape")
    }
}

fn check_source(img: &GrayImage) -> Result<(), DataError> {
    if img.width() < MIN_SOURCE_EXTENT || img.height() < MIN_SOURCE_EXTENT {
        return Err(DataError::Image(format!(
            "{}x{} image is smaller than the {MIN_SOURCE_EXTENT}x{MIN_SOURCE_EXTENT} minimum",
            img.width(),
            img.height()
        )));
    }
    Ok(())
}

/// Random training transform producing a `[1, size, size]` tensor.
pub fn augment<R: Rng + ?Sized>(
    img: &GrayImage,
    size: usize,
    rng: &mut R,
) -> Result<Tensor, DataError> {
    check_source(img)?;
    let angle = rng.random_range(-MAX_ROTATION_DEG..=MAX_ROTATION_DEG);
    let mut plane = Plane::from(img).rotate(angle);
    if rng.random_bool(0.5) {
        plane = plane.flip_horizontal();
    }
    let r = resize_extent(size);
    let plane = plane.resize(r, r);
    let x0 = rng.random_range(0..=r - size);
    let y0 = rng.random_range(0..=r - size);
    Ok(plane.crop(x0, y0, size).standardize())
}

/// Offset of the centre crop inside the resized image.
pub fn center_crop_offset(size: usize) -> usize {
    (resize_extent(size) - size) / 2
}

/// Deterministic transform: resize, centre crop, standardise.
pub fn eval_transform(img: &GrayImage, size: usize) -> Result<Tensor, DataError> {
    check_source(img)?;
    let r = resize_extent(size);
    let off = center_crop_offset(size);
    Ok(Plane::from(img)
        .resize(r, r)
        .crop(off, off, size)
        .standardize())
}

/// Maps a half-open source-image rectangle into the coordinates of the
/// `eval_transform` output, clipped to `[0, size)`.
pub fn map_rect_to_eval(
    rect: [usize; 4],
    source_width: usize,
    source_height: usize,
    size: usize,
) -> [usize; 4] {
    let r = resize_extent(size) as f64;
    let off = center_crop_offset(size) as f64;
    let sx = r / source_width as f64;
    let sy = r / source_height as f64;
    let clip = |v: f64| v.clamp(0.0, size as f64) as usize;
    [
        clip((rect[0] as f64 * sx - off).floor()),
        clip((rect[1] as f64 * sy - off).floor()),
        clip((rect[2] as f64 * sx - off).ceil()),
        clip((rect[3] as f64 * sy - off).ceil()),
    ]
}
