//! Expression-recognition CNN workbench.
//!
//! Trains a small three-stage convolutional classifier, projects single
//! layer activations back to pixel space with a deconvnet, and finds, for each
//! facial action unit, the feature map whose top responses on images with the
//! unit differ most from those on images without it.

pub mod association;
pub mod data;
pub mod deconv;
pub mod harvest;
pub mod layers;
pub mod model;
pub mod pipeline;
pub mod report;
pub mod seed;
pub mod tensor;

pub use tensor::{Real, Tensor, TensorError};
