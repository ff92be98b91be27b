//! Dataset ingestion, augmentation and the synthetic action-unit generator.

mod image;
mod manifest;
pub mod synth;
mod transform;

pub use image::GrayImage;
pub(crate) use manifest::hex;
pub use manifest::{DatasetManifest, ManifestEntry, MANIFEST_HEADER};
pub use synth::{ClassRule, Glyph, Jitter, Placement, SyntheticDataset, SyntheticSpec, UnitSpec};
pub use transform::{
    augment, center_crop_offset, eval_transform, map_rect_to_eval, resize_extent, Plane,
};

use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("manifest line {line}: {message}")]
    Csv { line: u64, message: String },
    #[error("manifest row {row}: image {path} does not exist")]
    MissingImage { row: usize, path: PathBuf },
    #[error("manifest row {row}: {message}")]
    Row { row: usize, message: String },
    #[error("image error: {0}")]
    Image(String),
    #[error("synthetic spec: {0}")]
    Spec(String),
    #[error("split: {0}")]
    Split(String),
}

impl DataError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}
