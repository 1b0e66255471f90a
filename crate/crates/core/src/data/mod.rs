//! Dataset manifests, patient-level splits, image preprocessing,
//! augmentation and the synthetic wound generator.

pub mod augment;
pub mod image;
pub mod loader;
pub mod manifest;
pub mod split;
pub mod synth;

use std::path::{Path, PathBuf};

use thiserror::Error;

pub use augment::{adjust_brightness, adjust_contrast, augment, AugmentConfig};
pub use image::{preprocess, RgbImage};
pub use loader::{derive_seed, Batch, BatchLoader, ImageCache};
pub use manifest::{DatasetManifest, WoundSample, NUM_TASKS};
pub use split::{apportion, split_by_patient, SplitSpec, Splits};
pub use synth::{generate_synthetic_dataset, render_wound, ImageFormat, Provenance, SynthConfig, DEFAULT_PREVALENCE};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("manifest is missing column `{0}`")]
    MissingColumn(String),
    #[error("row {row}: duplicate image_id `{image_id}`")]
    DuplicateImage { row: usize, image_id: String },
    #[error("row {row}: column `{column}` has label `{value}`, expected 0 or 1")]
    InvalidLabel { row: usize, column: String, value: String },
    #[error("row {row}: empty patient_id")]
    EmptyPatient { row: usize },
    #[error("split: {0}")]
    Split(String),
    #[error("image decode: {0}")]
    Decode(String),
    #[error("synthetic generator: {0}")]
    Synth(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl DataError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        DataError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}
