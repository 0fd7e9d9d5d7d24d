//! Geographic atrophy detection from color fundus photographs: manifest
//! ingestion, preprocessing, participant-level cross-validation, CNN
//! training, evaluation metrics, error analysis, saliency maps, and a
//! synthetic fundus generator for desk-scale validation.

pub mod dataset;
pub mod error;
pub mod error_analysis;
pub mod experiment;
pub mod folds;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod par;
pub mod preprocess;
pub mod raster;
pub mod saliency;
pub mod seed;
pub mod synth;

pub use error::{Error, ErrorKind, Result};
