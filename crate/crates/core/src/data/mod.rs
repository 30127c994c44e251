//! Dataset ingestion, attribute oracles, synthetic generation, and image
//! preprocessing.

pub mod attributes;
pub mod manifest;
pub mod preprocess;
pub mod synthetic;

pub use attributes::{compute_brightness, compute_colorfulness};
pub use manifest::{load_manifest, write_manifest, Dataset, LabelRanges, SampleRecord};
pub use preprocess::{preprocess_eval, preprocess_train, AugmentConfig};
pub use synthetic::{generate_synthetic, SyntheticOutput, SyntheticSpec};
