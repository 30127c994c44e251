//! A4Net: attribute-aware visual emotion recognition.
//!
//! The network couples a staged convolutional backbone with four attribute
//! branches (brightness, colorfulness, scene, facial expression). Branch
//! embeddings are fused with the backbone feature through trainable scalar
//! weights to produce emotion logits, and every branch carries its own
//! auxiliary loss. The crate also ships a synthetic verification dataset,
//! a frozen-feature linear-probe protocol, an ablation harness over the
//! attribute subsets, and Grad-CAM heatmaps.

pub mod data;
pub mod error;
pub mod explain;
pub mod model;
pub mod params;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
