//! Chest X-ray preprocessing and evaluation.
//!
//! Grayscale image I/O, CLAHE, lung-mask dilation/masking/cropping,
//! reproducible dataset manifests, AUROC-based fairness metrics and a
//! histogram probe for race information left in preprocessed images.

pub mod clahe;
pub mod commands;
pub mod config;
pub mod error;
pub mod hashing;
pub mod image;
pub mod manifest;
pub mod mask;
pub mod metrics;
pub mod pipeline;
pub mod probe;

pub use error::{Error, Result};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
