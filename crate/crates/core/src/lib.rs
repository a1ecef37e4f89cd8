//! Fully complex-valued multi-stream segmentation network for InSAR data.

pub mod autodiff;
pub mod ctensor;
pub mod datagen;
pub mod error;
pub mod gradsuite;
pub mod layers;
pub mod model;
pub mod presets;
pub mod rng;
pub mod text;
pub mod training;

pub use ctensor::{CTensor, RTensor};
pub use error::{Error, Result};
