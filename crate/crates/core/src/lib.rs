//! Desk-scale numerical laboratory for state-space sequence models:
//! discretization schemes, LTI and selective scans, 2D cross-scan vision
//! blocks, segmentation losses/metrics, and effective-receptive-field
//! analysis, all in plain f64 with deterministic seeding.

pub mod act;
pub mod erf;
pub mod error;
pub mod linalg;
pub mod loss;
pub mod pgm;
pub mod rng;
pub mod scan;
pub mod selective;
pub mod ssm;
pub mod tensor;
pub mod vision;

pub use error::{Error, Result};
pub use rng::Rng;
pub use tensor::Tensor;
