//! Language-driven grasp detection with a hybrid state-space/attention
//! vision backbone, hierarchical vision-language fusion, and a dense
//! rotated-rectangle grasp head, built on a small f64 autodiff engine.

pub mod backbone;
pub mod bench;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod fusion;
pub mod head;
pub mod infer;
pub mod metrics;
pub mod model;
pub mod params;
pub mod ssm;
pub mod tensor;
pub mod text;
pub mod train;

pub use error::{Error, Result};
pub use model::GraspMamba;
pub use tensor::{Gradients, Tensor};
