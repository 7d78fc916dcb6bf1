//! Pipeline orchestration: configuration, checkpointing, the model assembly,
//! two-stage training, evaluation, animation, part segmentation, and
//! clothing transfer. The `draper` binary is a thin command-line front end
//! over this library.

pub mod animate;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod evaluate;
pub mod model;
pub mod segment;
pub mod train;
pub mod transfer;

pub use checkpoint::Checkpoint;
pub use config::{ModelDims, TrainConfig};
pub use data::SubjectData;
pub use model::{AvatarModel, ModelSpec};

/// Scalar precision for the whole pipeline.
pub type Scalar = draper_core::Scalar;
