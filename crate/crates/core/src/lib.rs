//! Two-branch gait recognition from binary silhouettes and SMPL body
//! parameters: model, training, retrieval evaluation and a synthetic data
//! generator.

pub mod checkpoint;
pub mod error;
pub mod eval;
pub mod losses;
pub mod manifest;
pub mod model;
pub mod nn;
pub mod optim;
pub mod pipeline;
pub mod preprocess;
pub mod synth;
pub mod train;
pub mod types;

pub use error::{ErrorClass, GaitError, Result};
pub use model::{ModelConfig, Mode, SmplGait};
pub use types::{GaitSample, PartEmbedding, SilhouetteFrame, SmplVector};
