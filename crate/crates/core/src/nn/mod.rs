//! Minimal f64 neural-network building blocks with explicit backward passes.

pub mod conv;
pub mod init;
pub mod layers;
pub mod linalg;
pub mod params;

pub use conv::Conv2d;
pub use layers::{BatchNorm1d, BnCache, BnStats, Linear};
pub use params::{Grads, NamedTensor, ParamId, ParamStore, TensorKind};
