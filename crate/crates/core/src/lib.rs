pub mod attribution;
pub mod baselines;
pub mod checkpoint;
pub mod classifier;
pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod image;
mod kernels;
pub mod model;
pub mod network;
pub mod optim;
pub mod pcim;
pub mod tape;
pub mod tensor;

pub use error::{Error, Result};
pub use image::{AttributionMap, GroundTruthMask, Image, Method};
pub use model::{Model, ScoreKind};
pub use network::{build_minivgg, Network};
pub use tensor::Tensor;
