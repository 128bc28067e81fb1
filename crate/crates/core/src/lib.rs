//! Graph-based adaptive betweenness clustering for semi-supervised domain
//! adaptation, on a cosine-prototype classifier over synthetic domains.

pub mod ablation;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod experiment;
pub mod gates;
pub mod model;
pub mod objectives;
pub mod plots;
pub mod pseudo;
pub mod trainer;

pub use error::{Error, Result};
pub use model::{ModelDims, ModelParams, PredictionDistribution};
pub use trainer::{AblationFlags, TrainConfig, Trainer};
