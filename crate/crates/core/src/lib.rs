pub mod baselines;
pub mod checkpoint;
pub mod config;
pub mod datagen;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod nn;
pub mod noise;
pub mod score;
pub mod sampling;
pub mod sde;
pub mod stability;
pub mod svg;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
