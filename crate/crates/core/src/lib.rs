pub mod autoencoder;
pub mod baseline;
pub mod datagen;
pub mod error;
pub mod experiment;
pub mod io;
pub mod nn;
pub mod metrics;
pub mod optim;
pub mod predictor;
pub mod process;
pub mod rng;
pub mod sampler;
pub mod trainer;
pub mod video;

pub use error::{CvfError, Result};
