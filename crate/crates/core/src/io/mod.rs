//! Persistence: tensor containers, configuration, PGM frames, CSV logs and
//! run directories.

pub mod config;
pub mod container;
pub mod csv_log;
pub mod pgm;
pub mod run_dir;

pub use config::ExperimentConfig;
pub use container::{load_container, save_container, Tensor};
