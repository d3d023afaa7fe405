//! Command-line companion to `fedlens-core`: TOML experiment configs,
//! presets for each study, the FPNV/FPLF/IDX formats, and run directories
//! with CSV metrics, a manifest, and optional feature dumps.

pub mod config;
pub mod dumps;
pub mod error;
pub mod executor;
pub mod export;
pub mod formats;
pub mod presets;
pub mod runner;

pub use config::ExperimentConfig;
pub use error::{CliError, Result};
pub use executor::ThreadPool;
