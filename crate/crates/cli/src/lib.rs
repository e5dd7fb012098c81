//! Pipeline stages behind the `canopy` binary.

pub mod config;
pub mod error;
pub mod stages;

pub use config::{PipelineConfig, Settings};
pub use error::StageError;
pub use stages::{run_all, run_stage, STAGES};
