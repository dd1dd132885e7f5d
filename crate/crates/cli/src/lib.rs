//! Command-line pipeline: synthetic cohort, stain separation, cell detection
//! and typing, patch descriptors, patch and subject classification, reports.

pub mod config;
pub mod error;
pub mod overlay;
pub mod run;
pub mod stages;

pub use config::PipelineConfig;
pub use error::{CliError, CliResult};
pub use run::{run_all, run_stage, Context, Stage};
