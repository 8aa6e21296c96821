//! Dataset construction pipeline: orchestration, manifest persistence,
//! resumability, reporting and the review-server wiring behind the `forge`
//! executable.

pub mod build;
pub mod config;
pub mod error;
pub mod eval;
pub mod fixtures;
pub mod manifest;
pub mod prompts;
pub mod review;
pub mod stats;

pub use build::{build, resume, BuildOptions, BuildSummary, StageCounts};
pub use config::PipelineConfig;
pub use error::{PipelineError, Result};
