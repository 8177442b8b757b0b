//! Config-driven batch runs over scene files and reports over their outputs.

pub mod config;
pub mod run;
pub mod summary;

pub use config::{PipelineConfig, ENV_PREFIX};
pub use run::{run, RunReport, StageCounts, StageFailure};
pub use summary::{summarize, RunSummary};
