//! Pipeline orchestration behind the `kgmcq` binary: configuration, the
//! staged run from corpus to difficulty report, and simulated respondents.

pub mod config;
pub mod pipeline;
pub mod simulate;

pub use config::PipelineConfig;
pub use pipeline::{run_all, run_stage, RunReport, Stage, StageOutcome};
