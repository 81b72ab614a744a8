//! End-to-end runs over an exam: configuration, orchestration and sweeps.

pub mod ablate;
pub mod config;
pub mod run;
pub mod selfinquiry;

pub use ablate::{ablate, sweep_points, Sweep, SHOT_GRID};
pub use config::{ConfigError, ExampleSource, Paths, RunConfig, SourceKind};
pub use run::{run_exam, PipelineError, Resources};
pub use selfinquiry::{run_self_inquiry, SELF_INQUIRY_CALLS};
