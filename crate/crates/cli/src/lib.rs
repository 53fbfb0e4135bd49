//! Sweep harness, reporting and stage plumbing behind the `mcbench` binary.

pub mod config;
pub mod pipeline;
pub mod report;
pub mod sweep;

pub use config::SweepConfig;
pub use sweep::{run_sweep, SweepOutcome};
