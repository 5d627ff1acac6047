//! Scenario runner for `kvh-core`: configuration, named checks, artifacts
//! and reports.

pub mod compare;
pub mod config;
pub mod report;
pub mod run;
pub mod scenario;

pub use config::{ConfigError, RunConfig};
pub use report::Report;
pub use run::{run, run_in, RunError, RunOutcome};
pub use scenario::{Check, Scenario};
