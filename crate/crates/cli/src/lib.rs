//! Plumbing for the `holelab` binary: configuration parsing, plan expansion
//! and validation, the per-point computation pipeline, and the CSV writers.
//!
//! Kept as a library so the integration tests can drive the exact code the
//! binary runs without spawning processes for every assertion.

pub mod config;
pub mod pipeline;
pub mod report;

pub use config::{build_plan, FileConfig, MapKind, Overrides, Plan, PlanError, Point};
pub use pipeline::{run_plan, run_point, ResultRow, RESULT_COLUMNS};
