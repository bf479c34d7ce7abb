//! Experiment runner behind the `capflow` binary: configuration, seeded
//! suites for classification and pouring, result tables, SVG charts and the
//! run manifest.

pub mod classification;
pub mod commands;
pub mod config;
pub mod manifest;
pub mod pouring;
pub mod svg;
pub mod table;

pub use classification::{run_classification_suite, ClassificationOutcome};
pub use commands::{run as run_command, Command};
pub use config::{ExperimentConfig, ScriptedPolicy, SimKind, Stage, Variant};
pub use manifest::{Manifest, Outputs};
pub use pouring::{run_pouring_suite, run_pouring_suite_observed, EvalCase, PouringOutcome};
pub use table::{ResultRow, ResultTable, TrialRecord};
