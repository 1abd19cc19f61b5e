//! Experiment harness around the `revdiff` samplers: configuration files,
//! presets, and the commands behind the `revdiff-bench` binary.

// `!(x > 0.0)` rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod error;

pub use config::{ExperimentConfig, MethodConfig, TargetSpec};
pub use error::{BenchError, Result};
