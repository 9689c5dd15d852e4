//! Experiment runners behind the `capmatrix` command-line tool. Every runner
//! writes CSV (authoritative) and optional SVG (presentation) into the
//! configured output directory and also returns its results.

pub mod config;
pub mod error;
pub mod output;
pub mod pipeline;
pub mod runs;
pub mod svg;

pub use config::ExperimentConfig;
pub use error::{ExperimentError, Result};
pub use pipeline::Context;
