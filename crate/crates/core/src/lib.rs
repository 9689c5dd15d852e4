//! Battery cycle-life prediction from discharge voltage/capacity curves.
//!
//! The crate turns per-cycle discharge data into capacity matrices sampled on a
//! fixed voltage grid, extracts features from the difference between two
//! discharge curves (ΔQ(V)), and fits small, interpretable regression models
//! whose errors are reported in cycles.
//!
//! Module map:
//!
//! - [`dataset`]: cells, cycles, splits, CSV ingestion and cycle-life labels
//! - [`capmatrix`]: voltage grids, resampling, capacity matrices and ΔQ vectors
//! - [`features`]: summary statistics, transforms and feature tables
//! - [`linear_models`]: OLS, ridge, elastic net, PCR, PLSR and cross-validation
//! - [`forest`]: random-forest regression with impurity importances
//! - [`eval`]: RMSE/MAPE in cycles and split-aware reports
//! - [`synth`]: synthetic degradation datasets with known ground truth

pub mod capmatrix;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod features;
pub mod forest;
pub mod linear_models;
pub mod synth;

pub use error::{Error, Result};
