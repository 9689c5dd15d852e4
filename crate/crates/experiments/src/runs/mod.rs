pub mod downsample;
pub mod element;
pub mod ingest;
pub mod matrices;
pub mod multivariate;
pub mod negative;
pub mod percentile;
pub mod synth;
pub mod table2;
pub mod univariate;

use capmatrix_core::dataset::Split;
use capmatrix_core::features::{CellDeltaQ, FeatureSpec, FeatureTable};

use crate::error::Result;

/// One-column table from per-cell values.
pub(crate) fn single_column(dqs: &[CellDeltaQ], name: String, values: &[f64]) -> Result<FeatureTable> {
    let rows: Vec<Vec<f64>> = values.iter().map(|v| vec![*v]).collect();
    Ok(FeatureTable::from_rows(dqs, vec![name], &rows)?)
}

pub(crate) fn spec_table(dqs: &[CellDeltaQ], spec: &FeatureSpec) -> Result<FeatureTable> {
    Ok(FeatureTable::from_specs(dqs, std::slice::from_ref(spec))?)
}

pub(crate) fn split_header(prefix: &[&'static str]) -> Vec<&'static str> {
    let mut h = prefix.to_vec();
    h.extend(Split::ALL.iter().map(|s| s.as_str()));
    h
}
