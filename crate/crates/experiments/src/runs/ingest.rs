//! Dataset inventory: split counts and per-cell cycle lives.

use std::collections::BTreeMap;

use capmatrix_core::dataset::{check_training_labels, compute_cycle_life, split_counts, Split, DEFAULT_THRESHOLD_FRACTION};
use serde::Serialize;

use crate::error::Result;
use crate::output::{write_csv, write_json};
use crate::pipeline::Context;

#[derive(Clone, Debug, Serialize)]
pub struct IngestSummary {
    pub n_cells: usize,
    pub split_counts: BTreeMap<Split, usize>,
    pub n_outliers: usize,
    /// Cells whose manifest life differs from the computed one.
    pub label_mismatches: Vec<String>,
    pub censored: Vec<String>,
}

pub fn run_ingest(ctx: &Context) -> Result<IngestSummary> {
    check_training_labels(&ctx.cells)?;
    let mut rows = Vec::new();
    let mut label_mismatches = Vec::new();
    let mut censored = Vec::new();
    for c in &ctx.cells {
        let computed = compute_cycle_life(&c.clone().with_cycle_life(None), DEFAULT_THRESHOLD_FRACTION);
        let computed_str = match &computed {
            Ok(l) => l.cycle_life.to_string(),
            Err(_) => {
                censored.push(c.cell_id.clone());
                String::new()
            }
        };
        if let (Some(given), Ok(l)) = (c.cycle_life, &computed) {
            if given != l.cycle_life {
                label_mismatches.push(c.cell_id.clone());
            }
        }
        rows.push(vec![
            c.cell_id.clone(),
            c.batch_id.clone(),
            c.split.to_string(),
            c.cycle_life.map(|v| v.to_string()).unwrap_or_default(),
            computed_str,
            c.is_outlier.to_string(),
            c.cycles.len().to_string(),
        ]);
    }
    let summary = IngestSummary {
        n_cells: ctx.cells.len(),
        split_counts: split_counts(&ctx.cells),
        n_outliers: ctx.cells.iter().filter(|c| c.is_outlier).count(),
        label_mismatches,
        censored,
    };
    let dir = ctx.out("ingest")?;
    write_csv(
        &dir.join("cells.csv"),
        &["cell_id", "batch_id", "split", "manifest_cycle_life", "computed_cycle_life", "is_outlier", "n_cycles"],
        rows,
    )?;
    write_json(&dir.join("dataset_summary.json"), &summary)?;
    Ok(summary)
}
