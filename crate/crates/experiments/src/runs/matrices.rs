//! Raw, baseline-subtracted and baseline-divided capacity matrices per cell.

use capmatrix_core::capmatrix::{
    build_capacity_matrix, normalize, write_matrix, MatrixKind, DEFAULT_BASELINE_CYCLE, DEFAULT_CYCLE_HI, DEFAULT_CYCLE_LO,
};
use rayon::prelude::*;

use crate::error::Result;
use crate::output::write_csv;
use crate::pipeline::Context;

/// Returns (cell id, matrix kind, error) for every matrix that could not be built.
pub fn run_matrices(ctx: &Context) -> Result<Vec<(String, MatrixKind, String)>> {
    let dir = ctx.out("matrices")?;
    let cells: Vec<_> = ctx
        .cells
        .iter()
        .filter(|c| ctx.cfg.matrix_cells.as_ref().is_none_or(|ids| ids.contains(&c.cell_id)))
        .collect();
    let failures: Vec<Vec<(String, MatrixKind, String)>> = cells
        .par_iter()
        .map(|cell| -> Result<_> {
            let mut fails = Vec::new();
            let raw = build_capacity_matrix(cell, &ctx.cfg.grid, DEFAULT_CYCLE_LO, DEFAULT_CYCLE_HI, ctx.cfg.resample)
                .map_err(|e| e.in_cell(&cell.cell_id))?;
            write_matrix(&dir, &format!("{}_raw", cell.cell_id), &cell.cell_id, &raw)?;
            for kind in [MatrixKind::BaselineSubtracted, MatrixKind::BaselineDivided] {
                match normalize(&raw, kind, DEFAULT_BASELINE_CYCLE) {
                    Ok(m) => {
                        write_matrix(&dir, &format!("{}_{}", cell.cell_id, kind.as_str()), &cell.cell_id, &m)?;
                    }
                    Err(e) => fails.push((cell.cell_id.clone(), kind, e.to_string())),
                }
            }
            Ok(fails)
        })
        .collect::<Result<_>>()?;
    let failures: Vec<_> = failures.into_iter().flatten().collect();
    for (id, kind, e) in &failures {
        log::warn!("cell {id}: {} matrix skipped: {e}", kind.as_str());
    }
    write_csv(
        &dir.join("skipped.csv"),
        &["cell_id", "kind", "reason"],
        failures.iter().map(|(id, k, e)| vec![id.clone(), k.as_str().to_string(), e.clone()]),
    )?;
    Ok(failures)
}
