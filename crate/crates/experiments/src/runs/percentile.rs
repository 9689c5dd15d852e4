//! log10 percentile-range models over every (lower, upper) pair.

use std::collections::BTreeMap;

use capmatrix_core::dataset::Split;
use capmatrix_core::eval::TargetSpace;
use capmatrix_core::features::stats::{percentile_sorted, sorted_copy};
use capmatrix_core::features::{apply_transform, percentile_range_sorted, suppress_anomalies, FeatureSpec, Statistic, Transform};
use rayon::prelude::*;
use serde::Serialize;

use super::single_column;
use crate::error::{ExperimentError, Result};
use crate::output::{fmt, fmt_opt, write_csv, write_json};
use crate::pipeline::{example_cells, fit_and_score, Context};
use crate::svg;

#[derive(Clone, Debug, Serialize)]
pub struct PercentileCell {
    pub lower_pct: f64,
    pub upper_pct: f64,
    /// Missing splits mean the fit failed.
    pub rmse: BTreeMap<Split, f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct PercentileSweep {
    pub cells: Vec<PercentileCell>,
    /// Pair with the lowest training RMSE (first in sweep order on ties).
    pub train_optimum: PercentileCell,
}

impl PercentileSweep {
    pub fn at(&self, lower_pct: f64, upper_pct: f64) -> Option<&PercentileCell> {
        self.cells
            .iter()
            .find(|c| c.lower_pct == lower_pct && c.upper_pct == upper_pct)
    }
}

/// Model for one pair on pre-sorted ΔQ vectors.
pub(crate) fn fit_pair(
    ctx: &Context,
    dqs: &[capmatrix_core::features::CellDeltaQ],
    sorted: &[Vec<f64>],
    lower_pct: f64,
    upper_pct: f64,
) -> Result<crate::pipeline::ScoredFit> {
    let spec = FeatureSpec::new(
        Statistic::PercentileRange { lower_pct, upper_pct },
        Transform::Log10,
    )?;
    let values = sorted
        .iter()
        .map(|s| {
            let raw = percentile_range_sorted(s, lower_pct, upper_pct)?;
            apply_transform(raw, Transform::Log10, spec.abs_before_transform)
        })
        .collect::<capmatrix_core::Result<Vec<f64>>>()?;
    let table = single_column(dqs, spec.name(), &values)?;
    fit_and_score(
        &spec.name(),
        &table,
        TargetSpace::Log10Cycles,
        &ctx.cfg.models.univariate,
        &ctx.cv(),
    )
}

pub fn run_percentile_sweep(ctx: &Context) -> Result<PercentileSweep> {
    let dqs = ctx.dqs(false, None)?;
    let sorted: Vec<Vec<f64>> = dqs.iter().map(|c| sorted_copy(&c.dq.values)).collect();
    let step = ctx.cfg.percentile_step as usize;
    let pairs: Vec<(f64, f64)> = (0..=100)
        .step_by(step)
        .flat_map(|l| (l..=100).step_by(step).map(move |u| (l as f64, u as f64)))
        .collect();
    log::info!("percentile sweep: {} pairs", pairs.len());

    let cells: Vec<PercentileCell> = pairs
        .par_iter()
        .map(|&(l, u)| {
            let rmse = match fit_pair(ctx, &dqs, &sorted, l, u) {
                Ok(f) => f.report.per_split.iter().map(|(s, m)| (*s, m.rmse_cycles)).collect(),
                Err(e) => {
                    log::debug!("percentile pair ({l}, {u}) failed: {e}");
                    BTreeMap::new()
                }
            };
            PercentileCell {
                lower_pct: l,
                upper_pct: u,
                rmse,
            }
        })
        .collect();
    let train_optimum = cells
        .iter()
        .filter(|c| c.rmse.get(&Split::Train).is_some_and(|r| r.is_finite()))
        .min_by(|a, b| a.rmse[&Split::Train].total_cmp(&b.rmse[&Split::Train]))
        .cloned()
        .ok_or_else(|| ExperimentError::NoUsableFit("no percentile pair could be fitted".into()))?;
    let sweep = PercentileSweep { cells, train_optimum };
    write_outputs(ctx, &sweep, &dqs, &sorted)?;
    Ok(sweep)
}

fn write_outputs(
    ctx: &Context,
    sweep: &PercentileSweep,
    dqs: &[capmatrix_core::features::CellDeltaQ],
    sorted: &[Vec<f64>],
) -> Result<()> {
    let dir = ctx.out("percentile")?;
    let mut rows = Vec::new();
    for split in Split::ALL {
        let errors: Vec<f64> = sweep
            .cells
            .iter()
            .map(|c| c.rmse.get(&split).copied().unwrap_or(f64::NAN))
            .collect();
        if errors.iter().all(|e| e.is_nan()) {
            continue;
        }
        let shown = suppress_anomalies(&errors);
        for ((c, e), s) in sweep.cells.iter().zip(&errors).zip(&shown) {
            rows.push(vec![fmt(c.lower_pct), fmt(c.upper_pct), split.to_string(), fmt(*e), fmt_opt(*s)]);
        }
        if ctx.cfg.emit_svg {
            let step = ctx.cfg.percentile_step as usize;
            let axis: Vec<usize> = (0..=100).step_by(step).collect();
            let labels: Vec<String> = axis.iter().map(|v| v.to_string()).collect();
            // rows: upper (descending), columns: lower
            let grid: Vec<Vec<Option<f64>>> = axis
                .iter()
                .rev()
                .map(|&u| {
                    axis.iter()
                        .map(|&l| {
                            sweep
                                .cells
                                .iter()
                                .position(|c| c.lower_pct == l as f64 && c.upper_pct == u as f64)
                                .and_then(|i| shown[i])
                        })
                        .collect()
                })
                .collect();
            let rev: Vec<String> = labels.iter().rev().cloned().collect();
            svg::heatmap(
                &dir.join(format!("percentile_heatmap_{split}.svg")),
                &format!("log10 percentile-range RMSE (cycles), {split}; rows upper, columns lower"),
                &rev,
                &labels,
                &grid,
            )?;
        }
    }
    write_csv(
        &dir.join("percentile_sweep.csv"),
        &["lower_pct", "upper_pct", "split", "rmse_cycles", "shown_rmse_cycles"],
        rows,
    )?;
    write_json(&dir.join("percentile_optimum.json"), &sweep.train_optimum)?;

    // example curves with the marked percentile levels
    let examples = example_cells(&ctx.cfg, dqs);
    let mut curve_rows = Vec::new();
    let mut mark_rows = Vec::new();
    for &i in &examples {
        let c = &dqs[i];
        for (v, q) in c.dq.voltages.iter().zip(&c.dq.values) {
            curve_rows.push(vec![c.cell_id.clone(), c.label.cycle_life.to_string(), fmt(*v), fmt(*q)]);
        }
        for &(l, u) in &ctx.cfg.annotated_percentiles {
            for pct in [l, u] {
                mark_rows.push(vec![
                    c.cell_id.clone(),
                    c.label.cycle_life.to_string(),
                    format!("{l}-{u}"),
                    fmt(pct),
                    fmt(percentile_sorted(&sorted[i], pct)?),
                ]);
            }
        }
    }
    write_csv(
        &dir.join("example_dq_curves.csv"),
        &["cell_id", "cycle_life", "voltage_v", "delta_q_ah"],
        curve_rows,
    )?;
    write_csv(
        &dir.join("example_percentile_marks.csv"),
        &["cell_id", "cycle_life", "pair", "percentile", "delta_q_ah"],
        mark_rows,
    )?;
    Ok(())
}
