//! Three capacity-matrix models that do not beat the simple ΔQ features:
//! per-voltage slice trends, the flattened full matrix, and an elastic net on
//! the log10 summary statistics.

use capmatrix_core::capmatrix::{
    build_capacity_matrix, downsample_indices, normalize, MatrixKind, DEFAULT_BASELINE_CYCLE, DEFAULT_CYCLE_HI,
    DEFAULT_CYCLE_LO,
};
use capmatrix_core::dataset::Split;
use capmatrix_core::eval::{write_reports_csv, TargetSpace};
use capmatrix_core::features::{CellDeltaQ, FeatureSpec, FeatureTable, Transform};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{ExperimentError, Result};
use crate::output::{fmt, write_csv, write_json};
use crate::pipeline::{fit_and_score, pearson, training_rows, Context, ScoredFit};

pub const SLICE_MODEL: &str = "horizontal_slice";
pub const FULL_MATRIX_MODEL: &str = "full_matrix";
pub const MULTI_STAT_MODEL: &str = "multi_statistic";

#[derive(Clone, Debug)]
pub struct NegativeResults {
    pub slice_voltage_v: f64,
    pub slice: ScoredFit,
    pub full_matrix: ScoredFit,
    pub multi_statistic: ScoredFit,
    pub multi_statistic_features: Vec<String>,
    pub median_feature_correlation: f64,
}

#[derive(Serialize)]
struct Summary<'a> {
    slice_voltage_v: f64,
    multi_statistic_features: &'a [String],
    median_feature_correlation: f64,
}

/// Per-cell quantities derived from the baseline-subtracted matrix.
struct MatrixSummary {
    /// Least-squares slope and intercept of (Qn − Qbase)(V) against n, per grid row.
    slopes: Vec<f64>,
    intercepts: Vec<f64>,
    flattened: Vec<f64>,
}

fn line_fit(x: &[f64], y: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.clone().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (xi, yi) in x.iter().zip(y) {
        sxy += (xi - mx) * (yi - my);
        sxx += (xi - mx) * (xi - mx);
    }
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

fn summarize(ctx: &Context, dq: &CellDeltaQ, keep: &[usize]) -> Result<MatrixSummary> {
    let cell = ctx
        .cells
        .iter()
        .find(|c| c.cell_id == dq.cell_id)
        .ok_or_else(|| ExperimentError::NoUsableFit(format!("cell {} vanished", dq.cell_id)))?;
    let raw = build_capacity_matrix(cell, &ctx.cfg.grid, DEFAULT_CYCLE_LO, DEFAULT_CYCLE_HI, ctx.cfg.resample)
        .map_err(|e| e.in_cell(&cell.cell_id))?;
    let m = normalize(&raw, MatrixKind::BaselineSubtracted, DEFAULT_BASELINE_CYCLE)?;
    let cycles: Vec<f64> = m.cycles.iter().map(|&c| c as f64).collect();
    let (mut slopes, mut intercepts) = (Vec::new(), Vec::new());
    for row in m.q.row_iter() {
        let (s, b) = line_fit(&cycles, row.iter().copied());
        slopes.push(s);
        intercepts.push(b);
    }
    // column-major: one cycle's curve after another
    let flat = m.q.as_slice();
    Ok(MatrixSummary {
        slopes,
        intercepts,
        flattened: keep.iter().map(|&i| flat[i]).collect(),
    })
}

pub fn run_negative_results(ctx: &Context) -> Result<NegativeResults> {
    let dqs = ctx.dqs(false, None)?;
    let cv = ctx.cv();
    let space = TargetSpace::Log10Cycles;
    let enet = &ctx.cfg.models.elastic_net;
    let n_cycles = (DEFAULT_CYCLE_HI - DEFAULT_CYCLE_LO + 1) as usize;
    let keep = downsample_indices(ctx.cfg.grid.n_points() * n_cycles, ctx.cfg.full_matrix_features)?;
    let summaries: Vec<MatrixSummary> = dqs
        .par_iter()
        .map(|d| summarize(ctx, d, &keep))
        .collect::<Result<_>>()?;

    // slice voltage: largest mean |trend| over training cells
    let train: Vec<usize> = (0..dqs.len())
        .filter(|&i| dqs[i].split == Split::Train && !dqs[i].is_outlier)
        .collect();
    let n_rows = ctx.cfg.grid.n_points();
    let mean_slope = |r: usize| train.iter().map(|&i| summaries[i].slopes[r]).sum::<f64>() / train.len() as f64;
    let row = (0..n_rows)
        .max_by(|&a, &b| mean_slope(a).abs().total_cmp(&mean_slope(b).abs()))
        .ok_or_else(|| ExperimentError::NoUsableFit("empty grid".into()))?;
    let slice_voltage_v = ctx.cfg.grid.values()[row];
    let slice_rows: Vec<Vec<f64>> = summaries.iter().map(|s| vec![s.slopes[row], s.intercepts[row]]).collect();
    let slice_table = FeatureTable::from_rows(&dqs, vec!["slice_slope".into(), "slice_intercept".into()], &slice_rows)?;
    let slice = fit_and_score(SLICE_MODEL, &slice_table, space, enet, &cv)?;

    let names: Vec<String> = keep.iter().map(|&i| format!("q_{}_{}", i / n_rows + DEFAULT_CYCLE_LO as usize, i % n_rows)).collect();
    let flat_rows: Vec<Vec<f64>> = summaries.iter().map(|s| s.flattened.clone()).collect();
    let full_table = FeatureTable::from_rows(&dqs, names, &flat_rows)?;
    let full_matrix = fit_and_score(FULL_MATRIX_MODEL, &full_table, space, enet, &cv)?;

    let specs: Vec<FeatureSpec> = ctx
        .cfg
        .roster
        .iter()
        .filter(|s| !s.can_be_negative())
        .map(|s| FeatureSpec::new(*s, Transform::Log10))
        .collect::<capmatrix_core::Result<_>>()?;
    let stat_table = FeatureTable::from_specs(&dqs, &specs)?;
    let multi_statistic = fit_and_score(MULTI_STAT_MODEL, &stat_table, space, enet, &cv)?;
    let train_stats = stat_table.rows(&training_rows(&stat_table));
    let mut corr = Vec::new();
    for a in 0..specs.len() {
        for b in a + 1..specs.len() {
            let ca: Vec<f64> = train_stats.values.column(a).iter().copied().collect();
            let cb: Vec<f64> = train_stats.values.column(b).iter().copied().collect();
            corr.push(pearson(&ca, &cb));
        }
    }
    let median_feature_correlation = capmatrix_core::features::stats::percentile(&corr, 50.0).unwrap_or(f64::NAN);

    let result = NegativeResults {
        slice_voltage_v,
        slice,
        full_matrix,
        multi_statistic,
        multi_statistic_features: specs.iter().map(FeatureSpec::name).collect(),
        median_feature_correlation,
    };
    let dir = ctx.out("negative")?;
    write_reports_csv(
        &dir.join("negative_results.csv"),
        &[
            result.slice.report.clone(),
            result.full_matrix.report.clone(),
            result.multi_statistic.report.clone(),
        ],
    )?;
    write_json(
        &dir.join("negative_summary.json"),
        &Summary {
            slice_voltage_v,
            multi_statistic_features: &result.multi_statistic_features,
            median_feature_correlation,
        },
    )?;
    write_csv(
        &dir.join("slice_mean_trend.csv"),
        &["voltage_v", "mean_train_slope_ah_per_cycle"],
        (0..n_rows).map(|r| vec![fmt(ctx.cfg.grid.values()[r]), fmt(mean_slope(r))]),
    )?;
    Ok(result)
}
