//! One univariate model per grid voltage: ΔQ at that voltage as the feature.

use std::collections::BTreeMap;

use capmatrix_core::dataset::Split;
use capmatrix_core::eval::TargetSpace;
use capmatrix_core::features::{apply_transform, CellDeltaQ, FeatureSpec, Statistic, Transform};
use rayon::prelude::*;
use serde::Serialize;

use super::single_column;
use crate::error::{ExperimentError, Result};
use crate::output::{fmt, write_csv, write_json};
use crate::pipeline::{fit_and_score, Context, ScoredFit};
use crate::svg;

#[derive(Clone, Debug, Serialize)]
pub struct ElementRow {
    pub voltage_v: f64,
    pub transform: Transform,
    /// Empty when the fit failed.
    pub rmse: BTreeMap<Split, f64>,
    /// Coefficient on the standardized feature.
    pub slope: f64,
    /// Population std of the untransformed ΔQ element over training cells.
    pub train_std: f64,
    pub note: Option<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct ElementOptimum {
    pub voltage_v: f64,
    pub rmse: BTreeMap<Split, f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct ElementSweep {
    pub rows: Vec<ElementRow>,
    /// Lowest training RMSE among log10 models.
    pub train_optimum_log10: Option<ElementOptimum>,
    /// Voltage of the most negative log10-model slope.
    pub min_slope_voltage_log10: Option<f64>,
}

/// Fit at grid index `j`.
pub(crate) fn fit_element(ctx: &Context, dqs: &[CellDeltaQ], j: usize, transform: Transform) -> Result<(ScoredFit, FeatureSpec)> {
    let voltage_v = dqs[0].dq.voltages[j];
    let spec = FeatureSpec::new(Statistic::ValueAt { voltage_v }, transform)?;
    let values = dqs
        .iter()
        .map(|c| apply_transform(c.dq.values[j], transform, spec.abs_before_transform))
        .collect::<capmatrix_core::Result<Vec<f64>>>()?;
    let table = single_column(dqs, spec.name(), &values)?;
    let fit = fit_and_score(
        &spec.name(),
        &table,
        TargetSpace::Log10Cycles,
        &ctx.cfg.models.univariate,
        &ctx.cv(),
    )?;
    Ok((fit, spec))
}

fn train_std(dqs: &[CellDeltaQ], j: usize) -> f64 {
    let v: Vec<f64> = dqs
        .iter()
        .filter(|c| c.split == Split::Train && !c.is_outlier)
        .map(|c| c.dq.values[j])
        .collect();
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n).sqrt()
}

pub fn run_element_sweep(ctx: &Context, transforms: &[Transform]) -> Result<ElementSweep> {
    let dqs = ctx.dqs(false, None)?;
    let first = dqs
        .first()
        .ok_or_else(|| ExperimentError::NoUsableFit("no cells".into()))?;
    let n_points = first.dq.len();
    let jobs: Vec<(usize, Transform)> = transforms
        .iter()
        .flat_map(|&t| (0..n_points).map(move |j| (j, t)))
        .collect();
    let rows: Vec<ElementRow> = jobs
        .par_iter()
        .map(|&(j, transform)| {
            let voltage_v = dqs[0].dq.voltages[j];
            let (rmse, slope, note) = match fit_element(ctx, &dqs, j, transform) {
                Ok((f, _)) => (
                    f.report.per_split.iter().map(|(s, m)| (*s, m.rmse_cycles)).collect(),
                    f.fit.model.coefficients[0],
                    None,
                ),
                Err(e) => (BTreeMap::new(), f64::NAN, Some(e.to_string())),
            };
            ElementRow {
                voltage_v,
                transform,
                rmse,
                slope,
                train_std: train_std(&dqs, j),
                note,
            }
        })
        .collect();

    let log10_rows = || rows.iter().filter(|r| r.transform == Transform::Log10);
    let train_optimum_log10 = log10_rows()
        .filter(|r| r.rmse.get(&Split::Train).is_some_and(|x| x.is_finite()))
        .min_by(|a, b| a.rmse[&Split::Train].total_cmp(&b.rmse[&Split::Train]))
        .map(|r| ElementOptimum {
            voltage_v: r.voltage_v,
            rmse: r.rmse.clone(),
        });
    let min_slope_voltage_log10 = log10_rows()
        .filter(|r| r.slope.is_finite())
        .min_by(|a, b| a.slope.total_cmp(&b.slope))
        .map(|r| r.voltage_v);
    let sweep = ElementSweep {
        rows,
        train_optimum_log10,
        min_slope_voltage_log10,
    };
    write_outputs(ctx, &sweep, transforms)?;
    Ok(sweep)
}

fn write_outputs(ctx: &Context, sweep: &ElementSweep, transforms: &[Transform]) -> Result<()> {
    let dir = ctx.out("element")?;
    write_csv(
        &dir.join("element_sweep.csv"),
        &["voltage_v", "transform", "split", "rmse_cycles", "note"],
        sweep.rows.iter().flat_map(|r| {
            let note = r.note.clone().unwrap_or_default();
            let mut out: Vec<Vec<String>> = r
                .rmse
                .iter()
                .map(|(s, e)| vec![fmt(r.voltage_v), r.transform.as_str().into(), s.to_string(), fmt(*e), String::new()])
                .collect();
            if out.is_empty() {
                out.push(vec![fmt(r.voltage_v), r.transform.as_str().into(), String::new(), String::new(), note]);
            }
            out
        }),
    )?;
    write_csv(
        &dir.join("element_slopes.csv"),
        &["voltage_v", "transform", "slope", "train_std", "slope_over_std"],
        sweep.rows.iter().map(|r| {
            vec![
                fmt(r.voltage_v),
                r.transform.as_str().into(),
                fmt(r.slope),
                fmt(r.train_std),
                fmt(r.slope / r.train_std),
            ]
        }),
    )?;
    write_json(
        &dir.join("element_optimum.json"),
        &serde_json::json!({
            "train_optimum_log10": sweep.train_optimum_log10,
            "min_slope_voltage_log10": sweep.min_slope_voltage_log10,
        }),
    )?;
    if ctx.cfg.emit_svg {
        for split in Split::ALL {
            let series: Vec<(String, Vec<(f64, f64)>)> = transforms
                .iter()
                .map(|&t| {
                    let pts = sweep
                        .rows
                        .iter()
                        .filter(|r| r.transform == t)
                        .map(|r| (r.voltage_v, r.rmse.get(&split).copied().unwrap_or(f64::NAN)))
                        .collect();
                    (t.as_str().to_string(), pts)
                })
                .collect();
            svg::line_plot(
                &dir.join(format!("element_rmse_{split}.svg")),
                &format!("single-element RMSE, {split}"),
                "voltage (V)",
                "RMSE (cycles)",
                &series,
            )?;
        }
        let log10: Vec<&ElementRow> = sweep.rows.iter().filter(|r| r.transform == Transform::Log10).collect();
        svg::line_plot(
            &dir.join("element_slope.svg"),
            "log10-model slope",
            "voltage (V)",
            "standardized slope",
            &[("slope".into(), log10.iter().map(|r| (r.voltage_v, r.slope)).collect())],
        )?;
        svg::line_plot(
            &dir.join("element_slope_over_std.svg"),
            "log10-model slope / training σ",
            "voltage (V)",
            "slope / σ (1/Ah)",
            &[("slope/σ".into(), log10.iter().map(|r| (r.voltage_v, r.slope / r.train_std)).collect())],
        )?;
    }
    Ok(())
}
