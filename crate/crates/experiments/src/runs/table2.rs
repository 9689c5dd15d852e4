//! Consolidated train / primary / secondary RMSE of every model family.

use std::collections::BTreeMap;

use capmatrix_core::dataset::Split;
use capmatrix_core::eval::{write_reports_csv, EvalReport, TargetSpace};
use capmatrix_core::features::stats::sorted_copy;
use capmatrix_core::features::{FeatureSpec, FeatureTable, Statistic, Transform};
use serde::Serialize;

use super::element::{fit_element, run_element_sweep};
use super::multivariate::{fit_forest_scored, specs, FOREST_NAME};
use super::percentile::fit_pair;
use super::{spec_table, split_header};
use crate::error::{ExperimentError, Result};
use crate::output::{ensure_dir, fmt, write_csv, write_json};
use crate::pipeline::{fit_and_score, Context};

#[derive(Clone, Debug, Serialize)]
pub struct Table2Row {
    pub model: String,
    pub rmse: BTreeMap<Split, f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct Table2 {
    pub rows: Vec<Table2Row>,
    /// Voltage of the single-element row, found by the log10 element sweep.
    pub element_voltage_v: f64,
}

impl Table2 {
    pub fn rmse(&self, model: &str, split: Split) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.model == model)
            .and_then(|r| r.rmse.get(&split).copied())
    }
}

pub const ROW_VARIANCE: &str = "log10_var";
pub const ROW_IQR: &str = "log10_iqr";
pub const ROW_PERCENTILE: &str = "log10_percentile_range";
pub const ROW_ELEMENT: &str = "log10_single_element";

pub fn run_table2(ctx: &Context) -> Result<Table2> {
    let dqs = ctx.dqs(false, None)?;
    let cv = ctx.cv();
    let space = TargetSpace::Log10Cycles;
    let uni = &ctx.cfg.models.univariate;
    let mut reports: Vec<EvalReport> = Vec::new();
    let models_dir = ensure_dir(&ctx.out("table2")?.join("models"))?;

    for (name, stat) in [(ROW_VARIANCE, Statistic::Variance), (ROW_IQR, Statistic::Iqr)] {
        let table = spec_table(&dqs, &FeatureSpec::new(stat, Transform::Log10)?)?;
        let f = fit_and_score(name, &table, space, uni, &cv)?;
        f.fit.model.save(&models_dir.join(format!("{name}.json")))?;
        reports.push(f.report);
    }

    let sorted: Vec<Vec<f64>> = dqs.iter().map(|c| sorted_copy(&c.dq.values)).collect();
    let (l, u) = ctx.cfg.table2_percentiles;
    let mut f = fit_pair(ctx, &dqs, &sorted, l, u)?;
    f.report.model_name = ROW_PERCENTILE.into();
    f.fit.model.save(&models_dir.join(format!("{ROW_PERCENTILE}.json")))?;
    reports.push(f.report);

    let sweep = run_element_sweep(ctx, &[Transform::Log10])?;
    let opt = sweep
        .train_optimum_log10
        .ok_or_else(|| ExperimentError::NoUsableFit("no single-element model could be fitted".into()))?;
    let j = dqs[0]
        .dq
        .voltages
        .iter()
        .position(|v| *v == opt.voltage_v)
        .expect("optimum voltage is a grid voltage");
    let (mut f, _) = fit_element(ctx, &dqs, j, Transform::Log10)?;
    f.report.model_name = ROW_ELEMENT.into();
    f.fit.model.save(&models_dir.join(format!("{ROW_ELEMENT}.json")))?;
    reports.push(f.report);

    let mdqs = ctx.dqs(false, Some(ctx.cfg.multivariate_points))?;
    let elements = FeatureTable::elements(&mdqs)?;
    for (name, spec) in specs(ctx) {
        let f = fit_and_score(name, &elements, space, spec, &cv)?;
        f.fit.model.save(&models_dir.join(format!("{name}.json")))?;
        reports.push(f.report);
    }
    let (forest, report) = fit_forest_scored(ctx, &elements)?;
    std::fs::write(models_dir.join(format!("{FOREST_NAME}.json")), forest.to_json()?)
        .map_err(|e| ExperimentError::io(&models_dir, e))?;
    reports.push(report);

    let table = Table2 {
        rows: reports
            .iter()
            .map(|r| Table2Row {
                model: r.model_name.clone(),
                rmse: r.per_split.iter().map(|(s, m)| (*s, m.rmse_cycles)).collect(),
            })
            .collect(),
        element_voltage_v: opt.voltage_v,
    };
    let dir = ctx.out("table2")?;
    write_csv(
        &dir.join("table2.csv"),
        &split_header(&["model"]),
        table.rows.iter().map(|r| {
            let mut row = vec![r.model.clone()];
            row.extend(Split::ALL.iter().map(|s| fmt(r.rmse.get(s).copied().unwrap_or(f64::NAN))));
            row
        }),
    )?;
    write_reports_csv(&dir.join("table2_metrics.csv"), &reports)?;
    write_json(&dir.join("table2.json"), &table)?;
    Ok(table)
}
