//! Statistic × transform grid of univariate models.

use capmatrix_core::dataset::Split;
use capmatrix_core::eval::TargetSpace;
use capmatrix_core::features::{suppress_anomalies, FeatureSpec, Transform};
use rayon::prelude::*;
use serde::Serialize;

use super::spec_table;
use crate::error::Result;
use crate::output::{fmt, fmt_opt, write_csv, write_json};
use crate::pipeline::{fit_and_score, Context};
use crate::svg;

#[derive(Clone, Debug, Serialize)]
pub struct GridEntry {
    pub spec: FeatureSpec,
    pub split: Split,
    /// NaN when the fit failed.
    pub rmse_cycles: f64,
    /// Presentation value: hidden when the fit failed or the error is anomalous.
    pub shown_rmse_cycles: Option<f64>,
    pub note: Option<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct UnivariateGrid {
    pub target_space: TargetSpace,
    pub window: String,
    pub entries: Vec<GridEntry>,
}

impl UnivariateGrid {
    pub fn rmse(&self, spec: &FeatureSpec, split: Split) -> Option<f64> {
        self.entries
            .iter()
            .find(|e| &e.spec == spec && e.split == split)
            .map(|e| e.rmse_cycles)
    }
}

pub fn file_stem(space: TargetSpace, cycle_averaged: bool) -> String {
    let w = if cycle_averaged { "averaged" } else { "single" };
    format!("univariate_{}_{w}", space.as_str())
}

pub fn run_univariate_grid(ctx: &Context, space: TargetSpace, cycle_averaged: bool) -> Result<UnivariateGrid> {
    let dqs = ctx.dqs(cycle_averaged, None)?;
    let window = dqs.first().map(|c| c.dq.label()).unwrap_or_default();
    let specs: Vec<FeatureSpec> = ctx
        .cfg
        .roster
        .iter()
        .flat_map(|s| Transform::ALL.iter().map(move |&t| FeatureSpec::new(*s, t)))
        .collect::<capmatrix_core::Result<_>>()?;
    let cv = ctx.cv();
    let model = &ctx.cfg.models.univariate;

    let fits: Vec<(FeatureSpec, std::result::Result<_, String>)> = specs
        .par_iter()
        .map(|spec| {
            let r = spec_table(&dqs, spec)
                .and_then(|t| fit_and_score(&spec.name(), &t, space, model, &cv))
                .map_err(|e| e.to_string());
            (*spec, r)
        })
        .collect();

    let mut entries = Vec::new();
    for split in Split::ALL {
        let raw: Vec<(FeatureSpec, f64, Option<String>)> = fits
            .iter()
            .map(|(spec, r)| match r {
                Ok(f) => (*spec, f.report.rmse(split).unwrap_or(f64::NAN), None),
                Err(e) => (*spec, f64::NAN, Some(e.clone())),
            })
            .collect();
        if raw.iter().all(|r| r.1.is_nan() && r.2.is_none()) {
            continue;
        }
        let errors: Vec<f64> = raw.iter().map(|r| r.1).collect();
        let shown = suppress_anomalies(&errors);
        for ((spec, rmse, reason), shown) in raw.into_iter().zip(shown) {
            let note = match (&reason, shown) {
                (Some(r), _) => Some(format!("fit failed: {r}")),
                (None, None) if rmse.is_finite() => Some("suppressed: above 3x grid median".into()),
                _ => None,
            };
            entries.push(GridEntry {
                spec,
                split,
                rmse_cycles: rmse,
                shown_rmse_cycles: shown,
                note,
            });
        }
    }
    let grid = UnivariateGrid {
        target_space: space,
        window,
        entries,
    };
    write_grid(ctx, &grid, &file_stem(space, cycle_averaged))?;
    Ok(grid)
}

fn write_grid(ctx: &Context, grid: &UnivariateGrid, stem: &str) -> Result<()> {
    let dir = ctx.out("univariate")?;
    write_csv(
        &dir.join(format!("{stem}.csv")),
        &[
            "statistic",
            "transform",
            "abs_before_transform",
            "label",
            "split",
            "rmse_cycles",
            "shown_rmse_cycles",
            "note",
        ],
        grid.entries.iter().map(|e| {
            vec![
                e.spec.statistic.name(),
                e.spec.transform.as_str().to_string(),
                e.spec.abs_before_transform.to_string(),
                e.spec.display_label(),
                e.split.to_string(),
                fmt(e.rmse_cycles),
                fmt_opt(e.shown_rmse_cycles),
                e.note.clone().unwrap_or_default(),
            ]
        }),
    )?;
    write_json(&dir.join(format!("{stem}.json")), grid)?;
    if ctx.cfg.emit_svg {
        let cols: Vec<String> = Transform::ALL.iter().map(|t| t.as_str().to_string()).collect();
        for split in Split::ALL {
            let mut rows: Vec<String> = Vec::new();
            let mut values: Vec<Vec<Option<f64>>> = Vec::new();
            for e in grid.entries.iter().filter(|e| e.split == split) {
                let label = e.spec.statistic.name();
                if rows.last() != Some(&label) {
                    rows.push(label);
                    values.push(Vec::new());
                }
                values.last_mut().expect("row pushed").push(e.shown_rmse_cycles);
            }
            if rows.is_empty() {
                continue;
            }
            svg::heatmap(
                &dir.join(format!("{stem}_{split}.svg")),
                &format!("RMSE (cycles), {} target, {}, {split}", grid.target_space.as_str(), grid.window),
                &rows,
                &cols,
                &values,
            )?;
        }
    }
    Ok(())
}
