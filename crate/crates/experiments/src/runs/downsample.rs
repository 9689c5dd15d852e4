//! RMSE of the log10(var ΔQ) model as ΔQ is sampled more coarsely.

use capmatrix_core::dataset::Split;
use capmatrix_core::eval::TargetSpace;
use capmatrix_core::features::{FeatureSpec, Statistic, Transform};
use serde::Serialize;

use super::spec_table;
use crate::error::Result;
use crate::output::{fmt, write_csv};
use crate::pipeline::{fit_and_score, Context};
use crate::svg;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DownsampleRow {
    pub n_points: usize,
    pub spacing_mv: f64,
    pub split: Split,
    pub rmse_cycles: f64,
    /// Change relative to the full-grid model, in percent.
    pub delta_rmse_pct: f64,
}

pub fn run_downsample_sweep(ctx: &Context) -> Result<Vec<DownsampleRow>> {
    let spec = FeatureSpec::new(Statistic::Variance, Transform::Log10)?;
    let cv = ctx.cv();
    let space = TargetSpace::Log10Cycles;
    let model = &ctx.cfg.models.univariate;
    let full_n = ctx.cfg.grid.n_points();
    let score = |n: usize| -> Result<_> {
        let table = spec_table(&ctx.dqs(false, Some(n))?, &spec)?;
        fit_and_score(&format!("log10_var_{n}pts"), &table, space, model, &cv)
    };
    let reference = score(full_n)?;
    let span_mv = (ctx.cfg.grid.v_max() - ctx.cfg.grid.v_min()) * 1000.0;

    let mut rows = Vec::new();
    for &n in &ctx.cfg.downsample_counts {
        let fit = if n == full_n { reference.clone() } else { score(n)? };
        for split in Split::ALL {
            let (Some(r), Some(base)) = (fit.report.rmse(split), reference.report.rmse(split)) else {
                continue;
            };
            rows.push(DownsampleRow {
                n_points: n,
                spacing_mv: span_mv / (n - 1) as f64,
                split,
                rmse_cycles: r,
                delta_rmse_pct: 100.0 * (r - base) / base,
            });
        }
    }

    let dir = ctx.out("downsample")?;
    write_csv(
        &dir.join("downsample_sweep.csv"),
        &["n_points", "spacing_mv", "split", "rmse_cycles", "delta_rmse_pct"],
        rows.iter().map(|r| {
            vec![
                r.n_points.to_string(),
                fmt(r.spacing_mv),
                r.split.to_string(),
                fmt(r.rmse_cycles),
                fmt(r.delta_rmse_pct),
            ]
        }),
    )?;
    if ctx.cfg.emit_svg {
        let series: Vec<(String, Vec<(f64, f64)>)> = Split::ALL
            .iter()
            .map(|&s| {
                let mut pts: Vec<(f64, f64)> = rows
                    .iter()
                    .filter(|r| r.split == s)
                    .map(|r| (r.spacing_mv.log10(), r.delta_rmse_pct))
                    .collect();
                pts.sort_by(|a, b| a.0.total_cmp(&b.0));
                (s.to_string(), pts)
            })
            .filter(|(_, p)| !p.is_empty())
            .collect();
        svg::line_plot(
            &dir.join("downsample_sweep.svg"),
            "RMSE change vs. voltage spacing",
            "log10(spacing / mV)",
            "ΔRMSE (%)",
            &series,
        )?;
    }
    Ok(rows)
}
