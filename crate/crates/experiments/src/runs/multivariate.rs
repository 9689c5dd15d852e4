//! Ridge, elastic net, PCR, PLSR and a random forest on ΔQ elements.

use capmatrix_core::eval::{evaluate, write_reports_csv, write_reports_json, EvalReport, TargetSpace};
use capmatrix_core::features::{CellDeltaQ, FeatureTable};
use capmatrix_core::forest::{fit_forest, Forest};
use capmatrix_core::linear_models::{cosine_similarity, LinearModel, ModelSpec};
use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::Result;
use crate::output::{ensure_dir, fmt, write_csv, write_json};
use crate::pipeline::{example_cells, fit_and_score, training_rows, Context, ScoredFit};
use crate::svg;

pub const LINEAR_MODELS: [&str; 4] = ["ridge", "elastic_net", "pcr", "plsr"];
pub const FOREST_NAME: &str = "random_forest";

#[derive(Clone, Debug, Serialize)]
pub struct ProductRow {
    pub cell_id: String,
    pub cycle_life: u32,
    pub voltage_v: f64,
    pub standardized_dq: f64,
    pub coefficient: f64,
    pub product: f64,
}

#[derive(Clone, Debug)]
pub struct MultivariateResult {
    pub table: FeatureTable,
    pub voltages: Vec<f64>,
    /// In `LINEAR_MODELS` order.
    pub linear: Vec<ScoredFit>,
    pub forest: Forest,
    pub forest_report: EvalReport,
    /// (model a, model b, cosine similarity of standardized coefficients).
    pub cosine: Vec<(String, String, f64)>,
    pub plsr_products: Vec<ProductRow>,
}

impl MultivariateResult {
    pub fn linear_fit(&self, name: &str) -> Option<&ScoredFit> {
        self.linear.iter().find(|f| f.name == name)
    }

    pub fn reports(&self) -> Vec<EvalReport> {
        let mut r: Vec<EvalReport> = self.linear.iter().map(|f| f.report.clone()).collect();
        r.push(self.forest_report.clone());
        r
    }
}

pub(crate) fn specs(ctx: &Context) -> [(&'static str, &ModelSpec); 4] {
    let m = &ctx.cfg.models;
    [
        ("ridge", &m.ridge),
        ("elastic_net", &m.elastic_net),
        ("pcr", &m.pcr),
        ("plsr", &m.plsr),
    ]
}

pub(crate) fn fit_forest_scored(ctx: &Context, table: &FeatureTable) -> Result<(Forest, EvalReport)> {
    let train = table.rows(&training_rows(table));
    let forest = fit_forest(
        &train.values,
        &train.log10_cycle_lives(),
        &ctx.cfg.models.forest,
        ctx.cfg.seed,
    )?
    .with_target_space(TargetSpace::Log10Cycles);
    let report = evaluate(FOREST_NAME, &forest, table)?;
    Ok((forest, report))
}

/// Per-voltage contributions `coefficient × standardized ΔQ` for one cell.
pub fn element_products(model: &LinearModel, table: &FeatureTable, row: usize, voltages: &[f64], dqs: &CellDeltaQ) -> Result<Vec<ProductRow>> {
    let x = DMatrix::from_fn(1, table.n_features(), |_, j| table.values[(row, j)]);
    let z = model.standardizer.transform(&x)?;
    Ok(voltages
        .iter()
        .enumerate()
        .map(|(j, &v)| ProductRow {
            cell_id: dqs.cell_id.clone(),
            cycle_life: dqs.label.cycle_life,
            voltage_v: v,
            standardized_dq: z[(0, j)],
            coefficient: model.coefficients[j],
            product: z[(0, j)] * model.coefficients[j],
        })
        .collect())
}

pub fn run_multivariate(ctx: &Context, cycle_averaged: bool) -> Result<MultivariateResult> {
    let dqs = ctx.dqs(cycle_averaged, Some(ctx.cfg.multivariate_points))?;
    let table = FeatureTable::elements(&dqs)?;
    let voltages = dqs[0].dq.voltages.clone();
    let cv = ctx.cv();
    let linear = specs(ctx)
        .iter()
        .map(|(name, spec)| {
            log::info!("multivariate: fitting {name}");
            fit_and_score(name, &table, TargetSpace::Log10Cycles, spec, &cv)
        })
        .collect::<Result<Vec<_>>>()?;
    log::info!("multivariate: fitting {FOREST_NAME}");
    let (forest, forest_report) = fit_forest_scored(ctx, &table)?;

    let mut cosine = Vec::new();
    for a in 0..linear.len() {
        for b in a + 1..linear.len() {
            cosine.push((
                linear[a].name.clone(),
                linear[b].name.clone(),
                cosine_similarity(&linear[a].fit.model.coefficients, &linear[b].fit.model.coefficients),
            ));
        }
    }

    let plsr = &linear[3].fit.model;
    let mut plsr_products = Vec::new();
    for i in example_cells(&ctx.cfg, &dqs) {
        plsr_products.extend(element_products(plsr, &table, i, &voltages, &dqs[i])?);
    }

    let result = MultivariateResult {
        table,
        voltages,
        linear,
        forest,
        forest_report,
        cosine,
        plsr_products,
    };
    write_outputs(ctx, &result, cycle_averaged)?;
    Ok(result)
}

fn write_outputs(ctx: &Context, r: &MultivariateResult, cycle_averaged: bool) -> Result<()> {
    let dir = ctx.out(if cycle_averaged { "multivariate_averaged" } else { "multivariate" })?;
    let models_dir = ensure_dir(&dir.join("models"))?;
    let reports = r.reports();
    write_reports_csv(&dir.join("metrics.csv"), &reports)?;
    write_reports_json(&dir.join("metrics.json"), &reports)?;
    for f in &r.linear {
        f.fit.model.save(&models_dir.join(format!("{}.json", f.name)))?;
        write_csv(
            &dir.join(format!("cv_grid_{}.csv", f.name)),
            &["hyperparameters", "cv_rmse_cycles"],
            f.fit
                .grid
                .iter()
                .map(|g| vec![serde_json::to_string(&g.hyperparameters).unwrap_or_default(), fmt(g.cv_rmse)]),
        )?;
        write_json(&dir.join(format!("chosen_{}.json", f.name)), &f.fit.chosen)?;
    }
    std::fs::write(models_dir.join(format!("{FOREST_NAME}.json")), r.forest.to_json()?)
        .map_err(|e| crate::error::ExperimentError::io(models_dir.join(FOREST_NAME), e))?;

    let mut header = vec!["voltage_v"];
    header.extend(LINEAR_MODELS);
    write_csv(
        &dir.join("coefficients.csv"),
        &header,
        r.voltages.iter().enumerate().map(|(j, v)| {
            let mut row = vec![fmt(*v)];
            row.extend(r.linear.iter().map(|f| fmt(f.fit.model.coefficients[j])));
            row
        }),
    )?;
    r.forest.write_importances(&dir.join("forest_importances.csv"), &r.voltages)?;
    write_csv(
        &dir.join("cosine_similarity.csv"),
        &["model_a", "model_b", "cosine_similarity"],
        r.cosine.iter().map(|(a, b, c)| vec![a.clone(), b.clone(), fmt(*c)]),
    )?;
    write_csv(
        &dir.join("plsr_element_products.csv"),
        &["cell_id", "cycle_life", "voltage_v", "standardized_dq", "coefficient", "product"],
        r.plsr_products.iter().map(|p| {
            vec![
                p.cell_id.clone(),
                p.cycle_life.to_string(),
                fmt(p.voltage_v),
                fmt(p.standardized_dq),
                fmt(p.coefficient),
                fmt(p.product),
            ]
        }),
    )?;
    if ctx.cfg.emit_svg {
        let series: Vec<(String, Vec<(f64, f64)>)> = r
            .linear
            .iter()
            .map(|f| {
                (
                    f.name.clone(),
                    r.voltages.iter().copied().zip(f.fit.model.coefficients.iter().copied()).collect(),
                )
            })
            .collect();
        svg::line_plot(&dir.join("coefficients.svg"), "standardized coefficients", "voltage (V)", "coefficient", &series)?;
        svg::line_plot(
            &dir.join("forest_importances.svg"),
            "forest importances",
            "voltage (V)",
            "importance",
            &[("importance".into(), r.voltages.iter().copied().zip(r.forest.importances.iter().copied()).collect())],
        )?;
        let mut cells: Vec<&str> = r.plsr_products.iter().map(|p| p.cell_id.as_str()).collect();
        cells.dedup();
        let series: Vec<(String, Vec<(f64, f64)>)> = cells
            .iter()
            .map(|id| {
                let pts: Vec<&ProductRow> = r.plsr_products.iter().filter(|p| p.cell_id == *id).collect();
                (
                    format!("{} cycles", pts[0].cycle_life),
                    pts.iter().map(|p| (p.voltage_v, p.product)).collect(),
                )
            })
            .collect();
        svg::line_plot(&dir.join("plsr_element_products.svg"), "PLSR coefficient × standardized ΔQ", "voltage (V)", "contribution", &series)?;
    }
    Ok(())
}
