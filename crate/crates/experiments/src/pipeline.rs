//! Dataset loading and the fit-then-score step shared by all runners.

use std::path::{Path, PathBuf};

use capmatrix_core::capmatrix::CycleWindow;
use capmatrix_core::dataset::{load_dataset, CellRecord, Split};
use capmatrix_core::eval::{evaluate, EvalReport, TargetSpace};
use capmatrix_core::features::{compute_cell_dqs, CellDeltaQ, DqConfig, FeatureTable};
use capmatrix_core::linear_models::{cross_validate, CvConfig, FitResult, ModelSpec};

use crate::config::ExperimentConfig;
use crate::error::Result;
use crate::output::ensure_dir;

pub struct Context {
    pub cfg: ExperimentConfig,
    pub cells: Vec<CellRecord>,
}

impl Context {
    /// Loads the configured dataset.
    pub fn load(cfg: ExperimentConfig) -> Result<Self> {
        let (manifest, data_dir) = cfg.dataset_paths()?;
        let cells = load_dataset(&manifest, &data_dir)?;
        log::info!("loaded {} cells from {}", cells.len(), manifest.display());
        Ok(Self { cfg, cells })
    }

    pub fn from_cells(cfg: ExperimentConfig, cells: Vec<CellRecord>) -> Self {
        Self { cfg, cells }
    }

    pub fn cv(&self) -> CvConfig {
        CvConfig {
            n_folds: self.cfg.models.n_folds,
            seed: self.cfg.seed,
        }
    }

    pub fn windows(&self, cycle_averaged: bool) -> (CycleWindow, CycleWindow) {
        let w = &self.cfg.windows;
        if cycle_averaged {
            (w.averaged_hi.clone(), w.averaged_lo.clone())
        } else {
            (w.hi.clone(), w.lo.clone())
        }
    }

    pub fn dq_config(&self, cycle_averaged: bool, downsample: Option<usize>) -> DqConfig {
        let (hi, lo) = self.windows(cycle_averaged);
        DqConfig {
            grid: self.cfg.grid.clone(),
            hi,
            lo,
            method: self.cfg.resample,
            downsample: downsample.filter(|&n| n != self.cfg.grid.n_points()),
        }
    }

    pub fn dqs(&self, cycle_averaged: bool, downsample: Option<usize>) -> Result<Vec<CellDeltaQ>> {
        Ok(compute_cell_dqs(&self.cells, &self.dq_config(cycle_averaged, downsample))?)
    }

    /// Output subdirectory, created on demand.
    pub fn out(&self, sub: &str) -> Result<PathBuf> {
        ensure_dir(&self.cfg.output_dir.join(sub))
    }

    pub fn out_root(&self) -> &Path {
        &self.cfg.output_dir
    }
}

/// Training rows: train split, outliers excluded.
pub fn training_rows(table: &FeatureTable) -> Vec<usize> {
    (0..table.n_cells())
        .filter(|&i| table.splits[i] == Split::Train && !table.outliers[i])
        .collect()
}

#[derive(Clone, Debug)]
pub struct ScoredFit {
    pub name: String,
    pub fit: FitResult,
    pub report: EvalReport,
}

impl ScoredFit {
    pub fn rmse(&self, split: Split) -> f64 {
        self.report.rmse(split).unwrap_or(f64::NAN)
    }
}

/// Cross-validates `spec` on the training rows of `table` and scores the
/// refitted model on every split.
pub fn fit_and_score(
    name: &str,
    table: &FeatureTable,
    space: TargetSpace,
    spec: &ModelSpec,
    cv: &CvConfig,
) -> Result<ScoredFit> {
    let train = table.rows(&training_rows(table));
    let mut fit = cross_validate(
        &train.values,
        &train.cycle_lives(),
        space,
        spec,
        cv,
        &table.feature_names,
    )?;
    let report = evaluate(name, &fit.model, table)?;
    fit.per_split_rmse = report.per_split.iter().map(|(s, m)| (*s, m.rmse_cycles)).collect();
    Ok(ScoredFit {
        name: name.to_string(),
        fit,
        report,
    })
}

/// Explicit ids if configured; otherwise the training cells nearest each
/// requested life plus the training-median cell, in that order, deduplicated.
pub fn example_cells(cfg: &ExperimentConfig, dqs: &[CellDeltaQ]) -> Vec<usize> {
    if let Some(ids) = &cfg.example_cells {
        return ids
            .iter()
            .filter_map(|id| dqs.iter().position(|c| &c.cell_id == id))
            .collect();
    }
    let train: Vec<usize> = (0..dqs.len())
        .filter(|&i| dqs[i].split == Split::Train && !dqs[i].is_outlier)
        .collect();
    if train.is_empty() {
        return Vec::new();
    }
    let life = |i: usize| dqs[i].label.cycle_life as f64;
    let nearest = |target: f64| {
        *train
            .iter()
            .min_by(|&&a, &&b| (life(a) - target).abs().total_cmp(&(life(b) - target).abs()))
            .expect("non-empty")
    };
    let mut by_life = train.clone();
    by_life.sort_by(|&a, &b| life(a).total_cmp(&life(b)).then(a.cmp(&b)));
    let median = by_life[(by_life.len() - 1) / 2];
    let mut out: Vec<usize> = cfg.example_cycle_lives.iter().map(|&t| nearest(t)).collect();
    out.push(median);
    let mut seen = std::collections::HashSet::new();
    out.retain(|i| seen.insert(*i));
    out
}

/// Pearson correlation; NaN when either side has no spread.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    sab / (saa * sbb).sqrt()
}
