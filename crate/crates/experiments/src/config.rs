use std::path::{Path, PathBuf};

use capmatrix_core::capmatrix::{CycleWindow, ResampleMethod, VoltageGrid};
use capmatrix_core::features::Statistic;
use capmatrix_core::forest::ForestParams;
use capmatrix_core::linear_models::{ModelSpec, DEFAULT_FOLDS};
use capmatrix_core::synth::SynthScenario;
use serde::{Deserialize, Serialize};

use crate::error::{ExperimentError, Result};

/// ΔQ cycle windows: the single-cycle pair and the cycle-averaged pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Windows {
    pub hi: CycleWindow,
    pub lo: CycleWindow,
    pub averaged_hi: CycleWindow,
    pub averaged_lo: CycleWindow,
}

impl Default for Windows {
    fn default() -> Self {
        Self {
            hi: CycleWindow::single(100),
            lo: CycleWindow::single(10),
            averaged_hi: CycleWindow::span(98, 100).expect("valid span"),
            averaged_lo: CycleWindow::span(9, 11).expect("valid span"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelGrids {
    /// Used by every univariate experiment.
    pub univariate: ModelSpec,
    pub ridge: ModelSpec,
    pub elastic_net: ModelSpec,
    pub pcr: ModelSpec,
    pub plsr: ModelSpec,
    pub forest: ForestParams,
    pub n_folds: usize,
}

impl Default for ModelGrids {
    fn default() -> Self {
        Self {
            univariate: ModelSpec::elastic_net(),
            ridge: ModelSpec::ridge(),
            elastic_net: ModelSpec::elastic_net(),
            pcr: ModelSpec::pcr(),
            plsr: ModelSpec::plsr(),
            forest: ForestParams::default(),
            n_folds: DEFAULT_FOLDS,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Manifest CSV of the dataset; required by every subcommand except `synth`.
    pub manifest: Option<PathBuf>,
    /// Directory holding the per-cell CSVs; defaults to the manifest's directory.
    pub data_dir: Option<PathBuf>,
    pub grid: VoltageGrid,
    pub resample: ResampleMethod,
    pub windows: Windows,
    pub roster: Vec<Statistic>,
    pub models: ModelGrids,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub emit_svg: bool,
    pub downsample_counts: Vec<usize>,
    /// ΔQ points used as features by the multivariate models.
    pub multivariate_points: usize,
    /// Integer percent step of the percentile heatmap.
    pub percentile_step: u32,
    pub table2_percentiles: (f64, f64),
    /// Percentile pairs marked on the exported example curves.
    pub annotated_percentiles: Vec<(f64, f64)>,
    /// Example cells are the training cells nearest these lives, plus the
    /// training-median cell, unless `example_cells` lists ids explicitly.
    pub example_cycle_lives: Vec<f64>,
    pub example_cells: Option<Vec<String>>,
    /// Length of the downsampled flattened capacity matrix.
    pub full_matrix_features: usize,
    /// Cells whose matrices `matrices` writes; all cells when absent.
    pub matrix_cells: Option<Vec<String>>,
    pub synth: SynthScenario,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            manifest: None,
            data_dir: None,
            grid: VoltageGrid::default(),
            resample: ResampleMethod::Linear,
            windows: Windows::default(),
            roster: Statistic::roster().to_vec(),
            models: ModelGrids::default(),
            seed: 0,
            output_dir: PathBuf::from("out"),
            emit_svg: true,
            downsample_counts: vec![1000, 500, 200, 100, 40, 20, 10, 5],
            multivariate_points: 100,
            percentile_step: 1,
            table2_percentiles: (31.0, 62.0),
            annotated_percentiles: vec![(31.0, 62.0), (25.0, 75.0)],
            example_cycle_lives: vec![300.0, 461.0, 1424.0, 2160.0],
            example_cells: None,
            full_matrix_features: 1000,
            matrix_cells: None,
            synth: SynthScenario::default(),
        }
    }
}

impl ExperimentConfig {
    /// Reads a JSON config. Relative paths inside it resolve against the
    /// config file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| ExperimentError::io(path, e))?;
        let mut cfg: Self = serde_json::from_str(&text).map_err(|source| ExperimentError::ConfigParse {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(m) = cfg.manifest.as_mut() {
            resolve(m);
        }
        if let Some(d) = cfg.data_dir.as_mut() {
            resolve(d);
        }
        resolve(&mut cfg.output_dir);
        cfg.validate()?;
        Ok(cfg)
    }

    /// Overrides the run seed and the synthetic scenario's seed.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.synth.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(ExperimentError::InvalidConfig(m.into()));
        if self.roster.is_empty() {
            return bad("roster is empty");
        }
        if self.downsample_counts.iter().any(|&n| n < 2 || n > self.grid.n_points()) {
            return bad("downsample counts must lie in [2, grid points]");
        }
        if self.multivariate_points < 2 || self.multivariate_points > self.grid.n_points() {
            return bad("multivariate_points must lie in [2, grid points]");
        }
        if self.percentile_step == 0 || self.percentile_step > 100 {
            return bad("percentile_step must lie in [1, 100]");
        }
        let (l, u) = self.table2_percentiles;
        if !(0.0..=100.0).contains(&l) || !(l..=100.0).contains(&u) {
            return bad("table2_percentiles must satisfy 0 <= lower <= upper <= 100");
        }
        if self.full_matrix_features < 2 {
            return bad("full_matrix_features must be at least 2");
        }
        if self.models.n_folds < 2 {
            return bad("n_folds must be at least 2");
        }
        Ok(())
    }

    /// Manifest and data directory, checked to exist.
    pub fn dataset_paths(&self) -> Result<(PathBuf, PathBuf)> {
        let manifest = self
            .manifest
            .clone()
            .ok_or_else(|| ExperimentError::InvalidConfig("no dataset manifest configured".into()))?;
        if !manifest.is_file() {
            return Err(ExperimentError::InvalidConfig(format!(
                "manifest {} does not exist",
                manifest.display()
            )));
        }
        let data_dir = match &self.data_dir {
            Some(d) => d.clone(),
            None => manifest.parent().unwrap_or(Path::new(".")).to_path_buf(),
        };
        if !data_dir.is_dir() {
            return Err(ExperimentError::InvalidConfig(format!(
                "data directory {} does not exist",
                data_dir.display()
            )));
        }
        Ok((manifest, data_dir))
    }
}
