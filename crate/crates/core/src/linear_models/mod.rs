//! Linear regression on standardized features: OLS, ridge, elastic net, PCR
//! and PLSR, plus seeded k-fold cross-validation over hyperparameter grids.
//!
//! Every fitter standardizes the training rows (population standard
//! deviation), centers the target, and keeps the intercept unpenalized, so the
//! intercept of every model equals the training-target mean. Coefficients are
//! stored in standardized-feature space.

mod cv;
mod solvers;

use std::path::Path;

use indexmap::IndexMap;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{Predictor, TargetSpace};

pub use cv::{
    cross_validate, default_lambdas, fold_assignment, log_spaced, CvConfig, FitResult, GridScore, ModelSpec,
    DEFAULT_ALPHAS, DEFAULT_FOLDS, DEFAULT_MAX_COMPONENTS,
};
pub use solvers::{soft_threshold, ENET_MAX_SWEEPS, ENET_TOLERANCE};

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Population-std scaling fitted on training rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
    /// Columns with (numerically) zero spread; they map to 0 and carry no coefficient.
    pub degenerate: Vec<bool>,
}

impl Standardizer {
    pub fn fit(x: &DMatrix<f64>) -> Result<Self> {
        let n = x.nrows();
        if n == 0 {
            return Err(Error::InvalidInput("cannot standardize zero rows".into()));
        }
        let mut means = Vec::with_capacity(x.ncols());
        let mut stds = Vec::with_capacity(x.ncols());
        let mut degenerate = Vec::with_capacity(x.ncols());
        for col in x.column_iter() {
            let m = col.sum() / n as f64;
            let var = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n as f64;
            let s = var.sqrt();
            if !m.is_finite() || !s.is_finite() {
                return Err(Error::NonFinite("feature column".into()));
            }
            let flat = s == 0.0 || s <= 1e-12 * m.abs();
            means.push(m);
            stds.push(if flat { 1.0 } else { s });
            degenerate.push(flat);
        }
        let n_flat = degenerate.iter().filter(|d| **d).count();
        if n_flat > 0 {
            log::warn!("{n_flat} zero-variance feature column(s) dropped");
        }
        Ok(Self { means, stds, degenerate })
    }

    pub fn n_features(&self) -> usize {
        self.means.len()
    }

    pub fn active(&self) -> Vec<usize> {
        (0..self.n_features()).filter(|&j| !self.degenerate[j]).collect()
    }

    pub fn transform(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.ncols() != self.n_features() {
            return Err(Error::DimensionMismatch {
                expected: self.n_features(),
                got: x.ncols(),
            });
        }
        let mut z = x.clone();
        for (j, mut col) in z.column_iter_mut().enumerate() {
            if self.degenerate[j] {
                col.fill(0.0);
            } else {
                col.apply(|v| *v = (*v - self.means[j]) / self.stds[j]);
            }
        }
        Ok(z)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum Hyperparameters {
    Ols,
    Ridge { lambda: f64 },
    ElasticNet { alpha: f64, lambda: f64 },
    Pcr { n_components: usize },
    Plsr { n_components: usize },
}

impl Hyperparameters {
    pub fn method_name(&self) -> &'static str {
        match self {
            Hyperparameters::Ols => "ols",
            Hyperparameters::Ridge { .. } => "ridge",
            Hyperparameters::ElasticNet { .. } => "elastic_net",
            Hyperparameters::Pcr { .. } => "pcr",
            Hyperparameters::Plsr { .. } => "plsr",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinearModel {
    pub standardizer: Standardizer,
    /// Standardized-feature space; zero for degenerate columns.
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    pub target_space: TargetSpace,
    pub feature_names: Vec<String>,
    pub hyperparameters: Hyperparameters,
}

impl LinearModel {
    pub fn with_target_space(mut self, space: TargetSpace) -> Self {
        self.target_space = space;
        self
    }

    pub fn with_feature_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.coefficients.len() {
            return Err(Error::DimensionMismatch {
                expected: self.coefficients.len(),
                got: names.len(),
            });
        }
        self.feature_names = names;
        Ok(self)
    }

    pub fn predict(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        let z = self.standardizer.transform(x)?;
        let beta = DVector::from_column_slice(&self.coefficients);
        Ok((z * beta).iter().map(|v| v + self.intercept).collect())
    }

    /// Coefficients and intercept for unscaled features.
    pub fn raw_coefficients(&self) -> (Vec<f64>, f64) {
        let s = &self.standardizer;
        let raw: Vec<f64> = self
            .coefficients
            .iter()
            .zip(&s.stds)
            .map(|(b, sd)| b / sd)
            .collect();
        let shift: f64 = raw.iter().zip(&s.means).map(|(b, m)| b * m).sum();
        (raw, self.intercept - shift)
    }

    pub fn n_nonzero(&self) -> usize {
        self.coefficients.iter().filter(|b| **b != 0.0).count()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&ModelFile::from(self))?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text)?;
        file.try_into()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

impl Predictor for LinearModel {
    fn predict(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        LinearModel::predict(self, x)
    }

    fn target_space(&self) -> TargetSpace {
        self.target_space
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct StandardizerFile {
    means: Vec<f64>,
    stds: Vec<f64>,
    degenerate: Vec<bool>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelFile {
    format_version: u32,
    model_type: String,
    target_space: TargetSpace,
    hyperparameters: Hyperparameters,
    intercept: f64,
    coefficients: IndexMap<String, f64>,
    standardizer: StandardizerFile,
}

impl From<&LinearModel> for ModelFile {
    fn from(m: &LinearModel) -> Self {
        Self {
            format_version: MODEL_FORMAT_VERSION,
            model_type: "linear".into(),
            target_space: m.target_space,
            hyperparameters: m.hyperparameters,
            intercept: m.intercept,
            coefficients: m
                .feature_names
                .iter()
                .cloned()
                .zip(m.coefficients.iter().copied())
                .collect(),
            standardizer: StandardizerFile {
                means: m.standardizer.means.clone(),
                stds: m.standardizer.stds.clone(),
                degenerate: m.standardizer.degenerate.clone(),
            },
        }
    }
}

impl TryFrom<ModelFile> for LinearModel {
    type Error = Error;

    fn try_from(f: ModelFile) -> Result<Self> {
        if f.format_version != MODEL_FORMAT_VERSION || f.model_type != "linear" {
            return Err(Error::InvalidInput(format!(
                "unsupported model file (type {}, version {})",
                f.model_type, f.format_version
            )));
        }
        let p = f.coefficients.len();
        let s = f.standardizer;
        if s.means.len() != p || s.stds.len() != p || s.degenerate.len() != p {
            return Err(Error::DimensionMismatch {
                expected: p,
                got: s.means.len(),
            });
        }
        let (feature_names, coefficients) = f.coefficients.into_iter().unzip();
        Ok(Self {
            standardizer: Standardizer {
                means: s.means,
                stds: s.stds,
                degenerate: s.degenerate,
            },
            coefficients,
            intercept: f.intercept,
            target_space: f.target_space,
            feature_names,
            hyperparameters: f.hyperparameters,
        })
    }
}

/// Standardized design restricted to active columns, plus the centered target.
struct Prepared {
    standardizer: Standardizer,
    active: Vec<usize>,
    z: DMatrix<f64>,
    y_mean: f64,
    yc: Vec<f64>,
}

fn prepare(x: &DMatrix<f64>, y: &[f64]) -> Result<Prepared> {
    if x.nrows() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.nrows(),
            got: y.len(),
        });
    }
    if y.len() < 2 {
        return Err(Error::TooFewPoints { needed: 2, got: y.len() });
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("regression target".into()));
    }
    let standardizer = Standardizer::fit(x)?;
    let active = standardizer.active();
    let z = standardizer.transform(x)?.select_columns(&active);
    let y_mean = y.iter().sum::<f64>() / y.len() as f64;
    let yc = y.iter().map(|v| v - y_mean).collect();
    Ok(Prepared {
        standardizer,
        active,
        z,
        y_mean,
        yc,
    })
}

fn assemble(
    standardizer: Standardizer,
    active: &[usize],
    y_mean: f64,
    active_beta: &[f64],
    hyperparameters: Hyperparameters,
) -> LinearModel {
    let n_features = standardizer.n_features();
    let mut coefficients = vec![0.0; n_features];
    for (k, &j) in active.iter().enumerate() {
        coefficients[j] = active_beta[k];
    }
    LinearModel {
        standardizer,
        coefficients,
        intercept: y_mean,
        target_space: TargetSpace::default(),
        feature_names: (0..n_features).map(|j| format!("x{j}")).collect(),
        hyperparameters,
    }
}

impl Prepared {
    fn finish(self, active_beta: &[f64], hyperparameters: Hyperparameters) -> LinearModel {
        assemble(self.standardizer, &self.active, self.y_mean, active_beta, hyperparameters)
    }
}

/// Least squares via QR; errors when the standardized design is rank deficient.
pub fn fit_ols(x: &DMatrix<f64>, y: &[f64]) -> Result<LinearModel> {
    let p = prepare(x, y)?;
    let beta = solvers::ols(&p.z, &p.yc)?;
    Ok(p.finish(&beta, Hyperparameters::Ols))
}

/// `(ZᵀZ + λI)⁻¹ Zᵀy` on standardized features.
pub fn fit_ridge(x: &DMatrix<f64>, y: &[f64], lambda: f64) -> Result<LinearModel> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidInput(format!("ridge lambda must be >= 0, got {lambda}")));
    }
    let p = prepare(x, y)?;
    let beta = solvers::ridge(&p.z, &p.yc, lambda)?;
    Ok(p.finish(&beta, Hyperparameters::Ridge { lambda }))
}

/// Minimizes `(1/2n)‖y − Zβ‖² + λ[(1−α)/2 ‖β‖² + α‖β‖₁]` by cyclic coordinate descent.
///
/// With this scaling, `α = 0` matches [`fit_ridge`] at penalty `n·λ`.
pub fn fit_elastic_net(x: &DMatrix<f64>, y: &[f64], alpha: f64, lambda: f64) -> Result<LinearModel> {
    solvers::check_enet_params(alpha, lambda)?;
    let p = prepare(x, y)?;
    let mut beta = vec![0.0; p.z.ncols()];
    solvers::elastic_net(&p.z, &p.yc, alpha, lambda, &mut beta)?;
    Ok(p.finish(&beta, Hyperparameters::ElasticNet { alpha, lambda }))
}

/// Elastic-net fits along `lambdas` (any order), each warm-started from the
/// previous larger-λ solution. Entries align with `lambdas`.
pub fn elastic_net_path(x: &DMatrix<f64>, y: &[f64], alpha: f64, lambdas: &[f64]) -> Result<Vec<Result<LinearModel>>> {
    for &l in lambdas {
        solvers::check_enet_params(alpha, l)?;
    }
    let mut order: Vec<usize> = (0..lambdas.len()).collect();
    order.sort_by(|&a, &b| lambdas[b].total_cmp(&lambdas[a]));
    let mut out: Vec<Option<Result<LinearModel>>> = (0..lambdas.len()).map(|_| None).collect();
    let base = prepare(x, y)?;
    let mut beta = vec![0.0; base.z.ncols()];
    for i in order {
        let lambda = lambdas[i];
        let start = beta.clone();
        let fit = solvers::elastic_net(&base.z, &base.yc, alpha, lambda, &mut beta);
        out[i] = Some(match fit {
            Ok(_) => Ok(assemble(
                base.standardizer.clone(),
                &base.active,
                base.y_mean,
                &beta,
                Hyperparameters::ElasticNet { alpha, lambda },
            )),
            Err(e) => {
                beta = start;
                Err(e)
            }
        });
    }
    Ok(out.into_iter().map(|r| r.expect("every index visited")).collect())
}

/// Largest KKT violation of an elastic-net model on its training data.
pub fn kkt_residual(x: &DMatrix<f64>, y: &[f64], model: &LinearModel) -> Result<f64> {
    let Hyperparameters::ElasticNet { alpha, lambda } = model.hyperparameters else {
        return Err(Error::InvalidInput("KKT check applies to elastic-net models".into()));
    };
    let p = prepare(x, y)?;
    let beta: Vec<f64> = p.active.iter().map(|&j| model.coefficients[j]).collect();
    Ok(solvers::kkt_violation(&p.z, &p.yc, &beta, alpha, lambda))
}

/// Regression on the leading `n_components` principal components.
pub fn fit_pcr(x: &DMatrix<f64>, y: &[f64], n_components: usize) -> Result<LinearModel> {
    let p = prepare(x, y)?;
    let beta = solvers::pcr(&p.z, &p.yc, n_components)?;
    Ok(p.finish(&beta, Hyperparameters::Pcr { n_components }))
}

/// PLS1 by NIPALS with `n_components` latent variables.
pub fn fit_plsr(x: &DMatrix<f64>, y: &[f64], n_components: usize) -> Result<LinearModel> {
    let p = prepare(x, y)?;
    let beta = solvers::plsr(&p.z, &p.yc, n_components)?;
    Ok(p.finish(&beta, Hyperparameters::Plsr { n_components }))
}

/// Fits a single hyperparameter point.
pub fn fit_with(x: &DMatrix<f64>, y: &[f64], h: Hyperparameters) -> Result<LinearModel> {
    match h {
        Hyperparameters::Ols => fit_ols(x, y),
        Hyperparameters::Ridge { lambda } => fit_ridge(x, y, lambda),
        Hyperparameters::ElasticNet { alpha, lambda } => fit_elastic_net(x, y, alpha, lambda),
        Hyperparameters::Pcr { n_components } => fit_pcr(x, y, n_components),
        Hyperparameters::Plsr { n_components } => fit_plsr(x, y, n_components),
    }
}

/// Cosine similarity of two coefficient vectors.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}
