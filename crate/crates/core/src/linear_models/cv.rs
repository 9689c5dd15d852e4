//! Seeded k-fold cross-validation over a hyperparameter grid, scored by RMSE
//! in cycles.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{elastic_net_path, fit_with, prepare, solvers, Hyperparameters, LinearModel};
use crate::dataset::Split;
use crate::error::{Error, Result};
use crate::eval::{rmse_cycles, TargetSpace};

pub const DEFAULT_FOLDS: usize = 5;
pub const DEFAULT_ALPHAS: [f64; 5] = [0.01, 0.1, 0.5, 0.9, 1.0];
pub const DEFAULT_MAX_COMPONENTS: usize = 30;
/// Scores within this relative distance of the best count as ties.
const TIE_TOLERANCE: f64 = 1e-12;

/// `n` points evenly spaced in log10 between `lo` and `hi`, inclusive.
pub fn log_spaced(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.log10(), hi.log10());
    (0..n).map(|i| 10f64.powf(a + (b - a) * i as f64 / (n - 1) as f64)).collect()
}

pub fn default_lambdas() -> Vec<f64> {
    log_spaced(1e-5, 1e2, 30)
}

/// Model family with its hyperparameter grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum ModelSpec {
    Ols,
    Ridge {
        #[serde(default = "default_lambdas")]
        lambdas: Vec<f64>,
    },
    ElasticNet {
        #[serde(default = "default_alphas")]
        alphas: Vec<f64>,
        #[serde(default = "default_lambdas")]
        lambdas: Vec<f64>,
    },
    /// Components `1..=min(max_components, n_features, smallest fold-train size − 1)`.
    Pcr {
        #[serde(default = "default_max_components")]
        max_components: usize,
    },
    Plsr {
        #[serde(default = "default_max_components")]
        max_components: usize,
    },
}

fn default_alphas() -> Vec<f64> {
    DEFAULT_ALPHAS.to_vec()
}

fn default_max_components() -> usize {
    DEFAULT_MAX_COMPONENTS
}

impl ModelSpec {
    pub fn ridge() -> Self {
        ModelSpec::Ridge {
            lambdas: default_lambdas(),
        }
    }

    pub fn elastic_net() -> Self {
        ModelSpec::ElasticNet {
            alphas: default_alphas(),
            lambdas: default_lambdas(),
        }
    }

    pub fn pcr() -> Self {
        ModelSpec::Pcr {
            max_components: DEFAULT_MAX_COMPONENTS,
        }
    }

    pub fn plsr() -> Self {
        ModelSpec::Plsr {
            max_components: DEFAULT_MAX_COMPONENTS,
        }
    }

    /// Grid points ordered from most to least preferred on ties: larger λ,
    /// then larger α, then fewer components.
    fn candidates(&self, n_features: usize, min_fold_train: usize) -> Result<Vec<Hyperparameters>> {
        let desc = |v: &[f64]| {
            let mut v = v.to_vec();
            v.sort_by(|a, b| b.total_cmp(a));
            v.dedup();
            v
        };
        let out = match self {
            ModelSpec::Ols => vec![Hyperparameters::Ols],
            ModelSpec::Ridge { lambdas } => desc(lambdas)
                .into_iter()
                .map(|lambda| Hyperparameters::Ridge { lambda })
                .collect(),
            ModelSpec::ElasticNet { alphas, lambdas } => {
                let alphas = desc(alphas);
                desc(lambdas)
                    .into_iter()
                    .flat_map(|lambda| alphas.iter().map(move |&alpha| Hyperparameters::ElasticNet { alpha, lambda }))
                    .collect()
            }
            ModelSpec::Pcr { max_components } | ModelSpec::Plsr { max_components } => {
                let cap = (*max_components).min(n_features).min(min_fold_train.saturating_sub(1));
                (1..=cap)
                    .map(|n_components| match self {
                        ModelSpec::Pcr { .. } => Hyperparameters::Pcr { n_components },
                        _ => Hyperparameters::Plsr { n_components },
                    })
                    .collect()
            }
        };
        if out.is_empty() {
            return Err(Error::InvalidInput(format!("empty hyperparameter grid for {self:?}")));
        }
        Ok(out)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvConfig {
    pub n_folds: usize,
    pub seed: u64,
}

impl Default for CvConfig {
    fn default() -> Self {
        Self {
            n_folds: DEFAULT_FOLDS,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridScore {
    pub hyperparameters: Hyperparameters,
    /// Mean validation RMSE over folds (cycles); infinite if any fold failed.
    pub cv_rmse: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitResult {
    pub model: LinearModel,
    pub chosen: Hyperparameters,
    pub cv_rmse: f64,
    pub grid: Vec<GridScore>,
    /// Filled by the caller once held-out splits are scored.
    pub per_split_rmse: BTreeMap<Split, f64>,
}

/// Validation rows of each fold after a seeded shuffle; fold sizes differ by at most one.
pub fn fold_assignment(n: usize, n_folds: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if n_folds < 2 {
        return Err(Error::InvalidInput("cross-validation needs at least 2 folds".into()));
    }
    if n / n_folds < 2 {
        return Err(Error::InvalidInput(format!(
            "{n} rows cannot form {n_folds} folds of at least 2 rows"
        )));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let base = n / n_folds;
    let extra = n % n_folds;
    let mut folds = Vec::with_capacity(n_folds);
    let mut start = 0;
    for f in 0..n_folds {
        let size = base + usize::from(f < extra);
        let mut fold = perm[start..start + size].to_vec();
        fold.sort_unstable();
        folds.push(fold);
        start += size;
    }
    Ok(folds)
}

/// Validation predictions along a descending λ path with warm starts.
fn enet_path_predictions(
    x_train: &DMatrix<f64>,
    y_train: &[f64],
    x_val: &DMatrix<f64>,
    alpha: f64,
    lambdas_desc: &[f64],
) -> Result<Vec<Option<Vec<f64>>>> {
    let prep = prepare(x_train, y_train)?;
    let z_val = prep.standardizer.transform(x_val)?.select_columns(&prep.active);
    let mut beta = vec![0.0; prep.z.ncols()];
    let mut out = Vec::with_capacity(lambdas_desc.len());
    for &lambda in lambdas_desc {
        let start = beta.clone();
        match solvers::elastic_net(&prep.z, &prep.yc, alpha, lambda, &mut beta) {
            Ok(_) => {
                let pred = &z_val * DVector::from_column_slice(&beta);
                out.push(Some(pred.iter().map(|v| v + prep.y_mean).collect()));
            }
            Err(e) => {
                log::debug!("elastic net alpha={alpha} lambda={lambda}: {e}");
                beta = start;
                out.push(None);
            }
        }
    }
    Ok(out)
}

/// Validation predictions for every candidate on one fold (`None` where fitting failed).
fn fold_predictions(
    x_train: &DMatrix<f64>,
    y_train: &[f64],
    x_val: &DMatrix<f64>,
    candidates: &[Hyperparameters],
) -> Vec<Option<Vec<f64>>> {
    let mut out: Vec<Option<Vec<f64>>> = vec![None; candidates.len()];
    let enet: Vec<usize> = (0..candidates.len())
        .filter(|&i| matches!(candidates[i], Hyperparameters::ElasticNet { .. }))
        .collect();
    if !enet.is_empty() {
        // group by alpha, walk λ from large to small
        let mut alphas: Vec<f64> = enet
            .iter()
            .map(|&i| match candidates[i] {
                Hyperparameters::ElasticNet { alpha, .. } => alpha,
                _ => unreachable!(),
            })
            .collect();
        alphas.sort_by(f64::total_cmp);
        alphas.dedup();
        for alpha in alphas {
            let mut members: Vec<(usize, f64)> = enet
                .iter()
                .filter_map(|&i| match candidates[i] {
                    Hyperparameters::ElasticNet { alpha: a, lambda } if a == alpha => Some((i, lambda)),
                    _ => None,
                })
                .collect();
            members.sort_by(|a, b| b.1.total_cmp(&a.1));
            let lambdas: Vec<f64> = members.iter().map(|m| m.1).collect();
            match enet_path_predictions(x_train, y_train, x_val, alpha, &lambdas) {
                Ok(preds) => {
                    for ((i, _), p) in members.iter().zip(preds) {
                        out[*i] = p;
                    }
                }
                Err(e) => log::debug!("elastic net path failed: {e}"),
            }
        }
    }
    for (i, h) in candidates.iter().enumerate() {
        if matches!(h, Hyperparameters::ElasticNet { .. }) {
            continue;
        }
        out[i] = match fit_with(x_train, y_train, *h).and_then(|m| m.predict(x_val)) {
            Ok(p) => Some(p),
            Err(e) => {
                log::debug!("{h:?}: {e}");
                None
            }
        };
    }
    out
}

/// Full-data fit at `h`. Elastic net walks the same descending λ path as the
/// folds so the refit starts from the same warm solutions.
fn refit_all(x: &DMatrix<f64>, y: &[f64], h: Hyperparameters, candidates: &[Hyperparameters]) -> Result<LinearModel> {
    let Hyperparameters::ElasticNet { alpha, lambda } = h else {
        return fit_with(x, y, h);
    };
    let mut path: Vec<f64> = candidates
        .iter()
        .filter_map(|c| match *c {
            Hyperparameters::ElasticNet { alpha: a, lambda: l } if a == alpha && l >= lambda => Some(l),
            _ => None,
        })
        .collect();
    path.sort_by(|a, b| b.total_cmp(a));
    elastic_net_path(x, y, alpha, &path)?
        .pop()
        .expect("path contains the chosen lambda")
}

/// Chooses hyperparameters by k-fold CV and refits on all rows.
///
/// `y_cycles` are cycle lives; the model fits them in `space` and every
/// validation fold is scored in cycles.
pub fn cross_validate(
    x: &DMatrix<f64>,
    y_cycles: &[f64],
    space: TargetSpace,
    spec: &ModelSpec,
    cv: &CvConfig,
    feature_names: &[String],
) -> Result<FitResult> {
    let n = x.nrows();
    if y_cycles.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: y_cycles.len(),
        });
    }
    if feature_names.len() != x.ncols() {
        return Err(Error::DimensionMismatch {
            expected: x.ncols(),
            got: feature_names.len(),
        });
    }
    if let Some(y) = y_cycles.iter().find(|y| !(**y > 0.0)) {
        return Err(Error::InvalidInput(format!("cycle life must be positive, got {y}")));
    }
    let y = space.encode(y_cycles);
    let folds = fold_assignment(n, cv.n_folds, cv.seed)?;
    let min_train = folds.iter().map(|f| n - f.len()).min().unwrap_or(0);
    let candidates = spec.candidates(x.ncols(), min_train)?;

    let per_fold: Vec<Vec<f64>> = folds
        .par_iter()
        .map(|val| {
            let train: Vec<usize> = (0..n).filter(|i| val.binary_search(i).is_err()).collect();
            let x_tr = x.select_rows(&train);
            let y_tr: Vec<f64> = train.iter().map(|&i| y[i]).collect();
            let x_val = x.select_rows(val);
            let y_val: Vec<f64> = val.iter().map(|&i| y_cycles[i]).collect();
            fold_predictions(&x_tr, &y_tr, &x_val, &candidates)
                .into_iter()
                .map(|p| {
                    p.and_then(|p| rmse_cycles(&p, &y_val, space).ok())
                        .filter(|r| r.is_finite())
                        .unwrap_or(f64::INFINITY)
                })
                .collect()
        })
        .collect();

    let grid: Vec<GridScore> = candidates
        .iter()
        .enumerate()
        .map(|(c, h)| GridScore {
            hyperparameters: *h,
            cv_rmse: per_fold.iter().map(|f| f[c]).sum::<f64>() / per_fold.len() as f64,
        })
        .collect();
    let best = grid.iter().map(|g| g.cv_rmse).fold(f64::INFINITY, f64::min);
    if !best.is_finite() {
        return Err(Error::InvalidInput(format!("every grid point failed for {spec:?}")));
    }
    // Preferred point first (grid order breaks near-ties), then the rest by score.
    let first = grid
        .iter()
        .position(|g| g.cv_rmse <= best * (1.0 + TIE_TOLERANCE))
        .expect("best exists");
    let mut ranked: Vec<&GridScore> = grid
        .iter()
        .enumerate()
        .filter(|(i, g)| *i != first && g.cv_rmse.is_finite())
        .map(|(_, g)| g)
        .collect();
    ranked.sort_by(|a, b| a.cv_rmse.total_cmp(&b.cv_rmse));
    ranked.insert(0, &grid[first]);
    let mut refit = None;
    let mut last_err = None;
    for g in ranked {
        match refit_all(x, &y, g.hyperparameters, &candidates) {
            Ok(m) => {
                refit = Some((g.hyperparameters, g.cv_rmse, m));
                break;
            }
            Err(e) => {
                log::warn!("refit at {:?} failed ({e}); trying the next grid point", g.hyperparameters);
                last_err = Some(e);
            }
        }
    }
    let Some((chosen, cv_rmse, model)) = refit else {
        return Err(last_err.unwrap_or_else(|| Error::InvalidInput("no grid point could be refitted".into())));
    };
    let model = model
        .with_target_space(space)
        .with_feature_names(feature_names.to_vec())?;
    Ok(FitResult {
        model,
        chosen,
        cv_rmse,
        grid,
        per_split_rmse: BTreeMap::new(),
    })
}
