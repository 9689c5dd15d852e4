//! Error metrics in cycles and split-aware reports.
//!
//! Models fit `log10(cycle life)` by default, but every reported error is in
//! cycles: predictions are back-transformed with `10^ŷ` before scoring.

use std::collections::BTreeMap;
use std::fs::File;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dataset::Split;
use crate::error::{Error, Result};
use crate::features::FeatureTable;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetSpace {
    #[default]
    Log10Cycles,
    Cycles,
}

impl TargetSpace {
    pub fn as_str(self) -> &'static str {
        match self {
            TargetSpace::Log10Cycles => "log10_cycles",
            TargetSpace::Cycles => "cycles",
        }
    }

    /// Cycle lives expressed in this space.
    pub fn encode(self, cycles: &[f64]) -> Vec<f64> {
        match self {
            TargetSpace::Log10Cycles => cycles.iter().map(|c| c.log10()).collect(),
            TargetSpace::Cycles => cycles.to_vec(),
        }
    }

    /// Predictions in this space as cycles.
    pub fn to_cycles(self, predictions: &[f64]) -> Vec<f64> {
        match self {
            TargetSpace::Log10Cycles => predictions.iter().map(|p| 10f64.powf(*p)).collect(),
            TargetSpace::Cycles => predictions.to_vec(),
        }
    }
}

/// Anything that maps feature rows to predictions in its target space.
pub trait Predictor {
    fn predict(&self, x: &DMatrix<f64>) -> Result<Vec<f64>>;
    fn target_space(&self) -> TargetSpace;
}

fn check_pair(predictions: &[f64], actual: &[f64]) -> Result<()> {
    if predictions.len() != actual.len() {
        return Err(Error::DimensionMismatch {
            expected: actual.len(),
            got: predictions.len(),
        });
    }
    if actual.is_empty() {
        return Err(Error::InvalidInput("no observations to score".into()));
    }
    if let Some(a) = actual.iter().find(|a| !(**a > 0.0)) {
        return Err(Error::InvalidInput(format!("cycle life must be positive, got {a}")));
    }
    Ok(())
}

/// Root-mean-squared error in cycles.
pub fn rmse_cycles(predictions: &[f64], actual_cycles: &[f64], space: TargetSpace) -> Result<f64> {
    check_pair(predictions, actual_cycles)?;
    let pred = space.to_cycles(predictions);
    let sse: f64 = pred.iter().zip(actual_cycles).map(|(p, a)| (p - a) * (p - a)).sum();
    Ok((sse / actual_cycles.len() as f64).sqrt())
}

/// Mean absolute percentage error in percent.
pub fn mape(predictions: &[f64], actual_cycles: &[f64], space: TargetSpace) -> Result<f64> {
    check_pair(predictions, actual_cycles)?;
    let pred = space.to_cycles(predictions);
    let s: f64 = pred.iter().zip(actual_cycles).map(|(p, a)| ((p - a) / a).abs()).sum();
    Ok(100.0 * s / actual_cycles.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitMetrics {
    pub rmse_cycles: f64,
    pub mape_pct: f64,
    pub n_cells: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model_name: String,
    pub target_space: TargetSpace,
    pub per_split: BTreeMap<Split, SplitMetrics>,
    pub excluded_cells: Vec<String>,
}

impl EvalReport {
    pub fn rmse(&self, split: Split) -> Option<f64> {
        self.per_split.get(&split).map(|m| m.rmse_cycles)
    }
}

/// Scores `model` on every split present in `table`, skipping outlier cells.
pub fn evaluate(model_name: &str, model: &dyn Predictor, table: &FeatureTable) -> Result<EvalReport> {
    let excluded_cells: Vec<String> = (0..table.n_cells())
        .filter(|&i| table.outliers[i])
        .map(|i| table.cell_ids[i].clone())
        .collect();
    let mut per_split = BTreeMap::new();
    for split in Split::ALL {
        let idx: Vec<usize> = (0..table.n_cells())
            .filter(|&i| table.splits[i] == split && !table.outliers[i])
            .collect();
        if idx.is_empty() {
            continue;
        }
        let sub = table.rows(&idx);
        let pred = model.predict(&sub.values)?;
        let actual = sub.cycle_lives();
        per_split.insert(
            split,
            SplitMetrics {
                rmse_cycles: rmse_cycles(&pred, &actual, model.target_space())?,
                mape_pct: mape(&pred, &actual, model.target_space())?,
                n_cells: idx.len(),
            },
        );
    }
    Ok(EvalReport {
        model_name: model_name.to_string(),
        target_space: model.target_space(),
        per_split,
        excluded_cells,
    })
}

pub fn write_reports_json(path: &Path, reports: &[EvalReport]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    serde_json::to_writer_pretty(file, reports)?;
    Ok(())
}

/// One row per model × split: `model,split,rmse_cycles,mape_pct,n_cells,target_space`.
pub fn write_reports_csv(path: &Path, reports: &[EvalReport]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    let err = |e| Error::csv(path, e);
    w.write_record(["model", "split", "rmse_cycles", "mape_pct", "n_cells", "target_space"])
        .map_err(err)?;
    for r in reports {
        for (split, m) in &r.per_split {
            w.write_record([
                r.model_name.clone(),
                split.to_string(),
                m.rmse_cycles.to_string(),
                m.mape_pct.to_string(),
                m.n_cells.to_string(),
                r.target_space.as_str().to_string(),
            ])
            .map_err(err)?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn metric_examples() {
        let logp: Vec<f64> = [500.0f64, 1000.0].iter().map(|c| c.log10()).collect();
        assert!(rmse_cycles(&logp, &[500.0, 1000.0], TargetSpace::Log10Cycles).unwrap() < 1e-9);
        assert_eq!(rmse_cycles(&[100.0], &[110.0], TargetSpace::Cycles).unwrap(), 10.0);
        assert_eq!(mape(&[90.0], &[100.0], TargetSpace::Cycles).unwrap(), 10.0);
        assert!((mape(&[110.0], &[100.0], TargetSpace::Cycles).unwrap() - 10.0).abs() < 1e-12);
        assert_eq!(mape(&[7.0, 3.0], &[7.0, 3.0], TargetSpace::Cycles).unwrap(), 0.0);
        assert!(rmse_cycles(&[1.0], &[1.0, 2.0], TargetSpace::Cycles).is_err());
        assert!(rmse_cycles(&[1.0], &[0.0], TargetSpace::Cycles).is_err());
    }

    struct Echo;

    impl Predictor for Echo {
        fn predict(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
            Ok(x.column(0).iter().copied().collect())
        }
        fn target_space(&self) -> TargetSpace {
            TargetSpace::Cycles
        }
    }

    fn table(splits: Vec<Split>, outliers: Vec<bool>, preds: Vec<f64>, lives: Vec<u32>) -> FeatureTable {
        let n = splits.len();
        FeatureTable::new(
            (0..n).map(|i| format!("c{i}")).collect(),
            splits,
            vec!["x".into()],
            DMatrix::from_column_slice(n, 1, &preds),
            lives.into_iter().map(|l| crate::dataset::LifetimeLabel::new(l).unwrap()).collect(),
        )
        .unwrap()
        .with_outliers(outliers)
        .unwrap()
    }

    #[test]
    fn evaluate_excludes_outliers_and_omits_empty_splits() {
        let t = table(
            vec![Split::Train, Split::Train, Split::PrimaryTest, Split::PrimaryTest],
            vec![false, false, false, true],
            vec![100.0, 200.0, 300.0, 5000.0],
            vec![110, 190, 300, 148],
        );
        let r = evaluate("echo", &Echo, &t).unwrap();
        assert_eq!(r.excluded_cells, vec!["c3".to_string()]);
        assert_eq!(r.per_split[&Split::PrimaryTest].n_cells, 1);
        assert_eq!(r.per_split[&Split::PrimaryTest].rmse_cycles, 0.0);
        assert_eq!(r.per_split[&Split::Train].rmse_cycles, 10.0);
        assert!(!r.per_split.contains_key(&Split::SecondaryTest));

        let dir = tempfile::tempdir().unwrap();
        write_reports_csv(&dir.path().join("r.csv"), &[r.clone()]).unwrap();
        write_reports_json(&dir.path().join("r.json"), &[r]).unwrap();
        let text = std::fs::read_to_string(dir.path().join("r.csv")).unwrap();
        assert_eq!(text.lines().count(), 3);
    }

    proptest! {
        #[test]
        fn rmse_matches_extended_precision_oracle(
            pairs in proptest::collection::vec((1.0f64..3000.0, 1.0f64..3000.0), 1..200),
        ) {
            let (pred, actual): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
            let got = rmse_cycles(&pred, &actual, TargetSpace::Cycles).unwrap();
            // two-pass oracle with compensated (Neumaier) summation
            let (mut s, mut c) = (0.0f64, 0.0f64);
            for (p, a) in &pairs {
                let d = p - a;
                let term = d * d;
                let t = s + term;
                c += if s.abs() >= term.abs() { (s - t) + term } else { (term - t) + s };
                s = t;
            }
            let oracle = ((s + c) / pairs.len() as f64).sqrt();
            prop_assert!((got - oracle).abs() <= 1e-10 * oracle.max(1e-300));
            let mut rev_p = pred.clone();
            let mut rev_a = actual.clone();
            rev_p.reverse();
            rev_a.reverse();
            prop_assert!((rmse_cycles(&rev_p, &rev_a, TargetSpace::Cycles).unwrap() - got).abs() <= 1e-12 * got.max(1.0));
            prop_assert!(got >= 0.0);
        }
    }
}
