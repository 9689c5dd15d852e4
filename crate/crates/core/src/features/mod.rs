//! Scalar and vector features of ΔQ(V): summary statistics, transforms,
//! percentile ranges and single-voltage elements; per-cell feature tables.

pub mod stats;

use std::fs::File;
use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::capmatrix::{delta_q_for_cell, downsample, nearest_index, CycleWindow, DeltaQVector, ResampleMethod, VoltageGrid};
use crate::dataset::{cycle_life_label, CellRecord, LifetimeLabel, Split};
use crate::error::{Error, Result};

/// Voltage of the single-element statistic in the standard roster.
pub const REFERENCE_ELEMENT_V: f64 = 2.959;
/// Report grids hide entries whose error exceeds this multiple of the grid median.
pub const SUPPRESSION_FACTOR: f64 = 3.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Statistic {
    Minimum,
    Maximum,
    Mean,
    Median,
    Range,
    Variance,
    StdDev,
    Skewness,
    Kurtosis,
    Iqr,
    Idr,
    Mad,
    Sum,
    /// ΔQ at the grid voltage nearest `voltage_v`.
    ValueAt { voltage_v: f64 },
    /// `percentile(upper) − percentile(lower)`, or the percentile itself when equal.
    PercentileRange { lower_pct: f64, upper_pct: f64 },
}

impl Statistic {
    /// The fourteen statistics of the univariate grid, in report order.
    pub fn roster() -> [Statistic; 14] {
        use Statistic::*;
        [
            Minimum,
            Maximum,
            Mean,
            Median,
            Range,
            Variance,
            StdDev,
            Skewness,
            Kurtosis,
            Iqr,
            Idr,
            Mad,
            Sum,
            ValueAt {
                voltage_v: REFERENCE_ELEMENT_V,
            },
        ]
    }

    /// True when the statistic may take either sign, so sqrt/log10 need |x|.
    pub fn can_be_negative(&self) -> bool {
        use Statistic::*;
        match self {
            Minimum | Maximum | Mean | Median | Skewness | Kurtosis | Sum | ValueAt { .. } => true,
            Range | Variance | StdDev | Iqr | Idr | Mad => false,
            PercentileRange { lower_pct, upper_pct } => lower_pct == upper_pct,
        }
    }

    pub fn name(&self) -> String {
        use Statistic::*;
        match self {
            Minimum => "min".into(),
            Maximum => "max".into(),
            Mean => "mean".into(),
            Median => "median".into(),
            Range => "range".into(),
            Variance => "var".into(),
            StdDev => "std".into(),
            Skewness => "skew".into(),
            Kurtosis => "kurt".into(),
            Iqr => "iqr".into(),
            Idr => "idr".into(),
            Mad => "mad".into(),
            Sum => "sum".into(),
            ValueAt { voltage_v } => format!("v{voltage_v}"),
            PercentileRange { lower_pct, upper_pct } => format!("pct{lower_pct}-{upper_pct}"),
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            Statistic::PercentileRange { lower_pct, upper_pct } => {
                if !(0.0..=100.0).contains(&lower_pct) || !(0.0..=100.0).contains(&upper_pct) || lower_pct > upper_pct {
                    return Err(Error::InvalidInput(format!(
                        "percentile bounds must satisfy 0 <= lower <= upper <= 100, got ({lower_pct}, {upper_pct})"
                    )));
                }
            }
            Statistic::ValueAt { voltage_v } if !voltage_v.is_finite() => {
                return Err(Error::InvalidInput("element voltage must be finite".into()));
            }
            _ => {}
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transform {
    #[default]
    Identity,
    Sqrt,
    Cbrt,
    Log10,
}

impl Transform {
    pub const ALL: [Transform; 4] = [Transform::Identity, Transform::Sqrt, Transform::Cbrt, Transform::Log10];

    pub fn as_str(self) -> &'static str {
        match self {
            Transform::Identity => "identity",
            Transform::Sqrt => "sqrt",
            Transform::Cbrt => "cbrt",
            Transform::Log10 => "log10",
        }
    }

    fn needs_positive(self) -> bool {
        matches!(self, Transform::Sqrt | Transform::Log10)
    }
}

pub fn apply_transform(x: f64, transform: Transform, abs_before_transform: bool) -> Result<f64> {
    if !x.is_finite() {
        return Err(Error::NonFinite("transform input".into()));
    }
    let x = if abs_before_transform { x.abs() } else { x };
    match transform {
        Transform::Identity => Ok(x),
        Transform::Cbrt => Ok(x.cbrt()),
        Transform::Sqrt if x < 0.0 => Err(Error::Transform(format!("sqrt of negative value {x}"))),
        Transform::Sqrt => Ok(x.sqrt()),
        Transform::Log10 if x <= 0.0 => Err(Error::Transform(format!("log10 of non-positive value {x}"))),
        Transform::Log10 => Ok(x.log10()),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub statistic: Statistic,
    pub transform: Transform,
    pub abs_before_transform: bool,
}

impl FeatureSpec {
    /// Spec with |x| applied exactly when the statistic can be negative and the
    /// transform needs a positive argument.
    pub fn new(statistic: Statistic, transform: Transform) -> Result<Self> {
        statistic.validate()?;
        Ok(Self {
            statistic,
            transform,
            abs_before_transform: statistic.can_be_negative() && transform.needs_positive(),
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.statistic.validate()?;
        if self.statistic.can_be_negative() && self.transform.needs_positive() && !self.abs_before_transform {
            return Err(Error::InvalidInput(format!(
                "{} of {} requires the absolute value",
                self.transform.as_str(),
                self.statistic.name()
            )));
        }
        Ok(())
    }

    /// All 14 × 4 pairings of the univariate grid.
    pub fn univariate_grid() -> Vec<FeatureSpec> {
        Statistic::roster()
            .iter()
            .flat_map(|&s| Transform::ALL.iter().map(move |&t| FeatureSpec::new(s, t).expect("roster is valid")))
            .collect()
    }

    /// Column name, e.g. `var`, `log10_abs_min`, `cbrt_pct31-62`.
    pub fn name(&self) -> String {
        let stat = self.statistic.name();
        let abs = if self.abs_before_transform { "abs_" } else { "" };
        match self.transform {
            Transform::Identity => format!("{abs}{stat}"),
            t => format!("{}_{abs}{stat}", t.as_str()),
        }
    }

    /// Report label with the asterisk marking statistics that needed |x|.
    pub fn display_label(&self) -> String {
        let star = if self.abs_before_transform { "*" } else { "" };
        format!("{}{star}", self.statistic.name())
    }

    pub fn compute(&self, v: &DeltaQVector) -> Result<f64> {
        self.validate()?;
        let raw = summary_statistic(v, &self.statistic)?;
        apply_transform(raw, self.transform, self.abs_before_transform)
    }
}

pub fn summary_statistic(v: &DeltaQVector, statistic: &Statistic) -> Result<f64> {
    let x = &v.values;
    if x.is_empty() {
        return Err(Error::InvalidInput("empty ΔQ vector".into()));
    }
    use Statistic::*;
    let sorted = || stats::sorted_copy(x);
    match *statistic {
        Minimum => Ok(x.iter().copied().fold(f64::INFINITY, f64::min)),
        Maximum => Ok(x.iter().copied().fold(f64::NEG_INFINITY, f64::max)),
        Mean => stats::mean(x),
        Median => stats::percentile_sorted(&sorted(), 50.0),
        Range => {
            let s = sorted();
            Ok(s[s.len() - 1] - s[0])
        }
        Variance => stats::variance(x),
        StdDev => stats::std_dev(x),
        Skewness => stats::skewness(x),
        Kurtosis => stats::excess_kurtosis(x),
        Iqr => percentile_range_sorted(&sorted(), 25.0, 75.0),
        Idr => percentile_range_sorted(&sorted(), 10.0, 90.0),
        Mad => stats::median_abs_deviation(x),
        Sum => Ok(x.iter().sum()),
        ValueAt { voltage_v } => single_element(v, voltage_v).map(|(value, _)| value),
        PercentileRange { lower_pct, upper_pct } => percentile_range_feature(v, lower_pct, upper_pct),
    }
}

/// Percentile difference on an ascending slice; the percentile itself when
/// the bounds coincide.
pub fn percentile_range_sorted(sorted: &[f64], lower_pct: f64, upper_pct: f64) -> Result<f64> {
    Statistic::PercentileRange { lower_pct, upper_pct }.validate()?;
    if lower_pct == upper_pct {
        return stats::percentile_sorted(sorted, lower_pct);
    }
    Ok(stats::percentile_sorted(sorted, upper_pct)? - stats::percentile_sorted(sorted, lower_pct)?)
}

pub fn percentile_range_feature(v: &DeltaQVector, lower_pct: f64, upper_pct: f64) -> Result<f64> {
    percentile_range_sorted(&stats::sorted_copy(&v.values), lower_pct, upper_pct)
}

/// Value at the sampled voltage nearest `voltage_v` (lower index on ties),
/// with the voltage it snapped to.
pub fn single_element(v: &DeltaQVector, voltage_v: f64) -> Result<(f64, f64)> {
    if !(voltage_v >= v.grid.v_min() && voltage_v <= v.grid.v_max()) {
        return Err(Error::InvalidInput(format!(
            "voltage {voltage_v} outside grid [{}, {}]",
            v.grid.v_min(),
            v.grid.v_max()
        )));
    }
    let i = nearest_index(&v.voltages, voltage_v);
    Ok((v.values[i], v.voltages[i]))
}

/// How ΔQ vectors are built for every cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DqConfig {
    pub grid: VoltageGrid,
    pub hi: CycleWindow,
    pub lo: CycleWindow,
    #[serde(default)]
    pub method: ResampleMethod,
    /// Point count after downsampling; `None` keeps the full grid.
    #[serde(default)]
    pub downsample: Option<usize>,
}

impl Default for DqConfig {
    fn default() -> Self {
        Self {
            grid: VoltageGrid::default(),
            hi: CycleWindow::single(100),
            lo: CycleWindow::single(10),
            method: ResampleMethod::Linear,
            downsample: None,
        }
    }
}

/// A cell's ΔQ vector with its label.
#[derive(Clone, Debug)]
pub struct CellDeltaQ {
    pub cell_id: String,
    pub split: Split,
    pub label: LifetimeLabel,
    pub is_outlier: bool,
    pub dq: DeltaQVector,
}

/// ΔQ vectors for all cells, ordered by cell id.
pub fn compute_cell_dqs(cells: &[CellRecord], cfg: &DqConfig) -> Result<Vec<CellDeltaQ>> {
    let mut out: Vec<CellDeltaQ> = cells
        .par_iter()
        .map(|cell| {
            let run = || -> Result<CellDeltaQ> {
                let label = cycle_life_label(cell)?;
                let mut dq = delta_q_for_cell(cell, &cfg.grid, &cfg.hi, &cfg.lo, cfg.method)?;
                if let Some(n) = cfg.downsample {
                    dq = downsample(&dq, n)?;
                }
                Ok(CellDeltaQ {
                    cell_id: cell.cell_id.clone(),
                    split: cell.split,
                    label,
                    is_outlier: cell.is_outlier,
                    dq,
                })
            };
            run().map_err(|e| e.in_cell(&cell.cell_id))
        })
        .collect::<Result<_>>()?;
    out.sort_by(|a, b| a.cell_id.cmp(&b.cell_id));
    Ok(out)
}

/// Cells × features with labels.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureTable {
    pub cell_ids: Vec<String>,
    pub splits: Vec<Split>,
    pub feature_names: Vec<String>,
    pub values: DMatrix<f64>,
    pub labels: Vec<LifetimeLabel>,
    /// Cells excluded from scoring.
    pub outliers: Vec<bool>,
}

impl FeatureTable {
    pub fn new(
        cell_ids: Vec<String>,
        splits: Vec<Split>,
        feature_names: Vec<String>,
        values: DMatrix<f64>,
        labels: Vec<LifetimeLabel>,
    ) -> Result<Self> {
        let n = cell_ids.len();
        if splits.len() != n || labels.len() != n || values.nrows() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: values.nrows().min(splits.len()).min(labels.len()),
            });
        }
        if values.ncols() != feature_names.len() {
            return Err(Error::DimensionMismatch {
                expected: feature_names.len(),
                got: values.ncols(),
            });
        }
        if let Some(i) = values.iter().position(|x| !x.is_finite()) {
            let (r, c) = (i % n.max(1), i / n.max(1));
            return Err(Error::NonFinite(format!("feature {} of cell {}", feature_names[c], cell_ids[r])));
        }
        Ok(Self {
            outliers: vec![false; n],
            cell_ids,
            splits,
            feature_names,
            values,
            labels,
        })
    }

    pub fn with_outliers(mut self, outliers: Vec<bool>) -> Result<Self> {
        if outliers.len() != self.n_cells() {
            return Err(Error::DimensionMismatch {
                expected: self.n_cells(),
                got: outliers.len(),
            });
        }
        self.outliers = outliers;
        Ok(self)
    }

    /// One column per spec.
    pub fn from_specs(cells: &[CellDeltaQ], specs: &[FeatureSpec]) -> Result<Self> {
        let names = specs.iter().map(FeatureSpec::name).collect();
        let rows: Vec<Vec<f64>> = cells
            .iter()
            .map(|c| {
                specs
                    .iter()
                    .map(|s| s.compute(&c.dq))
                    .collect::<Result<Vec<f64>>>()
                    .map_err(|e| e.in_cell(&c.cell_id))
            })
            .collect::<Result<_>>()?;
        Self::from_rows(cells, names, &rows)
    }

    /// Every ΔQ element as its own feature, named by voltage.
    pub fn elements(cells: &[CellDeltaQ]) -> Result<Self> {
        let first = cells.first().ok_or_else(|| Error::InvalidInput("no cells".into()))?;
        let names = first.dq.voltages.iter().map(|v| format!("dq_{v:.4}v")).collect();
        let rows: Vec<Vec<f64>> = cells.iter().map(|c| c.dq.values.clone()).collect();
        Self::from_rows(cells, names, &rows)
    }

    pub fn from_rows(cells: &[CellDeltaQ], names: Vec<String>, rows: &[Vec<f64>]) -> Result<Self> {
        let p = names.len();
        for (c, r) in cells.iter().zip(rows) {
            if r.len() != p {
                return Err(Error::DimensionMismatch { expected: p, got: r.len() }.in_cell(&c.cell_id));
            }
        }
        let values = DMatrix::from_fn(cells.len(), p, |i, j| rows[i][j]);
        Self::new(
            cells.iter().map(|c| c.cell_id.clone()).collect(),
            cells.iter().map(|c| c.split).collect(),
            names,
            values,
            cells.iter().map(|c| c.label).collect(),
        )?
        .with_outliers(cells.iter().map(|c| c.is_outlier).collect())
    }

    pub fn n_cells(&self) -> usize {
        self.cell_ids.len()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn rows(&self, idx: &[usize]) -> Self {
        Self {
            cell_ids: idx.iter().map(|&i| self.cell_ids[i].clone()).collect(),
            splits: idx.iter().map(|&i| self.splits[i]).collect(),
            feature_names: self.feature_names.clone(),
            values: self.values.select_rows(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            outliers: idx.iter().map(|&i| self.outliers[i]).collect(),
        }
    }

    pub fn split(&self, split: Split) -> Self {
        let idx: Vec<usize> = (0..self.n_cells()).filter(|&i| self.splits[i] == split).collect();
        self.rows(&idx)
    }

    pub fn columns(&self, idx: &[usize]) -> Self {
        Self {
            cell_ids: self.cell_ids.clone(),
            splits: self.splits.clone(),
            feature_names: idx.iter().map(|&j| self.feature_names[j].clone()).collect(),
            values: self.values.select_columns(idx),
            labels: self.labels.clone(),
            outliers: self.outliers.clone(),
        }
    }

    pub fn cycle_lives(&self) -> Vec<f64> {
        self.labels.iter().map(|l| l.cycle_life as f64).collect()
    }

    pub fn log10_cycle_lives(&self) -> Vec<f64> {
        self.labels.iter().map(|l| l.log10_cycle_life).collect()
    }

    /// CSV with header `cell_id,<features>,cycle_life,log10_cycle_life,split`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = csv::Writer::from_writer(file);
        let mut header = vec!["cell_id".to_string()];
        header.extend(self.feature_names.iter().cloned());
        header.extend(["cycle_life", "log10_cycle_life", "split"].map(String::from));
        w.write_record(&header).map_err(|e| Error::csv(path, e))?;
        for i in 0..self.n_cells() {
            let mut rec = vec![self.cell_ids[i].clone()];
            rec.extend(self.values.row(i).iter().map(|x| x.to_string()));
            rec.push(self.labels[i].cycle_life.to_string());
            rec.push(self.labels[i].log10_cycle_life.to_string());
            rec.push(self.splits[i].to_string());
            w.write_record(&rec).map_err(|e| Error::csv(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

/// ΔQ for every cell, then one column per spec.
pub fn extract_table(cells: &[CellRecord], specs: &[FeatureSpec], cfg: &DqConfig) -> Result<FeatureTable> {
    for s in specs {
        s.validate()?;
    }
    let dqs = compute_cell_dqs(cells, cfg)?;
    FeatureTable::from_specs(&dqs, specs)
}

/// Report rendering of a grid of errors: entries above
/// `SUPPRESSION_FACTOR ×` the median of the finite entries become `None`.
pub fn suppress_anomalies(errors: &[f64]) -> Vec<Option<f64>> {
    let finite: Vec<f64> = errors.iter().copied().filter(|x| x.is_finite()).collect();
    if finite.is_empty() {
        return vec![None; errors.len()];
    }
    let med = stats::percentile(&finite, 50.0).expect("non-empty");
    errors
        .iter()
        .map(|&e| (e.is_finite() && e <= SUPPRESSION_FACTOR * med).then_some(e))
        .collect()
}
