//! Cells, cycles and splits; CSV ingestion; cycle-life labels.
//!
//! Two CSV formats are read and written here:
//!
//! - per-cell discharge data, header `cycle_number,voltage_v,discharge_capacity_ah`,
//!   rows grouped by cycle;
//! - the manifest, header `cell_id,batch_id,split,file,nominal_capacity_ah,cycle_life,is_outlier`,
//!   where a blank `cycle_life` means "compute it from the data".

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default nominal capacity of the cells (Ah).
pub const DEFAULT_NOMINAL_CAPACITY_AH: f64 = 1.1;
/// End of life is the first cycle below this fraction of nominal capacity.
pub const DEFAULT_THRESHOLD_FRACTION: f64 = 0.8;
/// Number of consecutive below-threshold cycles that count as a sustained crossing.
pub const SUSTAINED_RUN: usize = 5;
/// Relative slack on the end-of-life threshold so decimal thresholds compare as written.
pub const THRESHOLD_REL_TOL: f64 = 1e-12;
/// Highest cycle used for features; labelled training cells must live at least this long.
pub const FEATURE_CYCLE_MAX: u32 = 100;

pub const CELL_CSV_HEADER: [&str; 3] = ["cycle_number", "voltage_v", "discharge_capacity_ah"];
pub const MANIFEST_HEADER: [&str; 7] = [
    "cell_id",
    "batch_id",
    "split",
    "file",
    "nominal_capacity_ah",
    "cycle_life",
    "is_outlier",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    PrimaryTest,
    SecondaryTest,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::PrimaryTest, Split::SecondaryTest];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::PrimaryTest => "primary_test",
            Split::SecondaryTest => "secondary_test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "train" => Ok(Split::Train),
            "primary_test" => Ok(Split::PrimaryTest),
            "secondary_test" => Ok(Split::SecondaryTest),
            other => Err(Error::UnknownSplit(other.to_string())),
        }
    }
}

/// Raw discharge points of a single cycle.
#[derive(Clone, Debug, PartialEq)]
pub struct CyclePoints {
    pub cycle_number: u32,
    pub voltage_v: Vec<f64>,
    pub discharge_capacity_ah: Vec<f64>,
}

impl CyclePoints {
    pub fn new(cycle_number: u32, voltage_v: Vec<f64>, discharge_capacity_ah: Vec<f64>) -> Result<Self> {
        if cycle_number == 0 {
            return Err(Error::InvalidInput("cycle numbers start at 1".into()));
        }
        if voltage_v.len() != discharge_capacity_ah.len() {
            return Err(Error::InvalidInput(format!(
                "cycle {cycle_number}: {} voltages but {} capacities",
                voltage_v.len(),
                discharge_capacity_ah.len()
            )));
        }
        if voltage_v.is_empty() {
            return Err(Error::InvalidInput(format!("cycle {cycle_number} has no points")));
        }
        if voltage_v.iter().chain(&discharge_capacity_ah).any(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("cycle {cycle_number}")));
        }
        Ok(Self {
            cycle_number,
            voltage_v,
            discharge_capacity_ah,
        })
    }

    pub fn len(&self) -> usize {
        self.voltage_v.len()
    }

    pub fn is_empty(&self) -> bool {
        self.voltage_v.is_empty()
    }

    /// Total discharge capacity of the cycle. Capacity is cumulative within a
    /// discharge, so this is the largest recorded value.
    pub fn total_capacity(&self) -> f64 {
        self.discharge_capacity_ah
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// One cell: metadata, split, per-cycle discharge data and optional label override.
#[derive(Clone, Debug, PartialEq)]
pub struct CellRecord {
    pub cell_id: String,
    pub batch_id: String,
    pub split: Split,
    /// Sorted by strictly increasing cycle number.
    pub cycles: Vec<CyclePoints>,
    pub nominal_capacity_ah: f64,
    /// Cycle-life override from the manifest; wins over computation.
    pub cycle_life: Option<u32>,
    pub is_outlier: bool,
}

impl CellRecord {
    pub fn new(
        cell_id: impl Into<String>,
        batch_id: impl Into<String>,
        split: Split,
        cycles: Vec<CyclePoints>,
    ) -> Result<Self> {
        let cell = Self {
            cell_id: cell_id.into(),
            batch_id: batch_id.into(),
            split,
            cycles,
            nominal_capacity_ah: DEFAULT_NOMINAL_CAPACITY_AH,
            cycle_life: None,
            is_outlier: false,
        };
        cell.validate()?;
        Ok(cell)
    }

    pub fn with_cycle_life(mut self, cycle_life: Option<u32>) -> Self {
        self.cycle_life = cycle_life;
        self
    }

    pub fn with_nominal_capacity(mut self, nominal_capacity_ah: f64) -> Self {
        self.nominal_capacity_ah = nominal_capacity_ah;
        self
    }

    pub fn with_outlier(mut self, is_outlier: bool) -> Self {
        self.is_outlier = is_outlier;
        self
    }

    fn validate(&self) -> Result<()> {
        for w in self.cycles.windows(2) {
            if w[1].cycle_number <= w[0].cycle_number {
                return Err(Error::InvalidInput(format!(
                    "cell {}: cycle numbers not strictly increasing ({} then {})",
                    self.cell_id, w[0].cycle_number, w[1].cycle_number
                )));
            }
        }
        if !(self.nominal_capacity_ah > 0.0) {
            return Err(Error::InvalidInput(format!(
                "cell {}: nominal capacity must be positive",
                self.cell_id
            )));
        }
        if self.cycle_life == Some(0) {
            return Err(Error::InvalidInput(format!("cell {}: cycle_life must be positive", self.cell_id)));
        }
        Ok(())
    }

    pub fn cycle(&self, cycle_number: u32) -> Option<&CyclePoints> {
        self.cycles
            .binary_search_by_key(&cycle_number, |c| c.cycle_number)
            .ok()
            .map(|i| &self.cycles[i])
    }

    pub fn max_cycle(&self) -> Option<u32> {
        self.cycles.last().map(|c| c.cycle_number)
    }

    /// `(cycle_number, total capacity)` for every recorded cycle.
    pub fn capacity_fade(&self) -> Vec<(u32, f64)> {
        self.cycles
            .iter()
            .map(|c| (c.cycle_number, c.total_capacity()))
            .collect()
    }
}

/// Cycle life in cycles and its base-10 logarithm (the regression target).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LifetimeLabel {
    pub cycle_life: u32,
    pub log10_cycle_life: f64,
}

impl LifetimeLabel {
    pub fn new(cycle_life: u32) -> Result<Self> {
        if cycle_life == 0 {
            return Err(Error::InvalidInput("cycle life must be positive".into()));
        }
        Ok(Self {
            cycle_life,
            log10_cycle_life: f64::from(cycle_life).log10(),
        })
    }
}

/// Smallest cycle whose total capacity is below `threshold`, using the
/// sustained-crossing rule: the first cycle of the earliest run of at least
/// [`SUSTAINED_RUN`] consecutive below-threshold records. If no such run exists
/// but the trace ends inside a shorter run, that run's first cycle is returned.
pub fn sustained_crossing(fade: &[(u32, f64)], threshold: f64) -> Option<u32> {
    let mut run_start: Option<usize> = None;
    for (i, &(_, q)) in fade.iter().enumerate() {
        if q < threshold {
            let start = *run_start.get_or_insert(i);
            if i + 1 - start >= SUSTAINED_RUN {
                return Some(fade[start].0);
            }
        } else {
            run_start = None;
        }
    }
    run_start.map(|s| fade[s].0)
}

/// Cycle life of a cell from its capacity-fade trace.
pub fn compute_cycle_life(cell: &CellRecord, threshold_fraction: f64) -> Result<LifetimeLabel> {
    if !(threshold_fraction > 0.0 && threshold_fraction < 1.0) {
        return Err(Error::InvalidInput(format!(
            "threshold fraction must lie in (0, 1), got {threshold_fraction}"
        )));
    }
    let threshold = threshold_fraction * cell.nominal_capacity_ah;
    let fade = cell.capacity_fade();
    // 0.8 × 1.1 rounds above 0.88; a capacity equal to the threshold is not below it
    match sustained_crossing(&fade, threshold * (1.0 - THRESHOLD_REL_TOL)) {
        Some(n) => LifetimeLabel::new(n),
        None => Err(Error::CensoredCell {
            cell_id: cell.cell_id.clone(),
            threshold_ah: threshold,
        }),
    }
}

/// Manifest override if present, otherwise [`compute_cycle_life`] at 80 %.
pub fn cycle_life_label(cell: &CellRecord) -> Result<LifetimeLabel> {
    match cell.cycle_life {
        Some(n) => LifetimeLabel::new(n),
        None => compute_cycle_life(cell, DEFAULT_THRESHOLD_FRACTION),
    }
}

/// Ingestion options.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoadOptions {
    /// Plausible voltage window; points outside it are ingestion errors.
    pub voltage_window: (f64, f64),
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self {
            voltage_window: (1.5, 4.0),
        }
    }
}

/// One row of the manifest CSV.
#[derive(Clone, Debug, PartialEq)]
pub struct ManifestRow {
    pub cell_id: String,
    pub batch_id: String,
    pub split: Split,
    pub file: String,
    pub nominal_capacity_ah: f64,
    pub cycle_life: Option<u32>,
    pub is_outlier: bool,
}

impl ManifestRow {
    pub fn for_cell(cell: &CellRecord, file: impl Into<String>) -> Self {
        Self {
            cell_id: cell.cell_id.clone(),
            batch_id: cell.batch_id.clone(),
            split: cell.split,
            file: file.into(),
            nominal_capacity_ah: cell.nominal_capacity_ah,
            cycle_life: cell.cycle_life,
            is_outlier: cell.is_outlier,
        }
    }
}

fn parse_bool(s: &str) -> Option<bool> {
    match s.trim().to_ascii_lowercase().as_str() {
        "" | "false" | "0" | "no" => Some(false),
        "true" | "1" | "yes" => Some(true),
        _ => None,
    }
}

fn open_reader(path: &Path) -> Result<csv::Reader<File>> {
    if !path.is_file() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file))
}

fn check_header(reader: &mut csv::Reader<File>, path: &Path, expected: &[&str]) -> Result<()> {
    let header = reader.headers().map_err(|e| Error::csv(path, e))?;
    let got: Vec<&str> = header.iter().collect();
    if got != expected {
        return Err(Error::MalformedRow {
            path: path.to_path_buf(),
            row: 0,
            reason: format!("expected header `{}`, got `{}`", expected.join(","), got.join(",")),
        });
    }
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRow>> {
    let mut reader = open_reader(path)?;
    check_header(&mut reader, path, &MANIFEST_HEADER)?;
    let mut rows = Vec::new();
    let mut seen = HashSet::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| Error::csv(path, e))?;
        let bad = |reason: String| Error::MalformedRow {
            path: path.to_path_buf(),
            row,
            reason,
        };
        let cell_id = record[0].to_string();
        if cell_id.is_empty() {
            return Err(bad("empty cell_id".into()));
        }
        if !seen.insert(cell_id.clone()) {
            return Err(Error::DuplicateCell(cell_id));
        }
        let split: Split = record[2].parse()?;
        let file = record[3].to_string();
        if file.is_empty() {
            return Err(bad("empty file".into()));
        }
        let nominal_capacity_ah = if record[4].is_empty() {
            DEFAULT_NOMINAL_CAPACITY_AH
        } else {
            record[4]
                .parse::<f64>()
                .ok()
                .filter(|q| *q > 0.0 && q.is_finite())
                .ok_or_else(|| bad(format!("bad nominal_capacity_ah `{}`", &record[4])))?
        };
        let cycle_life = if record[5].is_empty() {
            None
        } else {
            Some(
                record[5]
                    .parse::<u32>()
                    .ok()
                    .filter(|n| *n > 0)
                    .ok_or_else(|| bad(format!("bad cycle_life `{}`", &record[5])))?,
            )
        };
        let is_outlier =
            parse_bool(&record[6]).ok_or_else(|| bad(format!("bad is_outlier `{}`", &record[6])))?;
        rows.push(ManifestRow {
            cell_id,
            batch_id: record[1].to_string(),
            split,
            file,
            nominal_capacity_ah,
            cycle_life,
            is_outlier,
        });
    }
    Ok(rows)
}

/// Reads one per-cell CSV into cycles sorted by cycle number. Row order within a
/// cycle is preserved.
pub fn read_cell_csv(path: &Path, options: &LoadOptions) -> Result<Vec<CyclePoints>> {
    let mut reader = open_reader(path)?;
    check_header(&mut reader, path, &CELL_CSV_HEADER)?;
    let (v_lo, v_hi) = options.voltage_window;
    let mut grouped: BTreeMap<u32, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| Error::csv(path, e))?;
        let bad = |reason: String| Error::MalformedRow {
            path: path.to_path_buf(),
            row,
            reason,
        };
        if record.len() != 3 {
            return Err(bad(format!("expected 3 fields, got {}", record.len())));
        }
        let cycle: u32 = record[0]
            .parse()
            .ok()
            .filter(|c| *c > 0)
            .ok_or_else(|| bad(format!("bad cycle_number `{}`", &record[0])))?;
        let v: f64 = record[1]
            .parse()
            .ok()
            .filter(|v: &f64| v.is_finite())
            .ok_or_else(|| bad(format!("bad voltage_v `{}`", &record[1])))?;
        let q: f64 = record[2]
            .parse()
            .ok()
            .filter(|q: &f64| q.is_finite())
            .ok_or_else(|| bad(format!("bad discharge_capacity_ah `{}`", &record[2])))?;
        if v < v_lo || v > v_hi {
            return Err(bad(format!("voltage {v} V outside plausible window [{v_lo}, {v_hi}] V")));
        }
        let entry = grouped.entry(cycle).or_default();
        entry.0.push(v);
        entry.1.push(q);
    }
    grouped
        .into_iter()
        .map(|(n, (v, q))| CyclePoints::new(n, v, q))
        .collect()
}

/// Loads every cell listed in the manifest. Relative `file` entries resolve
/// against `data_dir`. Outlier cells are loaded; excluding them is an
/// evaluation concern.
pub fn load_dataset(manifest_path: &Path, data_dir: &Path) -> Result<Vec<CellRecord>> {
    load_dataset_with(manifest_path, data_dir, &LoadOptions::default())
}

pub fn load_dataset_with(
    manifest_path: &Path,
    data_dir: &Path,
    options: &LoadOptions,
) -> Result<Vec<CellRecord>> {
    let rows = read_manifest(manifest_path)?;
    rows.par_iter()
        .map(|row| {
            let path = resolve(data_dir, &row.file);
            let cycles = read_cell_csv(&path, options)?;
            let cell = CellRecord {
                cell_id: row.cell_id.clone(),
                batch_id: row.batch_id.clone(),
                split: row.split,
                cycles,
                nominal_capacity_ah: row.nominal_capacity_ah,
                cycle_life: row.cycle_life,
                is_outlier: row.is_outlier,
            };
            cell.validate()?;
            Ok(cell)
        })
        .collect()
}

fn resolve(data_dir: &Path, file: &str) -> PathBuf {
    let p = Path::new(file);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        data_dir.join(p)
    }
}

pub fn write_cell_csv(path: &Path, cell: &CellRecord) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(w, "{}", CELL_CSV_HEADER.join(",")).map_err(io)?;
    for c in &cell.cycles {
        for (v, q) in c.voltage_v.iter().zip(&c.discharge_capacity_ah) {
            writeln!(w, "{},{},{}", c.cycle_number, v, q).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

pub fn write_manifest(path: &Path, rows: &[ManifestRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    let err = |e| Error::csv(path, e);
    w.write_record(MANIFEST_HEADER).map_err(err)?;
    for r in rows {
        w.write_record([
            r.cell_id.clone(),
            r.batch_id.clone(),
            r.split.to_string(),
            r.file.clone(),
            r.nominal_capacity_ah.to_string(),
            r.cycle_life.map(|n| n.to_string()).unwrap_or_default(),
            r.is_outlier.to_string(),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes each cell to `<dir>/<cell_id>.csv` plus `<dir>/manifest.csv`.
pub fn write_dataset(dir: &Path, cells: &[CellRecord]) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let rows = cells
        .par_iter()
        .map(|cell| {
            let file = format!("{}.csv", cell.cell_id);
            write_cell_csv(&dir.join(&file), cell)?;
            Ok(ManifestRow::for_cell(cell, file))
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = dir.join("manifest.csv");
    write_manifest(&manifest, &rows)?;
    Ok(manifest)
}

/// Cell counts per split.
pub fn split_counts(cells: &[CellRecord]) -> BTreeMap<Split, usize> {
    let mut counts = BTreeMap::new();
    for c in cells {
        *counts.entry(c.split).or_insert(0) += 1;
    }
    counts
}

/// Checks that every labelled training cell lives past the feature window.
pub fn check_training_labels(cells: &[CellRecord]) -> Result<()> {
    for c in cells.iter().filter(|c| c.split == Split::Train && !c.is_outlier) {
        if let Some(n) = c.cycle_life {
            if n < FEATURE_CYCLE_MAX {
                return Err(Error::InvalidInput(format!(
                    "training cell {} has cycle_life {n} < {FEATURE_CYCLE_MAX}",
                    c.cell_id
                )));
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cycle(n: u32, total: f64) -> CyclePoints {
        CyclePoints::new(n, vec![3.5, 3.0, 2.0], vec![0.0, total / 2.0, total]).unwrap()
    }

    fn cell_from_totals(totals: &[f64]) -> CellRecord {
        let cycles = totals
            .iter()
            .enumerate()
            .map(|(i, &q)| cycle(i as u32 + 1, q))
            .collect();
        CellRecord::new("c", "b", Split::Train, cycles).unwrap()
    }

    #[test]
    fn cycle_life_three_cycles() {
        let cell = cell_from_totals(&[1.00, 0.90, 0.87]);
        let label = compute_cycle_life(&cell, 0.8).unwrap();
        assert_eq!(label.cycle_life, 3);
        assert_eq!(label.log10_cycle_life, 3f64.log10());
    }

    #[test]
    fn cycle_life_censored() {
        let cell = cell_from_totals(&[1.0, 0.95, 0.9, 0.88]);
        assert!(matches!(
            compute_cycle_life(&cell, 0.8),
            Err(Error::CensoredCell { .. })
        ));
    }

    #[test]
    fn single_dip_is_ignored() {
        // Dip below 0.88 at cycle 40, sustained crossing from cycle 700.
        let totals: Vec<f64> = (1..=720u32)
            .map(|n| match n {
                40 => 0.85,
                n if n >= 700 => 0.87 - 1e-4 * f64::from(n - 700),
                n => 1.05 - 1.5e-4 * f64::from(n),
            })
            .collect();
        let cell = cell_from_totals(&totals);
        assert_eq!(compute_cycle_life(&cell, 0.8).unwrap().cycle_life, 700);
    }

    #[test]
    fn short_run_at_end_of_trace() {
        let cell = cell_from_totals(&[1.0, 0.85, 0.95, 0.9, 0.87, 0.86]);
        assert_eq!(compute_cycle_life(&cell, 0.8).unwrap().cycle_life, 5);
        let recovered = cell_from_totals(&[1.0, 0.85, 0.95, 0.9]);
        assert!(compute_cycle_life(&recovered, 0.8).is_err());
    }

    #[test]
    fn override_wins() {
        let cell = cell_from_totals(&[1.00, 0.90, 0.87]).with_cycle_life(Some(1234));
        assert_eq!(cycle_life_label(&cell).unwrap().cycle_life, 1234);
    }

    #[test]
    fn split_parsing() {
        assert_eq!("primary_test".parse::<Split>().unwrap(), Split::PrimaryTest);
        assert!(matches!("validation".parse::<Split>(), Err(Error::UnknownSplit(_))));
    }

    #[test]
    fn rejects_bad_cycles() {
        assert!(CyclePoints::new(1, vec![3.0, 2.0], vec![0.1]).is_err());
        assert!(CyclePoints::new(1, vec![], vec![]).is_err());
        assert!(CyclePoints::new(0, vec![3.0], vec![0.1]).is_err());
        let dup = vec![cycle(2, 1.0), cycle(2, 1.0)];
        assert!(CellRecord::new("c", "b", Split::Train, dup).is_err());
    }
}
