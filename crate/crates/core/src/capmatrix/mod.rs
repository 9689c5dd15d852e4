//! Capacity matrices on a fixed voltage grid, their baseline-normalized
//! variants, ΔQ(V) vectors and voltage downsampling.

mod resample;
mod spline;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{CellRecord, CyclePoints};
use crate::error::{Error, Result};

pub use resample::{
    antitonic, interpolate_clamped, prepare_knots, resample_cycle, resample_knots, CurveKnots, ResampleMethod,
    MIN_DISTINCT_VOLTAGES,
};
pub use spline::SmoothingSpline;

pub const DEFAULT_V_MIN: f64 = 2.0;
pub const DEFAULT_V_MAX: f64 = 3.6;
pub const DEFAULT_GRID_POINTS: usize = 1000;
pub const DEFAULT_CYCLE_LO: u32 = 2;
pub const DEFAULT_CYCLE_HI: u32 = 100;
pub const DEFAULT_BASELINE_CYCLE: u32 = 2;
/// Baseline entries at or below this capacity (Ah) make division meaningless.
pub const DIVISION_FLOOR_AH: f64 = 1e-4;
/// How far (in cycles) a missing cycle may be substituted by a neighbour.
pub const MISSING_CYCLE_REACH: u32 = 2;

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
struct GridSpec {
    v_min: f64,
    v_max: f64,
    n_points: usize,
}

/// Evenly spaced voltages, both endpoints included.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GridSpec", into = "GridSpec")]
pub struct VoltageGrid {
    v_min: f64,
    v_max: f64,
    values: Vec<f64>,
}

impl TryFrom<GridSpec> for VoltageGrid {
    type Error = Error;

    fn try_from(spec: GridSpec) -> Result<Self> {
        VoltageGrid::new(spec.v_min, spec.v_max, spec.n_points)
    }
}

impl From<VoltageGrid> for GridSpec {
    fn from(g: VoltageGrid) -> Self {
        GridSpec {
            v_min: g.v_min,
            v_max: g.v_max,
            n_points: g.values.len(),
        }
    }
}

impl Default for VoltageGrid {
    fn default() -> Self {
        Self::new(DEFAULT_V_MIN, DEFAULT_V_MAX, DEFAULT_GRID_POINTS).expect("default grid is valid")
    }
}

impl VoltageGrid {
    pub fn new(v_min: f64, v_max: f64, n_points: usize) -> Result<Self> {
        if !v_min.is_finite() || !v_max.is_finite() || !(v_min < v_max) {
            return Err(Error::InvalidInput(format!("voltage grid needs v_min < v_max, got {v_min}..{v_max}")));
        }
        if n_points < 2 {
            return Err(Error::InvalidInput("voltage grid needs at least 2 points".into()));
        }
        let step = (v_max - v_min) / (n_points - 1) as f64;
        let mut values: Vec<f64> = (0..n_points).map(|i| v_min + step * i as f64).collect();
        values[n_points - 1] = v_max;
        Ok(Self { v_min, v_max, values })
    }

    pub fn v_min(&self) -> f64 {
        self.v_min
    }

    pub fn v_max(&self) -> f64 {
        self.v_max
    }

    pub fn n_points(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn spacing(&self) -> f64 {
        (self.v_max - self.v_min) / (self.values.len() - 1) as f64
    }

    /// Index of the grid voltage closest to `v` (lower index on ties).
    pub fn nearest_index(&self, v: f64) -> usize {
        nearest_index(&self.values, v)
    }
}

pub(crate) fn nearest_index(values: &[f64], v: f64) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, &x) in values.iter().enumerate() {
        let d = (x - v).abs();
        if d < best_d {
            best = i;
            best_d = d;
        }
    }
    best
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatrixKind {
    Raw,
    BaselineSubtracted,
    BaselineDivided,
}

impl MatrixKind {
    pub fn as_str(self) -> &'static str {
        match self {
            MatrixKind::Raw => "raw",
            MatrixKind::BaselineSubtracted => "baseline_subtracted",
            MatrixKind::BaselineDivided => "baseline_divided",
        }
    }
}

/// Grid voltages by cycles; column `j` holds cycle `cycles[j]`.
#[derive(Clone, Debug, PartialEq)]
pub struct CapacityMatrix {
    pub grid: VoltageGrid,
    pub cycles: Vec<u32>,
    pub q: DMatrix<f64>,
    pub kind: MatrixKind,
    pub baseline_cycle: Option<u32>,
}

impl CapacityMatrix {
    pub fn column_index(&self, cycle: u32) -> Option<usize> {
        self.cycles.iter().position(|&c| c == cycle)
    }

    pub fn column(&self, cycle: u32) -> Option<Vec<f64>> {
        self.column_index(cycle).map(|j| self.q.column(j).iter().copied().collect())
    }

    /// `Σ_V column(V)·ΔV` per cycle. On a baseline-subtracted matrix this is
    /// the change of discharge energy delivered above `v_min`.
    pub fn energy_proxy(&self) -> Vec<f64> {
        let dv = self.grid.spacing();
        self.q.column_iter().map(|c| c.sum() * dv).collect()
    }
}

/// Cycle used in place of `cycle`: itself if present, otherwise the closest
/// recorded cycle within reach (the earlier one on ties).
pub fn substitute_cycle(cell: &CellRecord, cycle: u32) -> Result<&CyclePoints> {
    if let Some(c) = cell.cycle(cycle) {
        return Ok(c);
    }
    for d in 1..=MISSING_CYCLE_REACH {
        if let Some(c) = cycle.checked_sub(d).and_then(|n| cell.cycle(n)) {
            log::debug!("{}: cycle {} substituted by {}", cell.cell_id, cycle, c.cycle_number);
            return Ok(c);
        }
        if let Some(c) = cell.cycle(cycle + d) {
            log::debug!("{}: cycle {} substituted by {}", cell.cell_id, cycle, c.cycle_number);
            return Ok(c);
        }
    }
    Err(Error::MissingCycle {
        cell_id: cell.cell_id.clone(),
        cycle,
    })
}

fn build_columns(
    cell: &CellRecord,
    grid: &VoltageGrid,
    cycles: &[u32],
    method: ResampleMethod,
) -> Result<CapacityMatrix> {
    let columns: Vec<Vec<f64>> = cycles
        .par_iter()
        .map(|&n| {
            let points = substitute_cycle(cell, n)?;
            resample_cycle(points, grid, method).map_err(|e| e.in_cell(&cell.cell_id))
        })
        .collect::<Result<_>>()?;
    let rows = grid.n_points();
    let mut q = DMatrix::zeros(rows, cycles.len());
    for (j, col) in columns.iter().enumerate() {
        q.column_mut(j).copy_from_slice(col);
    }
    Ok(CapacityMatrix {
        grid: grid.clone(),
        cycles: cycles.to_vec(),
        q,
        kind: MatrixKind::Raw,
        baseline_cycle: None,
    })
}

pub fn build_capacity_matrix(
    cell: &CellRecord,
    grid: &VoltageGrid,
    cycle_lo: u32,
    cycle_hi: u32,
    method: ResampleMethod,
) -> Result<CapacityMatrix> {
    if cycle_lo == 0 || cycle_lo > cycle_hi {
        return Err(Error::InvalidInput(format!("bad cycle window [{cycle_lo}, {cycle_hi}]")));
    }
    let cycles: Vec<u32> = (cycle_lo..=cycle_hi).collect();
    build_columns(cell, grid, &cycles, method)
}

pub fn normalize(m: &CapacityMatrix, kind: MatrixKind, baseline_cycle: u32) -> Result<CapacityMatrix> {
    if m.kind != MatrixKind::Raw {
        return Err(Error::InvalidInput("only raw matrices can be normalized".into()));
    }
    let b = m
        .column_index(baseline_cycle)
        .ok_or_else(|| Error::InvalidInput(format!("baseline cycle {baseline_cycle} not in matrix")))?;
    let base: Vec<f64> = m.q.column(b).iter().copied().collect();
    let mut q = m.q.clone();
    match kind {
        MatrixKind::Raw => return Err(Error::InvalidInput("normalization target must not be raw".into())),
        MatrixKind::BaselineSubtracted => {
            for mut col in q.column_iter_mut() {
                for (x, b) in col.iter_mut().zip(&base) {
                    *x -= b;
                }
            }
        }
        MatrixKind::BaselineDivided => {
            if let Some((row, &value)) = base.iter().enumerate().find(|(_, &v)| !(v > DIVISION_FLOOR_AH)) {
                return Err(Error::DivisionFloor { row, value });
            }
            for mut col in q.column_iter_mut() {
                for (x, b) in col.iter_mut().zip(&base) {
                    *x /= b;
                }
            }
        }
    }
    Ok(CapacityMatrix {
        grid: m.grid.clone(),
        cycles: m.cycles.clone(),
        q,
        kind,
        baseline_cycle: Some(baseline_cycle),
    })
}

/// Non-empty set of cycles averaged together, e.g. `{98, 99, 100}`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<u32>", into = "Vec<u32>")]
pub struct CycleWindow(Vec<u32>);

impl CycleWindow {
    pub fn new(mut cycles: Vec<u32>) -> Result<Self> {
        if cycles.is_empty() {
            return Err(Error::InvalidInput("empty cycle window".into()));
        }
        cycles.sort_unstable();
        cycles.dedup();
        Ok(Self(cycles))
    }

    pub fn single(cycle: u32) -> Self {
        Self(vec![cycle])
    }

    /// Inclusive range `lo..=hi`.
    pub fn span(lo: u32, hi: u32) -> Result<Self> {
        Self::new((lo..=hi).collect())
    }

    pub fn cycles(&self) -> &[u32] {
        &self.0
    }

    pub fn label(&self) -> String {
        match self.0.as_slice() {
            [c] => c.to_string(),
            cs => format!("{}:{}", cs[0], cs[cs.len() - 1]),
        }
    }
}

impl TryFrom<Vec<u32>> for CycleWindow {
    type Error = Error;

    fn try_from(v: Vec<u32>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<CycleWindow> for Vec<u32> {
    fn from(w: CycleWindow) -> Self {
        w.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeltaQVector {
    /// Nominal grid; after downsampling it has the reduced point count.
    pub grid: VoltageGrid,
    /// Voltages the values were actually taken at.
    pub voltages: Vec<f64>,
    pub values: Vec<f64>,
    pub hi_cycles: CycleWindow,
    pub lo_cycles: CycleWindow,
}

impl DeltaQVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn label(&self) -> String {
        format!("dq_{}_{}", self.hi_cycles.label(), self.lo_cycles.label())
    }
}

fn window_mean(m: &CapacityMatrix, w: &CycleWindow) -> Result<Vec<f64>> {
    let idx: Vec<usize> = w
        .cycles()
        .iter()
        .map(|&c| {
            m.column_index(c)
                .ok_or_else(|| Error::InvalidInput(format!("cycle {c} not in matrix")))
        })
        .collect::<Result<_>>()?;
    let k = idx.len() as f64;
    Ok((0..m.q.nrows())
        .map(|r| idx.iter().map(|&j| m.q[(r, j)]).sum::<f64>() / k)
        .collect())
}

pub fn delta_q(m: &CapacityMatrix, hi: &CycleWindow, lo: &CycleWindow) -> Result<DeltaQVector> {
    if m.kind != MatrixKind::Raw {
        return Err(Error::InvalidInput("delta_q expects a raw capacity matrix".into()));
    }
    let h = window_mean(m, hi)?;
    let l = window_mean(m, lo)?;
    Ok(DeltaQVector {
        grid: m.grid.clone(),
        voltages: m.grid.values().to_vec(),
        values: h.iter().zip(&l).map(|(a, b)| a - b).collect(),
        hi_cycles: hi.clone(),
        lo_cycles: lo.clone(),
    })
}

/// ΔQ for one cell, resampling only the cycles the two windows need.
pub fn delta_q_for_cell(
    cell: &CellRecord,
    grid: &VoltageGrid,
    hi: &CycleWindow,
    lo: &CycleWindow,
    method: ResampleMethod,
) -> Result<DeltaQVector> {
    let mut cycles: Vec<u32> = hi.cycles().iter().chain(lo.cycles()).copied().collect();
    cycles.sort_unstable();
    cycles.dedup();
    let m = build_columns(cell, grid, &cycles, method)?;
    delta_q(&m, hi, lo)
}

/// Evenly spaced indices `round(k (n−1)/(n_target−1))`, first and last included.
pub fn downsample_indices(n: usize, n_target: usize) -> Result<Vec<usize>> {
    if n_target < 2 || n_target > n {
        return Err(Error::InvalidInput(format!("cannot downsample {n} points to {n_target}")));
    }
    let span = n - 1;
    let steps = n_target - 1;
    // integer round-half-up of k·span/steps
    Ok((0..n_target).map(|k| (2 * k * span + steps) / (2 * steps)).collect())
}

pub fn downsample(v: &DeltaQVector, n_target: usize) -> Result<DeltaQVector> {
    let idx = downsample_indices(v.len(), n_target)?;
    Ok(DeltaQVector {
        grid: VoltageGrid::new(v.grid.v_min(), v.grid.v_max(), n_target)?,
        voltages: idx.iter().map(|&i| v.voltages[i]).collect(),
        values: idx.iter().map(|&i| v.values[i]).collect(),
        hi_cycles: v.hi_cycles.clone(),
        lo_cycles: v.lo_cycles.clone(),
    })
}

#[derive(Debug, Serialize, Deserialize)]
pub struct MatrixSidecar {
    pub cell_id: String,
    pub kind: MatrixKind,
    pub baseline_cycle: Option<u32>,
    pub grid: VoltageGrid,
    pub cycles: Vec<u32>,
}

/// Writes `<stem>.csv` (header `voltage_v,c2,c3,...`) and `<stem>.json`.
pub fn write_matrix(dir: &Path, stem: &str, cell_id: &str, m: &CapacityMatrix) -> Result<(PathBuf, PathBuf)> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let csv_path = dir.join(format!("{stem}.csv"));
    let json_path = dir.join(format!("{stem}.json"));

    let file = File::create(&csv_path).map_err(|e| Error::io(&csv_path, e))?;
    let mut w = BufWriter::new(file);
    let write_err = |e| Error::io(&csv_path, e);
    let mut header = String::from("voltage_v");
    for c in &m.cycles {
        header.push_str(&format!(",c{c}"));
    }
    writeln!(w, "{header}").map_err(write_err)?;
    for (r, v) in m.grid.values().iter().enumerate() {
        let mut line = v.to_string();
        for j in 0..m.q.ncols() {
            line.push(',');
            line.push_str(&m.q[(r, j)].to_string());
        }
        writeln!(w, "{line}").map_err(write_err)?;
    }
    w.flush().map_err(write_err)?;

    let sidecar = MatrixSidecar {
        cell_id: cell_id.to_string(),
        kind: m.kind,
        baseline_cycle: m.baseline_cycle,
        grid: m.grid.clone(),
        cycles: m.cycles.clone(),
    };
    let file = File::create(&json_path).map_err(|e| Error::io(&json_path, e))?;
    serde_json::to_writer_pretty(file, &sidecar)?;
    Ok((csv_path, json_path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Split;
    use proptest::prelude::*;

    fn cell_with(cycles: &[u32], curve: impl Fn(u32, f64) -> f64) -> CellRecord {
        let grid = VoltageGrid::new(2.0, 3.6, 41).unwrap();
        let cs = cycles
            .iter()
            .map(|&n| {
                let v = grid.values().to_vec();
                let q = v.iter().map(|&x| curve(n, x)).collect();
                CyclePoints::new(n, v, q).unwrap()
            })
            .collect();
        CellRecord::new("c1", "b1", Split::Train, cs).unwrap()
    }

    fn linear_fade(n: u32, v: f64) -> f64 {
        (1.1 - 0.0005 * n as f64) * (3.6 - v) / 1.6
    }

    #[test]
    fn grid_defaults() {
        let g = VoltageGrid::default();
        assert_eq!(g.n_points(), 1000);
        assert_eq!(g.values()[0], 2.0);
        assert_eq!(g.values()[999], 3.6);
        assert!((g.spacing() - 0.0016016016).abs() < 1e-9);
        assert!(g.values().windows(2).all(|w| w[1] > w[0]));
        let steps: Vec<f64> = g.values().windows(2).map(|w| w[1] - w[0]).collect();
        assert!(steps.iter().all(|s| (s - g.spacing()).abs() < 1e-12));
        assert!(VoltageGrid::new(3.6, 2.0, 10).is_err());
        assert!(VoltageGrid::new(2.0, 3.6, 1).is_err());
    }

    #[test]
    fn grid_serde_round_trip() {
        let g = VoltageGrid::new(2.0, 3.6, 20).unwrap();
        let s = serde_json::to_string(&g).unwrap();
        assert_eq!(s, r#"{"v_min":2.0,"v_max":3.6,"n_points":20}"#);
        let back: VoltageGrid = serde_json::from_str(&s).unwrap();
        assert_eq!(back, g);
    }

    #[test]
    fn matrix_shape_and_missing_cycle_one() {
        let cycles: Vec<u32> = (2..=100).collect();
        let cell = cell_with(&cycles, linear_fade);
        let m = build_capacity_matrix(&cell, &VoltageGrid::default(), 2, 100, ResampleMethod::Linear).unwrap();
        assert_eq!(m.q.shape(), (1000, 99));
        assert_eq!(m.kind, MatrixKind::Raw);
        for col in m.q.column_iter() {
            assert!(col.as_slice().windows(2).all(|w| w[1] <= w[0] + 1e-9));
        }
    }

    #[test]
    fn single_cycle_window() {
        let cell = cell_with(&[4, 5, 6], linear_fade);
        let grid = VoltageGrid::new(2.0, 3.6, 77).unwrap();
        let m = build_capacity_matrix(&cell, &grid, 5, 5, ResampleMethod::Linear).unwrap();
        let direct = resample_cycle(cell.cycle(5).unwrap(), &grid, ResampleMethod::Linear).unwrap();
        assert_eq!(m.q.ncols(), 1);
        assert_eq!(m.column(5).unwrap(), direct);
    }

    #[test]
    fn missing_cycle_substitution() {
        let cell = cell_with(&[2, 3, 6, 7], linear_fade);
        assert_eq!(substitute_cycle(&cell, 4).unwrap().cycle_number, 3);
        assert_eq!(substitute_cycle(&cell, 5).unwrap().cycle_number, 6);
        let sparse = cell_with(&[2, 10], linear_fade);
        assert!(matches!(
            substitute_cycle(&sparse, 6),
            Err(Error::MissingCycle { cycle: 6, .. })
        ));
        assert!(build_capacity_matrix(&sparse, &VoltageGrid::default(), 2, 10, ResampleMethod::Linear).is_err());
    }

    #[test]
    fn normalization_identities() {
        let cell = cell_with(&[2, 3, 4], |n, v| (1.1 - 0.01 * n as f64) * (3.7 - v) / 1.7);
        let grid = VoltageGrid::new(2.0, 3.6, 50).unwrap();
        let m = build_capacity_matrix(&cell, &grid, 2, 4, ResampleMethod::Linear).unwrap();
        let sub = normalize(&m, MatrixKind::BaselineSubtracted, 2).unwrap();
        assert!(sub.column(2).unwrap().iter().all(|&x| x == 0.0));
        let div = normalize(&m, MatrixKind::BaselineDivided, 2).unwrap();
        assert!(div.column(2).unwrap().iter().all(|&x| x == 1.0));
        let base = m.column(2).unwrap();
        for j in 0..m.q.ncols() {
            for r in 0..m.q.nrows() {
                assert!((sub.q[(r, j)] + base[r] - m.q[(r, j)]).abs() < 1e-12);
            }
        }
        assert!(normalize(&m, MatrixKind::BaselineSubtracted, 9).is_err());
        assert!(normalize(&sub, MatrixKind::BaselineSubtracted, 2).is_err());
    }

    #[test]
    fn division_floor() {
        // capacity reaches zero at 3.6 V
        let cell = cell_with(&[2, 3], linear_fade);
        let m = build_capacity_matrix(&cell, &VoltageGrid::default(), 2, 3, ResampleMethod::Linear).unwrap();
        assert!(matches!(
            normalize(&m, MatrixKind::BaselineDivided, 2),
            Err(Error::DivisionFloor { row: 999, .. })
        ));
    }

    fn constant_columns(cycles: &[u32], values: &[f64]) -> CapacityMatrix {
        let grid = VoltageGrid::new(2.0, 3.6, 8).unwrap();
        let mut q = DMatrix::zeros(8, cycles.len());
        for (j, v) in values.iter().enumerate() {
            q.column_mut(j).fill(*v);
        }
        CapacityMatrix {
            grid,
            cycles: cycles.to_vec(),
            q,
            kind: MatrixKind::Raw,
            baseline_cycle: None,
        }
    }

    #[test]
    fn windowed_delta_q_hand_arithmetic() {
        let m = constant_columns(&[9, 10, 11, 98, 99, 100], &[1.07, 1.06, 1.08, 1.01, 0.99, 1.0]);
        let hi = CycleWindow::span(98, 100).unwrap();
        let lo = CycleWindow::span(9, 11).unwrap();
        let dq = delta_q(&m, &hi, &lo).unwrap();
        let expected = (1.01 + 0.99 + 1.0) / 3.0 - (1.07 + 1.06 + 1.08) / 3.0;
        assert!(dq.values.iter().all(|&x| (x - expected).abs() < 1e-15));
        assert_eq!(dq.label(), "dq_98:100_9:11");

        let same = delta_q(&m, &hi, &hi).unwrap();
        assert!(same.values.iter().all(|&x| x == 0.0));
        assert!(delta_q(&m, &CycleWindow::single(50), &lo).is_err());
        assert!(CycleWindow::new(vec![]).is_err());
    }

    #[test]
    fn downsample_examples() {
        let grid = VoltageGrid::default();
        let v = DeltaQVector {
            grid: grid.clone(),
            voltages: grid.values().to_vec(),
            values: (0..1000).map(|i| i as f64).collect(),
            hi_cycles: CycleWindow::single(100),
            lo_cycles: CycleWindow::single(10),
        };
        let d = downsample(&v, 10).unwrap();
        assert_eq!(d.values, vec![0.0, 111.0, 222.0, 333.0, 444.0, 555.0, 666.0, 777.0, 888.0, 999.0]);
        assert_eq!(downsample(&v, 1000).unwrap(), v);
        let d100 = downsample(&v, 100).unwrap();
        assert_eq!(d100.len(), 100);
        assert_eq!(d100.grid.n_points(), 100);
        assert_eq!(d100.voltages[0], 2.0);
        assert_eq!(d100.voltages[99], 3.6);
        assert!(downsample(&v, 1).is_err());
        assert!(downsample(&v, 1001).is_err());
    }

    #[test]
    fn energy_proxy_matches_direct_integration() {
        // energy above the cut-off: ∫ (V − v_min) dQ over the discharge
        let curve = |fade: f64| move |v: f64| (1.1 - fade) * (1.0 / (1.0 + ((v - 3.25) / 0.04).exp())) * 0.7 + (1.1 - 2.0 * fade) * 0.3 * (3.6 - v) / 1.6;
        let direct = |q: &dyn Fn(f64) -> f64| {
            let n = 200_000;
            let mut e = 0.0;
            for i in 0..n {
                let v0 = 2.0 + 1.6 * i as f64 / n as f64;
                let v1 = 2.0 + 1.6 * (i + 1) as f64 / n as f64;
                e += (0.5 * (v0 + v1) - 2.0) * (q(v0) - q(v1));
            }
            e
        };
        let grid = VoltageGrid::default();
        let mut ratios = Vec::new();
        for fade in [0.01, 0.03, 0.08] {
            let qb = curve(0.0);
            let qn = curve(fade);
            let de = direct(&qn) - direct(&qb);
            let mut m = DMatrix::zeros(1000, 2);
            for (r, &v) in grid.values().iter().enumerate() {
                m[(r, 0)] = qb(v);
                m[(r, 1)] = qn(v);
            }
            let cm = CapacityMatrix {
                grid: grid.clone(),
                cycles: vec![2, 50],
                q: m,
                kind: MatrixKind::Raw,
                baseline_cycle: None,
            };
            let sub = normalize(&cm, MatrixKind::BaselineSubtracted, 2).unwrap();
            ratios.push(sub.energy_proxy()[1] / de);
        }
        for r in &ratios {
            assert!((r / ratios[0] - 1.0).abs() < 0.005, "{ratios:?}");
        }
    }

    #[test]
    fn matrix_dump_files() {
        let cell = cell_with(&[2, 3], linear_fade);
        let grid = VoltageGrid::new(2.0, 3.6, 5).unwrap();
        let m = build_capacity_matrix(&cell, &grid, 2, 3, ResampleMethod::Linear).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let (csv_path, json_path) = write_matrix(dir.path(), "c1_raw", "c1", &m).unwrap();
        let text = std::fs::read_to_string(csv_path).unwrap();
        assert!(text.starts_with("voltage_v,c2,c3\n2,"));
        assert_eq!(text.lines().count(), 6);
        let side: MatrixSidecar = serde_json::from_str(&std::fs::read_to_string(json_path).unwrap()).unwrap();
        assert_eq!(side.kind, MatrixKind::Raw);
        assert_eq!(side.cycles, vec![2, 3]);
    }

    proptest! {
        #[test]
        fn delta_q_antisymmetric(vals in proptest::collection::vec(-2.0f64..2.0, 4)) {
            let m = constant_columns(&[1, 2, 3, 4], &vals);
            let a = CycleWindow::new(vec![1, 3]).unwrap();
            let b = CycleWindow::new(vec![2, 4]).unwrap();
            let ab = delta_q(&m, &a, &b).unwrap();
            let ba = delta_q(&m, &b, &a).unwrap();
            for (x, y) in ab.values.iter().zip(&ba.values) {
                prop_assert_eq!(*x, -*y);
            }
        }

        #[test]
        fn downsample_idempotent(n in 2usize..400, frac in 0.0f64..1.0) {
            let target = 2 + ((n - 2) as f64 * frac) as usize;
            let grid = VoltageGrid::new(2.0, 3.6, n).unwrap();
            let v = DeltaQVector {
                grid: grid.clone(),
                voltages: grid.values().to_vec(),
                values: grid.values().iter().map(|x| x.sin()).collect(),
                hi_cycles: CycleWindow::single(100),
                lo_cycles: CycleWindow::single(10),
            };
            let once = downsample(&v, target).unwrap();
            let twice = downsample(&once, target).unwrap();
            prop_assert_eq!(once.values.first(), v.values.first());
            prop_assert_eq!(once.values.last(), v.values.last());
            prop_assert_eq!(once, twice);
        }
    }
}
