//! Capacity-as-a-function-of-voltage resampling of one cycle's discharge points.

use serde::{Deserialize, Serialize};

use super::spline::SmoothingSpline;
use super::VoltageGrid;
use crate::dataset::CyclePoints;
use crate::error::{Error, Result};

pub const MIN_DISTINCT_VOLTAGES: usize = 4;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResampleMethod {
    #[default]
    Linear,
    /// Cubic smoothing spline with a GCV-chosen penalty.
    SmoothingSpline,
}

/// Knots of a capacity(voltage) curve: distinct voltages ascending, capacities
/// non-increasing.
#[derive(Clone, Debug, PartialEq)]
pub struct CurveKnots {
    pub voltage: Vec<f64>,
    pub capacity: Vec<f64>,
}

fn median(sorted: &mut [f64]) -> f64 {
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Pool-adjacent-violators fit of a non-increasing sequence (unit weights).
pub fn antitonic(values: &[f64]) -> Vec<f64> {
    // blocks of (sum, count)
    let mut blocks: Vec<(f64, usize)> = Vec::with_capacity(values.len());
    for &v in values {
        blocks.push((v, 1));
        while blocks.len() > 1 {
            let (s1, n1) = blocks[blocks.len() - 1];
            let (s0, n0) = blocks[blocks.len() - 2];
            if s0 / n0 as f64 >= s1 / n1 as f64 {
                break;
            }
            blocks.pop();
            let last = blocks.len() - 1;
            blocks[last] = (s0 + s1, n0 + n1);
        }
    }
    let mut out = Vec::with_capacity(values.len());
    for (s, n) in blocks {
        let mean = s / n as f64;
        out.extend(std::iter::repeat(mean).take(n));
    }
    out
}

fn is_non_increasing(values: &[f64]) -> bool {
    values.windows(2).all(|w| w[1] <= w[0])
}

/// Sorts by voltage, median-aggregates repeated voltages and enforces a
/// non-increasing capacity.
pub fn prepare_knots(points: &CyclePoints) -> Result<CurveKnots> {
    let mut pairs: Vec<(f64, f64)> = points
        .voltage_v
        .iter()
        .copied()
        .zip(points.discharge_capacity_ah.iter().copied())
        .collect();
    if pairs.iter().any(|(v, q)| !v.is_finite() || !q.is_finite()) {
        return Err(Error::NonFinite(format!("cycle {}", points.cycle_number)));
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut voltage = Vec::with_capacity(pairs.len());
    let mut capacity = Vec::with_capacity(pairs.len());
    let mut i = 0;
    let mut group = Vec::new();
    while i < pairs.len() {
        let v = pairs[i].0;
        group.clear();
        while i < pairs.len() && pairs[i].0 == v {
            group.push(pairs[i].1);
            i += 1;
        }
        voltage.push(v);
        capacity.push(if group.len() == 1 { group[0] } else { median(&mut group) });
    }
    if voltage.len() < MIN_DISTINCT_VOLTAGES {
        return Err(Error::TooFewPoints {
            needed: MIN_DISTINCT_VOLTAGES,
            got: voltage.len(),
        });
    }
    if !is_non_increasing(&capacity) {
        capacity = antitonic(&capacity);
    }
    Ok(CurveKnots { voltage, capacity })
}

/// Piecewise-linear evaluation with constant extrapolation beyond the knots.
pub fn interpolate_clamped(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    let n = xs.len();
    if x <= xs[0] {
        return ys[0];
    }
    if x >= xs[n - 1] {
        return ys[n - 1];
    }
    // first index with xs[i] > x
    let hi = xs.partition_point(|&v| v <= x);
    let lo = hi - 1;
    if xs[lo] == x {
        return ys[lo];
    }
    let t = (x - xs[lo]) / (xs[hi] - xs[lo]);
    ys[lo] + t * (ys[hi] - ys[lo])
}

/// Capacity of one cycle evaluated on every grid voltage.
pub fn resample_cycle(points: &CyclePoints, grid: &VoltageGrid, method: ResampleMethod) -> Result<Vec<f64>> {
    let knots = prepare_knots(points)?;
    resample_knots(&knots, grid, method)
}

pub fn resample_knots(knots: &CurveKnots, grid: &VoltageGrid, method: ResampleMethod) -> Result<Vec<f64>> {
    let xs = &knots.voltage;
    match method {
        ResampleMethod::Linear => Ok(grid
            .values()
            .iter()
            .map(|&v| interpolate_clamped(xs, &knots.capacity, v))
            .collect()),
        ResampleMethod::SmoothingSpline => {
            let spline = SmoothingSpline::fit_gcv(xs, &knots.capacity)?;
            let (lo, hi) = (xs[0], xs[xs.len() - 1]);
            let out: Vec<f64> = grid
                .values()
                .iter()
                .map(|&v| spline.evaluate(v.clamp(lo, hi)))
                .collect();
            Ok(if is_non_increasing(&out) { out } else { antitonic(&out) })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn linear_identity_at_knots() {
        let grid = VoltageGrid::new(2.0, 3.6, 9).unwrap();
        let v = grid.values().to_vec();
        let q: Vec<f64> = v.iter().map(|x| 1.1 * (3.6 - x) / 1.6).collect();
        let cycle = CyclePoints::new(5, v.clone(), q.clone()).unwrap();
        let out = resample_cycle(&cycle, &grid, ResampleMethod::Linear).unwrap();
        assert_eq!(out, q);
    }

    #[test]
    fn linear_curve_from_random_voltages() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut v: Vec<f64> = (0..48).map(|_| rng.random_range(2.0..3.6)).collect();
        v.push(2.0);
        v.push(3.6);
        let q: Vec<f64> = v.iter().map(|x| 1.1 * (3.6 - x) / 1.6).collect();
        let cycle = CyclePoints::new(3, v, q).unwrap();
        let grid = VoltageGrid::default();
        let out = resample_cycle(&cycle, &grid, ResampleMethod::Linear).unwrap();
        for (x, y) in grid.values().iter().zip(&out) {
            assert!((y - 1.1 * (3.6 - x) / 1.6).abs() < 1e-6);
        }
    }

    #[test]
    fn clamps_above_observed_range() {
        let cycle = CyclePoints::new(1, vec![2.0, 2.5, 3.0, 3.3], vec![1.0, 0.7, 0.4, 0.1]).unwrap();
        let grid = VoltageGrid::new(2.0, 3.6, 5).unwrap();
        let out = resample_cycle(&cycle, &grid, ResampleMethod::Linear).unwrap();
        assert_eq!(out[4], 0.1);
        assert_eq!(out[0], 1.0);
    }

    #[test]
    fn duplicate_voltages_use_median() {
        let cycle = CyclePoints::new(
            1,
            vec![3.0, 3.0, 3.0, 2.0, 2.5, 3.5],
            vec![0.5, 0.4, 0.9, 1.0, 0.8, 0.1],
        )
        .unwrap();
        let knots = prepare_knots(&cycle).unwrap();
        assert_eq!(knots.voltage, vec![2.0, 2.5, 3.0, 3.5]);
        assert_eq!(knots.capacity, vec![1.0, 0.8, 0.5, 0.1]);
    }

    #[test]
    fn too_few_points() {
        let cycle = CyclePoints::new(1, vec![3.0, 3.0, 2.0, 2.5], vec![0.1; 4]).unwrap();
        assert!(matches!(
            prepare_knots(&cycle),
            Err(Error::TooFewPoints { needed: 4, got: 3 })
        ));
    }

    #[test]
    fn antitonic_pools_violators() {
        assert_eq!(antitonic(&[3.0, 1.0, 2.0, 0.0]), vec![3.0, 1.5, 1.5, 0.0]);
        assert_eq!(antitonic(&[1.0, 2.0]), vec![1.5, 1.5]);
        let already = [5.0, 4.0, 4.0, 1.0];
        assert_eq!(antitonic(&already), already.to_vec());
    }

    #[test]
    fn spline_tracks_smooth_curve() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let v: Vec<f64> = (0..400).map(|i| 2.0 + 1.6 * i as f64 / 399.0).collect();
        let truth = |x: f64| 1.1 * (3.6 - x) / 1.6 + 0.02 * (6.0 * x).sin();
        let q: Vec<f64> = v.iter().map(|&x| truth(x) + 1e-3 * (rng.random::<f64>() - 0.5)).collect();
        let cycle = CyclePoints::new(1, v, q).unwrap();
        let grid = VoltageGrid::new(2.0, 3.6, 101).unwrap();
        let out = resample_cycle(&cycle, &grid, ResampleMethod::SmoothingSpline).unwrap();
        let max_err = grid
            .values()
            .iter()
            .zip(&out)
            .map(|(x, y)| (y - truth(*x)).abs())
            .fold(0.0, f64::max);
        assert!(max_err < 1e-3, "max error {max_err}");
        assert!(is_non_increasing(&out));
    }
}
