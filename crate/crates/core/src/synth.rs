//! Synthetic degradation datasets with a known link between ΔQ dispersion
//! and cycle life.
//!
//! Each cell gets a nominal life `L0` from a clipped log-normal. Its ΔQ
//! variance `d` is chosen so that `log10 L0 = a·log10 d + b`, and the recorded
//! life is `round(L0·10^ε)` with `ε ~ N(0, σ)`. Discharge curves for cycles
//! 1..=100 are `Q_base(V) + g(n)·ΔQ(V)` with `g(10) = 0`, `g(100) = 1`, sampled
//! on the grid voltages with additive Gaussian noise. Later cycles carry a
//! coarse noise-free curve whose total capacity follows a quadratic fade
//! reaching the 80% threshold exactly at the recorded life.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::capmatrix::VoltageGrid;
use crate::dataset::{
    write_dataset, CellRecord, CyclePoints, Split, DEFAULT_NOMINAL_CAPACITY_AH, DEFAULT_THRESHOLD_FRACTION,
    FEATURE_CYCLE_MAX, SUSTAINED_RUN,
};
use crate::error::{Error, Result};
use crate::features::stats;

const BASE_CAPACITY_AH: f64 = 1.07;
const SHOULDER_CENTER_V: f64 = 3.2;
const SHOULDER_JITTER_V: f64 = 0.02;
const SHOULDER_WIDTH_V: f64 = 0.04;
const PLATEAU_WIDTH_V: f64 = 0.25;
const PLATEAU_RANGE: std::ops::Range<f64> = 0.8..1.0;
const BUMP_RANGE: std::ops::Range<f64> = 0.7..1.3;
/// Distance kept from the threshold on either side of the crossing.
const TAIL_MARGIN_AH: f64 = 1e-3;
const TAIL_SLOPE_AH: f64 = 1e-4;
const TAIL_VOLTAGES: [f64; 5] = [2.0, 2.4, 2.8, 3.2, 3.6];
const NOISE_FLOOR_DRAWS: usize = 20_000;
/// Stream id reserved for the Monte Carlo noise-floor estimate.
const NOISE_FLOOR_STREAM: u64 = u64::MAX;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeModel {
    /// Broad low-voltage loss plus a Gaussian shoulder near 3.2 V.
    Shoulder,
    /// Cubic in normalized voltage with small per-cell coefficient jitter.
    Polynomial,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthScenario {
    pub n_train: usize,
    pub n_primary_test: usize,
    pub n_secondary_test: usize,
    pub life_median: f64,
    pub life_sigma_ln: f64,
    pub life_min: f64,
    pub life_max: f64,
    /// Slope `a` of log10(cycle life) on log10(ΔQ variance).
    pub link_slope: f64,
    pub link_intercept: f64,
    /// Standard deviation of the log10 link noise.
    pub link_sigma: f64,
    pub measurement_noise_ah: f64,
    pub shape: ShapeModel,
    pub grid: VoltageGrid,
    pub nominal_capacity_ah: f64,
    pub seed: u64,
}

impl Default for SynthScenario {
    fn default() -> Self {
        Self {
            n_train: 40,
            n_primary_test: 40,
            n_secondary_test: 40,
            life_median: 800.0,
            life_sigma_ln: 0.6,
            life_min: 200.0,
            life_max: 3000.0,
            link_slope: -0.5,
            link_intercept: 0.9,
            link_sigma: 0.05,
            measurement_noise_ah: 1e-4,
            shape: ShapeModel::Shoulder,
            grid: VoltageGrid::default(),
            nominal_capacity_ah: DEFAULT_NOMINAL_CAPACITY_AH,
            seed: 0,
        }
    }
}

impl SynthScenario {
    /// Smooth cubic ΔQ curves without measurement noise.
    pub fn polynomial() -> Self {
        Self {
            shape: ShapeModel::Polynomial,
            measurement_noise_ah: 0.0,
            ..Self::default()
        }
    }

    pub fn n_cells(&self) -> usize {
        self.n_train + self.n_primary_test + self.n_secondary_test
    }

    fn split_of(&self, index: usize) -> Split {
        if index < self.n_train {
            Split::Train
        } else if index < self.n_train + self.n_primary_test {
            Split::PrimaryTest
        } else {
            Split::SecondaryTest
        }
    }

    fn threshold(&self) -> f64 {
        DEFAULT_THRESHOLD_FRACTION * self.nominal_capacity_ah
    }

    fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InfeasibleScenario(msg));
        if self.n_cells() == 0 {
            return bad("scenario has no cells".into());
        }
        if !(self.life_median > 0.0) || !(self.life_sigma_ln >= 0.0) {
            return bad("life distribution needs a positive median and non-negative sigma".into());
        }
        let min_life = (FEATURE_CYCLE_MAX + 2) as f64;
        if !(self.life_min >= min_life) || !(self.life_max >= self.life_min) {
            return bad(format!(
                "life bounds [{}, {}] must satisfy {min_life} <= min <= max",
                self.life_min, self.life_max
            ));
        }
        if !(self.link_slope != 0.0 && self.link_slope.is_finite()) || !self.link_intercept.is_finite() {
            return bad("link slope must be finite and nonzero".into());
        }
        if !(self.link_sigma >= 0.0) || !(self.measurement_noise_ah >= 0.0) {
            return bad("noise levels must be non-negative".into());
        }
        if !(self.nominal_capacity_ah > 0.0) {
            return bad("nominal capacity must be positive".into());
        }
        Ok(())
    }

    /// ΔQ variance implied by a nominal life.
    pub fn dispersion_for_life(&self, nominal_life: f64) -> f64 {
        10f64.powf((nominal_life.log10() - self.link_intercept) / self.link_slope)
    }

    /// Nominal life implied by a ΔQ variance.
    pub fn life_for_dispersion(&self, dispersion: f64) -> f64 {
        10f64.powf(self.link_slope * dispersion.log10() + self.link_intercept)
    }
}

/// What was drawn for one cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellTruth {
    pub cell_id: String,
    pub split: Split,
    /// Variance (n−1) of the noise-free ΔQ(100−10) on the grid.
    pub dispersion: f64,
    pub log10_dispersion: f64,
    pub nominal_life: f64,
    pub link_noise: f64,
    pub cycle_life: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub scenario: SynthScenario,
    pub link_slope: f64,
    pub link_intercept: f64,
    pub link_sigma: f64,
    /// RMSE in cycles of the generating model (predicting `nominal_life`)
    /// on each split's cells.
    pub noise_floor: BTreeMap<Split, f64>,
    /// Same, over the primary and secondary test cells together.
    pub noise_floor_test: f64,
    /// Monte Carlo expectation of the generating model's RMSE over the life
    /// distribution.
    pub expected_noise_floor: f64,
    pub cells: Vec<CellTruth>,
}

#[derive(Clone, Debug)]
pub struct SynthDataset {
    pub cells: Vec<CellRecord>,
    pub truth: GroundTruth,
}

fn sigmoid_dec(z: f64) -> f64 {
    1.0 / (1.0 + z.exp())
}

fn base_curve(v: f64) -> f64 {
    BASE_CAPACITY_AH * (0.7 * sigmoid_dec((v - 3.25) / 0.04) + 0.3 * (3.6 - v) / 1.6)
}

fn fade_weight(cycle: u32) -> f64 {
    (cycle as f64 - 10.0) / 90.0
}

/// Unscaled ΔQ(100−10) shape; evaluated anywhere in the voltage range.
#[derive(Clone, Copy, Debug)]
enum Shape {
    Shoulder { plateau: f64, bump: f64, center: f64 },
    Cubic([f64; 4]),
}

impl Shape {
    fn draw(model: ShapeModel, rng: &mut ChaCha8Rng) -> Self {
        match model {
            ShapeModel::Shoulder => Shape::Shoulder {
                plateau: rng.random_range(PLATEAU_RANGE),
                bump: rng.random_range(BUMP_RANGE),
                center: SHOULDER_CENTER_V + rng.random_range(-SHOULDER_JITTER_V..SHOULDER_JITTER_V),
            },
            ShapeModel::Polynomial => {
                let base = [-1.0, 0.9, 0.3, -0.2];
                Shape::Cubic(base.map(|c| c * (1.0 + rng.random_range(-0.05..0.05))))
            }
        }
    }

    fn eval(&self, v: f64, grid: &VoltageGrid) -> f64 {
        match *self {
            Shape::Shoulder { plateau, bump, center } => {
                let z = (v - center) / SHOULDER_WIDTH_V;
                -(plateau * sigmoid_dec((v - 3.3) / PLATEAU_WIDTH_V) + bump * (-0.5 * z * z).exp())
            }
            Shape::Cubic(c) => {
                let u = (v - grid.v_min()) / (grid.v_max() - grid.v_min());
                c[0] + u * (c[1] + u * (c[2] + u * c[3]))
            }
        }
    }
}

struct CellDraw {
    truth: CellTruth,
    record: CellRecord,
}

fn generate_cell(sc: &SynthScenario, index: usize) -> Result<CellDraw> {
    let mut rng = ChaCha8Rng::seed_from_u64(sc.seed);
    rng.set_stream(index as u64);
    let life_dist = LogNormal::new(sc.life_median.ln(), sc.life_sigma_ln)
        .map_err(|e| Error::InfeasibleScenario(e.to_string()))?;
    let nominal_life = life_dist.sample(&mut rng).clamp(sc.life_min, sc.life_max);
    let link_noise = if sc.link_sigma > 0.0 {
        Normal::new(0.0, sc.link_sigma)
            .map_err(|e| Error::InfeasibleScenario(e.to_string()))?
            .sample(&mut rng)
    } else {
        0.0
    };
    let shape = Shape::draw(sc.shape, &mut rng);
    let cell_id = format!("syn{index:04}");
    let split = sc.split_of(index);

    let life_f = (nominal_life * 10f64.powf(link_noise)).round();
    if !(life_f > (FEATURE_CYCLE_MAX + 1) as f64) {
        return Err(Error::InfeasibleScenario(format!(
            "cell {cell_id}: drawn cycle life {life_f} does not exceed cycle {}",
            FEATURE_CYCLE_MAX + 1
        )));
    }
    let cycle_life = life_f as u32;

    let grid = &sc.grid;
    let raw: Vec<f64> = grid.values().iter().map(|&v| shape.eval(v, grid)).collect();
    let dispersion = sc.dispersion_for_life(nominal_life);
    let scale = (dispersion / stats::variance(&raw)?).sqrt();
    let true_q = |v: f64, cycle: u32| base_curve(v) + fade_weight(cycle) * scale * shape.eval(v, grid);

    let noise = Normal::new(0.0, sc.measurement_noise_ah.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::InfeasibleScenario(e.to_string()))?;
    let mut cycles = Vec::new();
    // discharge order: high voltage to low
    let voltages: Vec<f64> = grid.values().iter().rev().copied().collect();
    for n in 1..=FEATURE_CYCLE_MAX {
        let q = voltages
            .iter()
            .map(|&v| {
                let e = if sc.measurement_noise_ah > 0.0 {
                    noise.sample(&mut rng)
                } else {
                    0.0
                };
                true_q(v, n) + e
            })
            .collect();
        cycles.push(CyclePoints::new(n, voltages.clone(), q)?);
    }

    let threshold = sc.threshold();
    let cap_end = true_q(grid.v_min(), FEATURE_CYCLE_MAX);
    if cap_end <= threshold + 2.0 * TAIL_MARGIN_AH {
        return Err(Error::InfeasibleScenario(format!(
            "cell {cell_id}: capacity {cap_end:.4} Ah at cycle {FEATURE_CYCLE_MAX} is already near the threshold"
        )));
    }
    let last_above = cycle_life - 1;
    let span = (last_above - FEATURE_CYCLE_MAX) as f64;
    let tail_voltages: Vec<f64> = TAIL_VOLTAGES.iter().rev().copied().collect();
    for n in FEATURE_CYCLE_MAX + 1..=cycle_life + 2 * SUSTAINED_RUN as u32 {
        let cap = if n <= last_above {
            let t = (n - FEATURE_CYCLE_MAX) as f64 / span;
            cap_end - (cap_end - threshold - TAIL_MARGIN_AH) * t * t
        } else {
            threshold - TAIL_MARGIN_AH - TAIL_SLOPE_AH * (n - cycle_life) as f64
        };
        let ratio = cap / cap_end;
        let q = tail_voltages
            .iter()
            .map(|&v| true_q(v, FEATURE_CYCLE_MAX) * ratio)
            .collect();
        cycles.push(CyclePoints::new(n, tail_voltages.clone(), q)?);
    }

    let record = CellRecord::new(cell_id.clone(), "synth", split, cycles)?
        .with_nominal_capacity(sc.nominal_capacity_ah)
        .with_cycle_life(Some(cycle_life));
    Ok(CellDraw {
        truth: CellTruth {
            cell_id,
            split,
            dispersion,
            log10_dispersion: dispersion.log10(),
            nominal_life,
            link_noise,
            cycle_life,
        },
        record,
    })
}

fn rmse(pairs: impl Iterator<Item = (f64, f64)>) -> f64 {
    let (mut sum, mut n) = (0.0, 0usize);
    for (a, b) in pairs {
        sum += (a - b) * (a - b);
        n += 1;
    }
    if n == 0 {
        f64::NAN
    } else {
        (sum / n as f64).sqrt()
    }
}

fn expected_noise_floor(sc: &SynthScenario) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(sc.seed);
    rng.set_stream(NOISE_FLOOR_STREAM);
    let life_dist = LogNormal::new(sc.life_median.ln(), sc.life_sigma_ln)
        .map_err(|e| Error::InfeasibleScenario(e.to_string()))?;
    let noise = Normal::new(0.0, sc.link_sigma).map_err(|e| Error::InfeasibleScenario(e.to_string()))?;
    Ok(rmse((0..NOISE_FLOOR_DRAWS).map(|_| {
        let l0 = life_dist.sample(&mut rng).clamp(sc.life_min, sc.life_max);
        let life = (l0 * 10f64.powf(noise.sample(&mut rng))).round();
        (l0, life)
    })))
}

/// Draws every cell of the scenario. Cell `i` uses stream `i` of a
/// generator seeded with `scenario.seed`.
pub fn generate(scenario: &SynthScenario) -> Result<SynthDataset> {
    scenario.validate()?;
    let draws: Vec<CellDraw> = (0..scenario.n_cells())
        .into_par_iter()
        .map(|i| generate_cell(scenario, i))
        .collect::<Result<_>>()?;
    let truths: Vec<CellTruth> = draws.iter().map(|d| d.truth.clone()).collect();
    let cells = draws.into_iter().map(|d| d.record).collect();

    let pair = |t: &CellTruth| (t.nominal_life, t.cycle_life as f64);
    let mut noise_floor = BTreeMap::new();
    for split in Split::ALL {
        if truths.iter().any(|t| t.split == split) {
            noise_floor.insert(split, rmse(truths.iter().filter(|t| t.split == split).map(pair)));
        }
    }
    let noise_floor_test = rmse(truths.iter().filter(|t| t.split != Split::Train).map(pair));
    Ok(SynthDataset {
        cells,
        truth: GroundTruth {
            scenario: scenario.clone(),
            link_slope: scenario.link_slope,
            link_intercept: scenario.link_intercept,
            link_sigma: scenario.link_sigma,
            noise_floor,
            noise_floor_test,
            expected_noise_floor: expected_noise_floor(scenario)?,
            cells: truths,
        },
    })
}

/// Writes the per-cell CSVs, the manifest and `ground_truth.json`; returns
/// the manifest path.
pub fn write_synth(dir: &Path, data: &SynthDataset) -> Result<PathBuf> {
    let manifest = write_dataset(dir, &data.cells)?;
    let path = dir.join("ground_truth.json");
    let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::to_writer_pretty(BufWriter::new(file), &data.truth)?;
    Ok(manifest)
}
