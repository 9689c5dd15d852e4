//! Writes a synthetic dataset and its ground truth.

use std::path::PathBuf;

use capmatrix_core::synth::{generate, write_synth, SynthDataset};

use crate::config::ExperimentConfig;
use crate::error::Result;
use crate::output::ensure_dir;

/// Generates `cfg.synth` into `<output_dir>/synth`; returns the data and the manifest path.
pub fn run_synth(cfg: &ExperimentConfig) -> Result<(SynthDataset, PathBuf)> {
    let dir = ensure_dir(&cfg.output_dir.join("synth"))?;
    let data = generate(&cfg.synth)?;
    let manifest = write_synth(&dir, &data)?;
    log::info!("wrote {} synthetic cells to {}", data.cells.len(), dir.display());
    Ok((data, manifest))
}
