use std::path::PathBuf;
use std::process::ExitCode;

use capmatrix_core::eval::TargetSpace;
use capmatrix_core::features::Transform;
use capmatrix_experiments::runs::{
    downsample, element, ingest, matrices, multivariate, negative, percentile, synth, table2, univariate,
};
use capmatrix_experiments::{Context, ExperimentConfig, ExperimentError, Result};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "capmatrix", version, about = "Cycle-life models from capacity-matrix features")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON experiment config.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Run seed; overrides the config (and the synthetic scenario's seed).
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand, Clone, Copy, Debug)]
enum Command {
    /// Load the dataset and report split counts and cycle lives.
    Ingest,
    /// Write raw and normalized capacity matrices.
    Matrices,
    /// RMSE of the log10(var) model vs. ΔQ point count.
    DownsampleSweep,
    /// Statistic × transform grids (log10 target, raw target, cycle-averaged ΔQ).
    UnivariateGrid,
    /// log10 percentile-range models over all percentile pairs.
    PercentileSweep,
    /// One model per ΔQ element.
    ElementSweep,
    /// Ridge, elastic net, PCR, PLSR and random forest on ΔQ elements.
    Multivariate,
    /// Slice-trend, full-matrix and multi-statistic models.
    NegativeResults,
    /// Consolidated RMSE table.
    Table2,
    /// Generate a synthetic dataset with ground truth.
    Synth,
}

fn run(cli: &Cli) -> Result<()> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| ExperimentError::InvalidConfig("--config <path> is required".into()))?;
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(out) = &cli.out {
        cfg.output_dir = out.clone();
    }
    if let Some(seed) = cli.seed {
        cfg = cfg.with_seed(seed);
    }
    if let Command::Synth = cli.command {
        let (data, manifest) = synth::run_synth(&cfg)?;
        println!("{} cells, manifest {}", data.cells.len(), manifest.display());
        return Ok(());
    }
    let ctx = Context::load(cfg)?;
    match cli.command {
        Command::Ingest => {
            let s = ingest::run_ingest(&ctx)?;
            println!("{} cells {:?}, {} outlier(s)", s.n_cells, s.split_counts, s.n_outliers);
        }
        Command::Matrices => {
            let skipped = matrices::run_matrices(&ctx)?;
            println!("matrices written; {} skipped", skipped.len());
        }
        Command::DownsampleSweep => {
            downsample::run_downsample_sweep(&ctx)?;
        }
        Command::UnivariateGrid => {
            univariate::run_univariate_grid(&ctx, TargetSpace::Log10Cycles, false)?;
            univariate::run_univariate_grid(&ctx, TargetSpace::Cycles, false)?;
            univariate::run_univariate_grid(&ctx, TargetSpace::Log10Cycles, true)?;
        }
        Command::PercentileSweep => {
            let s = percentile::run_percentile_sweep(&ctx)?;
            println!(
                "train optimum ({}, {}): {:?}",
                s.train_optimum.lower_pct, s.train_optimum.upper_pct, s.train_optimum.rmse
            );
        }
        Command::ElementSweep => {
            let s = element::run_element_sweep(&ctx, &Transform::ALL)?;
            if let Some(o) = s.train_optimum_log10 {
                println!("log10 train optimum at {} V: {:?}", o.voltage_v, o.rmse);
            }
        }
        Command::Multivariate => {
            for averaged in [false, true] {
                let r = multivariate::run_multivariate(&ctx, averaged)?;
                for rep in r.reports() {
                    println!("{}{}: {:?}", rep.model_name, if averaged { " (averaged)" } else { "" }, rep.per_split.iter().map(|(s, m)| (s.as_str(), m.rmse_cycles)).collect::<Vec<_>>());
                }
            }
        }
        Command::NegativeResults => {
            let r = negative::run_negative_results(&ctx)?;
            for f in [&r.slice, &r.full_matrix, &r.multi_statistic] {
                println!("{}: {:?}", f.name, f.fit.per_split_rmse);
            }
        }
        Command::Table2 => {
            let t = table2::run_table2(&ctx)?;
            for row in &t.rows {
                println!("{}: {:?}", row.model, row.rmse);
            }
        }
        Command::Synth => unreachable!("handled above"),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // variants already carry their source in the message
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
