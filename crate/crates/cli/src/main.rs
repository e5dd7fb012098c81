use std::path::PathBuf;
use std::process::ExitCode;

use canopy_cli::{run_all, run_stage, PipelineConfig, Settings, StageError};
use clap::{Parser, Subcommand};

/// Building heights and urban canopy parameters from coarse rasters and footprints.
#[derive(Parser, Debug)]
#[command(name = "canopy", version)]
struct Cli {
    /// Flat `key = value` configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides `out`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed for every random draw (overrides `seed`).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Debug logging.
    #[arg(long, short, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic city and its input files.
    Synth(Overrides),
    /// Grid labeled points into a DSM and a DEM.
    RasterizePoints(Overrides),
    /// Reference nDSM from the fine grids, coarse nDSM from the coarse ones.
    Ndsm(Overrides),
    /// Cubic resampling of coarse inputs and the footprint mask.
    Resample(Overrides),
    /// Normalize and tile the network channels.
    Tile(Overrides),
    /// Train the height network (no-op for the baseline).
    Train(Overrides),
    /// Predict a 1-m nDSM.
    Predict(Overrides),
    /// Per-footprint flat-roof heights.
    Lod1(Overrides),
    /// Gridded canopy parameters for predicted and reference buildings.
    Ucp(Overrides),
    /// Compare predicted and reference canopy parameters.
    Validate(Overrides),
    /// Summary with metrics and checksums.
    Report(Overrides),
    /// Every stage in order.
    Run(Overrides),
    /// List configuration keys and defaults.
    Keys,
}

#[derive(clap::Args, Debug)]
struct Overrides {
    /// Any configuration key as `--key value`.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
    rest: Vec<String>,
}

fn load(cli: &Cli, extra: &[String]) -> Result<PipelineConfig, StageError> {
    let mut settings = match &cli.config {
        Some(p) => Settings::load(p)?,
        None => Settings::default(),
    };
    settings.apply_overrides(extra)?;
    if let Some(out) = &cli.out {
        settings.set("out", &out.to_string_lossy(), None)?;
    }
    if let Some(seed) = cli.seed {
        settings.set("seed", &seed.to_string(), None)?;
    }
    if cli.verbose {
        settings.set("verbose", "true", None)?;
    }
    PipelineConfig::from_settings(&settings)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (stage, extra) = match &cli.command {
        Command::Synth(o) => ("synth", &o.rest),
        Command::RasterizePoints(o) => ("rasterize-points", &o.rest),
        Command::Ndsm(o) => ("ndsm", &o.rest),
        Command::Resample(o) => ("resample", &o.rest),
        Command::Tile(o) => ("tile", &o.rest),
        Command::Train(o) => ("train", &o.rest),
        Command::Predict(o) => ("predict", &o.rest),
        Command::Lod1(o) => ("lod1", &o.rest),
        Command::Ucp(o) => ("ucp", &o.rest),
        Command::Validate(o) => ("validate", &o.rest),
        Command::Report(o) => ("report", &o.rest),
        Command::Run(o) => ("run", &o.rest),
        Command::Keys => {
            for (k, d, doc) in canopy_cli::config::KEYS {
                println!("{k:<22} {d:<12} {doc}");
            }
            return ExitCode::SUCCESS;
        }
    };
    let result = load(&cli, extra).and_then(|cfg| {
        let level = if cfg.verbose { "debug" } else { "info" };
        env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
        if stage == "run" {
            run_all(&cfg)
        } else {
            run_stage(stage, &cfg)
        }
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code as u8)
        }
    }
}
