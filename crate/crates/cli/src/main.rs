use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use gwhi_cli::{Error, Overrides, Pipeline, RunConfig, Stage};
use gwhi_core::features::SpMethod;
use gwhi_models::ModelKind;

/// Health-indicator extraction pipeline for run-to-failure waveform datasets.
#[derive(Debug, Parser)]
#[command(name = "gwhi", version)]
struct Cli {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Comma-separated stages: generate, extract, rank, train, fuse, evaluate, report or all.
    #[arg(long, value_delimiter = ',', default_value = "all")]
    stage: Vec<String>,
    /// Worker threads (0 = all cores).
    #[arg(long)]
    jobs: Option<usize>,
    /// Comma-separated seeds, e.g. 0,1,2,3,4.
    #[arg(long, value_delimiter = ',')]
    seed_list: Option<Vec<u64>>,
    /// deepsad or dtcvae.
    #[arg(long)]
    model: Option<String>,
    /// raw, fft, ht, emd or stft.
    #[arg(long)]
    sp: Option<String>,
    /// Comma-separated excitation frequencies in kHz.
    #[arg(long, value_delimiter = ',')]
    freqs: Option<Vec<u32>>,
    /// Comma-separated test specimens of the folds to run.
    #[arg(long, value_delimiter = ',')]
    fold: Option<Vec<u32>>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn run(cli: Cli) -> Result<(), Error> {
    let mut cfg = RunConfig::load(&cli.config)?;
    let model = cli
        .model
        .as_deref()
        .map(str::parse::<ModelKind>)
        .transpose()
        .map_err(|e| Error::validation(e.to_string()))?;
    let sp_method = cli
        .sp
        .as_deref()
        .map(str::parse::<SpMethod>)
        .transpose()
        .map_err(|e| Error::validation(e.to_string()))?;
    cfg.apply(Overrides {
        model,
        sp_method,
        frequencies: cli.freqs,
        folds: cli.fold,
        seeds: cli.seed_list,
        jobs: cli.jobs,
        out: cli.out,
    })?;
    let pipeline = Pipeline::new(cfg)?;
    if cli.stage.iter().any(|s| s == "all") {
        pipeline.run_all()
    } else {
        let stages = cli.stage.iter().map(|s| s.parse::<Stage>()).collect::<Result<Vec<_>, _>>()?;
        pipeline.run(&stages)
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
