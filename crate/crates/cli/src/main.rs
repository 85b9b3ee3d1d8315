//! `edar`: synthesize data, train the networks, run and evaluate the
//! event-driven ROI pipeline, and explore the energy model.

mod commands;
mod config;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::Overrides;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] edar_core::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Core(edar_core::Error::Config(_)) => 2,
            CliError::Core(_) => 3,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(e.into())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Core(e.into())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Parser, Debug)]
#[command(name = "edar", version, about = "Event-driven auto-ROI eye segmentation")]
pub struct Cli {
    /// JSON configuration file; flags override its values.
    #[arg(long, global = true)]
    config: Option<std::path::PathBuf>,
    /// Print the effective configuration and exit.
    #[arg(long)]
    print_config: bool,
    #[command(flatten)]
    overrides: Overrides,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render synthetic eye sequences with ground truth.
    Synth(commands::SynthArgs),
    /// Train the segmentation network on full frames.
    TrainSeg(commands::TrainSegArgs),
    /// Train the ROI prediction network.
    TrainRoi(commands::TrainRoiArgs),
    /// Fine-tune the segmentation network on predicted ROI crops.
    Finetune(commands::FinetuneArgs),
    /// Run the pipeline over a frame directory.
    Run(commands::RunArgs),
    /// Score segmentation maps against ground truth.
    Eval(commands::EvalArgs),
    /// Parameter and FLOP accounting.
    Flops(commands::FlopsArgs),
    /// In-sensor mapping energy model.
    Energy(commands::EnergyArgs),
    /// Per-stage timing over a sequence.
    Bench(commands::BenchArgs),
}

fn init_threads() -> CliResult<()> {
    let Ok(v) = std::env::var("EDAR_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Config(format!("EDAR_THREADS must be a positive integer, got `{v}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Config(e.to_string()))
}

fn dispatch(cli: Cli) -> CliResult<()> {
    init_threads()?;
    let cfg = config::load(cli.config.as_deref(), &cli.overrides)?;
    if cli.print_config {
        println!("{}", serde_json::to_string_pretty(&cfg)?);
        return Ok(());
    }
    let Some(command) = cli.command else {
        return Err(CliError::Config("no subcommand given (see --help)".into()));
    };
    match command {
        Command::Synth(a) => commands::synth(&cfg, a),
        Command::TrainSeg(a) => commands::train_seg(&cfg, a),
        Command::TrainRoi(a) => commands::train_roi(&cfg, a),
        Command::Finetune(a) => commands::finetune(&cfg, a),
        Command::Run(a) => commands::run(&cfg, a),
        Command::Eval(a) => commands::eval(a),
        Command::Flops(a) => commands::flops(&cfg, a),
        Command::Energy(a) => commands::energy(a),
        Command::Bench(a) => commands::bench(&cfg, a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
