//! `crf-refine`: batch refinement and evaluation of probabilistic
//! segmentations.
//!
//! Sub-commands wrap the library thinly: refine (probability maps to
//! masks), eval (Dice reports and paired comparison), sweep (parameter
//! grid search), synth (fixture corpora), folds (case-level splits),
//! report (re-render an eval JSON), overlay (color-coded disagreement
//! images). Outputs are pure functions of inputs, flags, and seed, byte
//! identical across runs and thread counts.
//!
//! Exit codes: 0 success, 1 data failure (some or all inputs could not be
//! processed), 2 usage or config error.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{CliError, FilterArg};

#[derive(Parser, Debug)]
#[command(
    name = "crf-refine",
    version,
    about = "Dense-CRF refinement and evaluation toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: CommonArgs,
}

/// Flags shared by every sub-command. Values from a `--config` file apply
/// first; any flag given here overrides it.
#[derive(Args, Debug, Clone)]
pub struct CommonArgs {
    /// Case manifest (JSON).
    #[arg(long, global = true)]
    pub manifest: Option<PathBuf>,

    /// JSON config file; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Output directory (refine, synth) or file (eval, sweep, folds, overlay).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    /// Appearance kernel weight.
    #[arg(long, global = true)]
    pub w1: Option<f32>,

    /// Smoothness kernel weight.
    #[arg(long, global = true)]
    pub w2: Option<f32>,

    /// Appearance spatial bandwidth, pixels.
    #[arg(long = "sigma-alpha", global = true)]
    pub sigma_alpha: Option<f32>,

    /// Appearance intensity bandwidth, byte-scale units.
    #[arg(long = "sigma-beta", global = true)]
    pub sigma_beta: Option<f32>,

    /// Smoothness spatial bandwidth, pixels.
    #[arg(long = "sigma-gamma", global = true)]
    pub sigma_gamma: Option<f32>,

    /// Mean-field iteration count.
    #[arg(long, global = true)]
    pub iterations: Option<u32>,

    /// Probability floor applied before the unary log.
    #[arg(long, global = true)]
    pub floor: Option<f32>,

    /// Seed for every stochastic choice (folds, fixtures).
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Worker thread count; defaults to all cores.
    #[arg(long, global = true, env = "CRF_REFINE_THREADS")]
    pub threads: Option<usize>,

    /// Gaussian filtering backend.
    #[arg(long, global = true, value_enum)]
    pub filter: Option<FilterArg>,

    /// Label treated as positive for Dice and overlays.
    #[arg(long = "positive-label", global = true)]
    pub positive_label: Option<u8>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Refine every manifest slice into a label mask.
    Refine(commands::refine::RefineArgs),
    /// Score predictions against manifest truths.
    Eval(commands::eval::EvalArgs),
    /// Rank CRF parameters over a manifest corpus.
    Sweep(commands::sweep::SweepArgs),
    /// Generate a synthetic fixture corpus with a manifest.
    Synth(commands::synth::SynthArgs),
    /// Assign manifest cases to cross-validation folds.
    Folds(commands::folds::FoldsArgs),
    /// Render an eval JSON report as text.
    Report(commands::report::ReportArgs),
    /// Emit a color-coded prediction/truth overlay.
    Overlay(commands::overlay::OverlayArgs),
}

fn install_thread_pool(threads: Option<usize>) -> Result<(), CliError> {
    if let Some(n) = threads {
        if n == 0 {
            return Err(CliError::usage("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::usage(format!("thread pool: {e}")))?;
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<u8, CliError> {
    let cfg = config::RunConfig::resolve(&cli.common)?;
    install_thread_pool(cfg.threads)?;
    match &cli.command {
        Command::Refine(args) => commands::refine::run(&cli.common, &cfg, args),
        Command::Eval(args) => commands::eval::run(&cli.common, &cfg, args),
        Command::Sweep(args) => commands::sweep::run(&cli.common, &cfg, args),
        Command::Synth(args) => commands::synth::run(&cfg, args),
        Command::Folds(args) => commands::folds::run(&cli.common, &cfg, args),
        Command::Report(args) => commands::report::run(args),
        Command::Overlay(args) => commands::overlay::run(&cfg, args),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code())
        }
    }
}
