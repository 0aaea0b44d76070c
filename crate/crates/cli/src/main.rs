//! Command-line front end.
//!
//! Each subcommand reads one JSON configuration file, runs one analysis, and
//! writes its artifacts (CSV tables, JSON reports, SVG figures) into an
//! output directory. Every run also writes `report.json`, echoing the fully
//! resolved configuration and listing the artifacts, and `timings.json` with
//! wall-clock phase timings. All artifacts except `timings.json` are
//! byte-identical across re-runs with the same configuration and seed.

mod config;
mod run;

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use emula_core::Error;

#[derive(Parser)]
#[command(
    name = "emula",
    version,
    about = "Trial emulation and causal effect estimation on patient event streams"
)]
struct Cli {
    /// JSON configuration file for the chosen command.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Output directory; created if absent.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Overrides every seed in the configuration file.
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,
    /// Worker threads; defaults to one per core.
    #[arg(long, global = true, value_name = "N")]
    jobs: Option<usize>,
    /// Proceed even when the causal graph rejects the adjustment set.
    #[arg(long, global = true)]
    allow_bad_adjustment: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Subcommand)]
enum Command {
    /// Generate a synthetic scenario with counterfactual ground truth.
    Simulate,
    /// Emulate the target trial and estimate the configured causal effect.
    Estimate,
    /// Re-run estimation over a grid of defensible analytic choices.
    Vibrate,
    /// Sweep the eligibility window to surface immortal-time bias.
    ItbSweep,
    /// Fit a cross-fitted CATE model and summarize subgroup effects.
    Hte,
    /// Contrast outcome models trained with and without post-treatment
    /// features.
    ShortcutDemo,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Estimate => "estimate",
            Command::Vibrate => "vibrate",
            Command::ItbSweep => "itb-sweep",
            Command::Hte => "hte",
            Command::ShortcutDemo => "shortcut-demo",
        }
    }
}

/// Process exit code for a failed run: 2 for configuration and
/// specification problems (including a rejected adjustment set), 3 for an
/// empty cohort, 4 for everything that fails during analysis.
fn exit_code_for(err: &Error) -> i32 {
    match err {
        Error::BadSpec(_)
        | Error::BadProtocol(_)
        | Error::BadConfig(_)
        | Error::CyclicGraph
        | Error::UnknownNode { .. }
        | Error::ReservedNode { .. }
        | Error::AdjustmentRejected { .. }
        | Error::Json(_) => 2,
        Error::EmptyCohort => 3,
        _ => 4,
    }
}

fn dispatch(cli: &Cli) -> emula_core::Result<()> {
    let config_path = cli
        .config
        .as_ref()
        .ok_or_else(|| Error::BadConfig("--config <FILE> is required".into()))?;
    let out = cli
        .out
        .as_ref()
        .ok_or_else(|| Error::BadConfig("--out <DIR> is required".into()))?;
    std::fs::create_dir_all(out)?;
    let ctx = run::Ctx {
        out,
        command: cli.command.name(),
        seed: cli.seed,
        allow_bad_adjustment: cli.allow_bad_adjustment,
    };
    match cli.command {
        Command::Simulate => run::simulate(config::load(config_path)?, &ctx),
        Command::Estimate => run::estimate(config::load(config_path)?, &ctx),
        Command::Vibrate => run::vibrate(config::load(config_path)?, &ctx),
        Command::ItbSweep => run::itb_sweep(config::load(config_path)?, &ctx),
        Command::Hte => run::hte(config::load(config_path)?, &ctx),
        Command::ShortcutDemo => run::shortcut_demo(config::load(config_path)?, &ctx),
    }
}

fn main() {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("EMULA_LOG", "warn")).init();
    if let Some(jobs) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global() {
            log::warn!("could not configure {jobs} worker threads: {e}");
        }
    }
    if let Err(err) = dispatch(&cli) {
        eprintln!("error: {err}");
        std::process::exit(exit_code_for(&err));
    }
}
