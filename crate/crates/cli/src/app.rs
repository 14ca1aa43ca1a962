use crate::config::{split_overrides, ExperimentConfig, Subcommand};
use crate::error::{CliError, Result};
use crate::experiments::*;
use crate::output::Artifacts;
use crate::report::ExperimentReport;
use clap::{Args, Parser};
use std::path::{Path, PathBuf};
use std::time::Instant;

/// Exit codes.
pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECKS_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Parser, Debug)]
#[command(name = "dpolab", version, about = "Sampling-quality experiments for DPO in closed-form and enumerable models")]
#[command(after_help = "Any other `--key=value` argument overrides that key of the subcommand's configuration.")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Subcommand, Debug)]
enum Command {
    /// Online DPO sweep over best-of-K sampling and seeds.
    Online(Common),
    /// Identity and sign checks on random enumerable instances.
    TheorySuite(Common),
    /// Well-aligned vs misaligned initial reference.
    ReferenceImpact(Common),
    /// Amplification factors by quadrature, cross-checked by simulation.
    EtaGamma(Common),
    /// One-step likelihood displacement in the Gaussian and featurized discrete models.
    DisplacementDemo(Common),
    /// Closed-form round minimizer, its recursion, and its optimality.
    ClosedForm(Common),
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// INI file; the unnamed section applies to every subcommand, `[name]` to one.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Root seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Use the larger reference-scale defaults.
    #[arg(long)]
    full: bool,
}

impl Command {
    fn split(self) -> (Subcommand, Common) {
        match self {
            Self::Online(c) => (Subcommand::Online, c),
            Self::TheorySuite(c) => (Subcommand::TheorySuite, c),
            Self::ReferenceImpact(c) => (Subcommand::ReferenceImpact, c),
            Self::EtaGamma(c) => (Subcommand::EtaGamma, c),
            Self::DisplacementDemo(c) => (Subcommand::DisplacementDemo, c),
            Self::ClosedForm(c) => (Subcommand::ClosedForm, c),
        }
    }
}

pub struct Outcome {
    pub report: ExperimentReport,
    pub seconds: f64,
}

/// Runs one subcommand and writes its outputs; the report is written even when checks fail.
pub fn execute(cfg: &ExperimentConfig, out_dir: &Path) -> Result<Outcome> {
    let started = Instant::now();
    let mut out = Artifacts::create(out_dir)?;
    let report = match cfg.subcommand() {
        Subcommand::Online => run_online(cfg, &mut out),
        Subcommand::TheorySuite => run_theory_suite(cfg, &mut out),
        Subcommand::ReferenceImpact => run_reference_impact(cfg, &mut out),
        Subcommand::EtaGamma => run_eta_gamma(cfg, &mut out),
        Subcommand::DisplacementDemo => run_displacement_demo(cfg, &mut out),
        Subcommand::ClosedForm => run_closed_form(cfg, &mut out),
    }?;
    out.write("report.json", report.to_json()?.as_bytes())?;
    let seconds = started.elapsed().as_secs_f64();
    out.write_timing(seconds)?;
    out.finish()?;
    Ok(Outcome { report, seconds })
}

fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var("DPOLAB_THREADS") {
        let n: usize = v.trim().parse().map_err(|_| crate::error::usage("DPOLAB_THREADS", format!("not a count: `{v}`")))?;
        // A second initialisation in the same process keeps the first pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

/// Parses `args` (including the program name), runs, and returns the process exit code.
pub fn main_with_args(args: Vec<String>) -> i32 {
    let (rest, overrides) = split_overrides(args);
    let cli = match Cli::try_parse_from(rest) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let (sub, common) = cli.command.split();
    let run = || -> Result<Outcome> {
        configure_threads()?;
        let cfg = ExperimentConfig::resolve(sub, common.config.as_deref(), &overrides, common.seed, common.full)?;
        execute(&cfg, &common.out)
    };
    match run() {
        Ok(outcome) => {
            eprintln!("{sub}: finished in {:.2}s, outputs in {}", outcome.seconds, common.out.display());
            let failing = outcome.report.failing();
            if failing.is_empty() {
                EXIT_OK
            } else {
                for name in failing {
                    eprintln!("check failed: {name}");
                }
                EXIT_CHECKS_FAILED
            }
        }
        Err(e @ CliError::Usage { .. }) => {
            eprintln!("error: {e}");
            EXIT_USAGE
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_RUNTIME
        }
    }
}
