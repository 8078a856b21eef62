use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use resilient_fusion::config::{parse_config_with, ExperimentKind, Overrides};
use resilient_fusion::runner;
use resilient_fusion::FusionError;

#[derive(Parser)]
#[command(version, about = "Attack-resilient sensor fusion, detection, isolation and platoon simulation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fuse a simulated sensor stream and audit the error bound.
    FuseDemo(Common),
    /// Windowed attack detection.
    Detect(Common),
    /// Per-instant isolation of attacked sensors.
    Isolate(Common),
    /// Closed-loop platoon simulation with fusion in the loop.
    Platoon(Common),
    /// Repeat the configured experiment over independent trials.
    Montecarlo {
        #[command(flatten)]
        common: Common,
        /// Number of trials (overrides `montecarlo.trials`).
        #[arg(long)]
        trials: Option<usize>,
    },
}

#[derive(Args)]
struct Common {
    /// Scenario file (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Master seed (overrides `seed`).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (overrides `output.dir`; default `out`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Exit with status 1 when any invariant is violated.
    #[arg(long)]
    strict: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (kind, common, trials) = match cli.command {
        Command::FuseDemo(c) => (ExperimentKind::FuseDemo, c, None),
        Command::Detect(c) => (ExperimentKind::Detect, c, None),
        Command::Isolate(c) => (ExperimentKind::Isolate, c, None),
        Command::Platoon(c) => (ExperimentKind::Platoon, c, None),
        Command::Montecarlo { common, trials } => (ExperimentKind::Montecarlo, common, trials),
    };
    let overrides = Overrides { experiment: Some(kind), seed: common.seed, trials, output_dir: common.out.clone() };

    let cfg = match parse_config_with(&common.config, &overrides) {
        Ok(cfg) => cfg,
        Err(FusionError::InvalidConfig(list)) => {
            eprintln!("error: invalid configuration {}:", common.config.display());
            for e in list {
                eprintln!("  - {e}");
            }
            return ExitCode::from(2);
        }
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let dir = cfg.output_dir.clone().unwrap_or_else(|| PathBuf::from("out"));
    let artifacts = match runner::run_to_dir(&cfg, &dir) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(3);
        }
    };

    let violations = artifacts.summary.invariant_violation_count;
    println!("{} run written to {} ({violations} invariant violations)", kind.name(), dir.display());
    for msg in &artifacts.summary.invariant_violations {
        eprintln!("violation: {msg}");
    }
    if common.strict && violations > 0 {
        return ExitCode::from(1);
    }
    ExitCode::SUCCESS
}
