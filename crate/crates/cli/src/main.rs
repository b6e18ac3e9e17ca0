use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use coaglab::config::{ConfigError, ExperimentConfig};
use coaglab::experiments::{
    run_convergence, run_fourier_l2, run_gap, run_inequalities, run_moment_creation, ExperimentError, Report,
};

#[derive(Parser)]
#[command(name = "coaglab", version, about = "Constant-kernel coagulation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evolve a datum and track weighted distances, moments and entropy.
    Simulate(Common),
    /// Compare against the closed-form Fourier transform and fit L2 decay.
    Fourier(Common),
    /// Moment oracles and creation of exponential moments.
    Moments(Common),
    /// Rayleigh quotients and semigroup decay of the linearized operator.
    Gap(Common),
    /// Functional inequalities on a seeded corpus.
    Inequalities(Common),
    /// Every experiment, one subdirectory each.
    All(Common),
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (`key = value` lines).
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Output directory; overrides `output.dir`.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Worker threads for corpus sweeps.
    #[arg(long, value_name = "N", value_parser = clap::value_parser!(u64).range(1..))]
    jobs: Option<u64>,
    /// Corpus seed; overrides `seed`.
    #[arg(long, value_name = "U64")]
    seed: Option<u64>,
}

const EXPERIMENTS: [&str; 5] = ["simulate", "fourier", "moments", "gap", "inequalities"];

fn run_one(name: &str, cfg: &ExperimentConfig, jobs: usize) -> Result<Report, ExperimentError> {
    match name {
        "simulate" => run_convergence(cfg),
        "fourier" => run_fourier_l2(cfg),
        "moments" => run_moment_creation(cfg),
        "gap" => run_gap(cfg, jobs),
        "inequalities" => run_inequalities(cfg, jobs),
        _ => unreachable!("unknown experiment {name}"),
    }
}

fn finish(reports: &[(&str, Report)], out: &Path) -> Result<bool, ExperimentError> {
    let mut failed = Vec::new();
    for (name, report) in reports {
        let dir = if reports.len() == 1 { out.to_path_buf() } else { out.join(name) };
        report.write(&dir)?;
        print!("{}", report.summary());
        failed.extend(report.failures().map(|c| format!("{name}/{}", c.name)));
    }
    if reports.len() > 1 {
        let mut s = String::new();
        for (name, report) in reports {
            let n = report.failures().count();
            s.push_str(&format!("{} {name}: {} checks, {n} failed\n", if n == 0 { "PASS" } else { "FAIL" }, report.checks.len()));
        }
        std::fs::write(out.join("summary.txt"), &s)?;
        print!("{s}");
    }
    if failed.is_empty() {
        Ok(true)
    } else {
        eprintln!("failed checks: {}", failed.join(", "));
        Ok(false)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (names, common): (Vec<&str>, Common) = match cli.command {
        Command::Simulate(c) => (vec!["simulate"], c),
        Command::Fourier(c) => (vec!["fourier"], c),
        Command::Moments(c) => (vec!["moments"], c),
        Command::Gap(c) => (vec!["gap"], c),
        Command::Inequalities(c) => (vec!["inequalities"], c),
        Command::All(c) => (EXPERIMENTS.to_vec(), c),
    };
    let mut cfg = match ExperimentConfig::from_path(&common.config) {
        Ok(cfg) => cfg,
        Err(e @ ConfigError::Io { .. }) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
        Err(e) => {
            eprintln!("error: {}: {e}", common.config.display());
            return ExitCode::from(2);
        }
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    let out = common.out.unwrap_or_else(|| cfg.out.clone());
    let jobs = common
        .jobs
        .map(|j| j as usize)
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1));

    let mut reports = Vec::new();
    for name in names {
        match run_one(name, &cfg, jobs) {
            Ok(r) => reports.push((name, r)),
            Err(e) => {
                eprintln!("error: {name}: {e}");
                return ExitCode::FAILURE;
            }
        }
    }
    match finish(&reports, &out) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: writing {}: {e}", out.display());
            ExitCode::FAILURE
        }
    }
}
