use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use gffloops::experiment::{gate_lines, run_experiment, ConfigInput, ExperimentConfig, ExperimentId, Profile};
use gffloops::selftest::run_selftest;

#[derive(Parser)]
#[command(name = "gffloops", version, about = "GFF interface loops against their Brownian laws")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one experiment and write samples.csv, summary.json and manifest.json.
    Run(RunArgs),
    /// Reduced property suite; exits nonzero naming the first failing check.
    Selftest {
        /// Geometry fixture file to load instead of the built-in one.
        #[arg(long)]
        fixtures: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    /// TOML file with the same keys as the flags; flags win.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    experiment: Option<ExperimentId>,
    #[arg(long, value_enum)]
    profile: Option<Profile>,
    #[arg(long)]
    mesh: Option<usize>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    reference_samples: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, allow_hyphen_values = true)]
    a: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    b: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    v: Option<f64>,
    #[arg(long, alias = "r")]
    inner_radius: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn run(args: RunArgs) -> gffloops::Result<bool> {
    let base = match &args.config {
        Some(p) => ConfigInput::from_toml(&std::fs::read_to_string(p)?)?,
        None => ConfigInput::default(),
    };
    let flags = ConfigInput {
        experiment: args.experiment,
        profile: args.profile,
        mesh: args.mesh,
        samples: args.samples,
        reference_samples: args.reference_samples,
        seed: args.seed,
        a: args.a,
        b: args.b,
        v: args.v,
        inner_radius: args.inner_radius,
        out: args.out,
    };
    let cfg = ExperimentConfig::resolve(base.merge(flags))?;
    let outcome = run_experiment(&cfg)?;
    print!("{}", gate_lines(&outcome.summary));
    println!("outputs in {}", cfg.out.display());
    Ok(outcome.summary.pass)
}

fn selftest(fixtures: Option<PathBuf>) -> gffloops::Result<bool> {
    let text = fixtures.map(std::fs::read_to_string).transpose()?;
    let checks = run_selftest(text.as_deref())?;
    for c in &checks {
        println!("{} {} (deviation {:.3e}, tolerance {:.1e})", if c.pass { "PASS" } else { "FAIL" }, c.name, c.deviation, c.tolerance);
    }
    match checks.iter().find(|c| !c.pass) {
        Some(c) => {
            eprintln!("selftest failed: {}", c.name);
            Ok(false)
        }
        None => Ok(true),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.cmd {
        Cmd::Run(a) => run(a),
        Cmd::Selftest { fixtures } => selftest(fixtures),
    };
    match res {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
