use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use pslab::lab::{run_and_write, Experiment, ExperimentConfig, RunOptions};

#[derive(Parser)]
#[command(name = "pslab", version, about = "Perturbation-expansion lab for the Markov-modulated M/M/1 queue")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Standard-queue moment suite against the closed forms.
    ValidateBaseline(Common),
    /// Every expansion coefficient with its standard error.
    Coeffs(Common),
    /// Brute-force sweep over the eps grid with polynomial fits.
    EpsSweep(Common),
    /// Bit-rate gap coefficient across environment time scales.
    FastSlow(Common),
    /// Sign-restricted cases, hitting probabilities and the small-alpha arbitration.
    SpecialCases(Common),
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the config replication count.
    #[arg(long)]
    replications: Option<u64>,
    /// Primary CSV output; extra tables go next to it.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; 0 uses every core. Results do not depend on it.
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Writes an event trace of the first replications.
    #[arg(long)]
    trace: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (exp, args) = match cli.command {
        Command::ValidateBaseline(a) => (Experiment::ValidateBaseline, a),
        Command::Coeffs(a) => (Experiment::Coeffs, a),
        Command::EpsSweep(a) => (Experiment::EpsSweep, a),
        Command::FastSlow(a) => (Experiment::FastSlow, a),
        Command::SpecialCases(a) => (Experiment::SpecialCases, a),
    };
    let run = || -> pslab::Result<_> {
        let (raw, text) = ExperimentConfig::load(&args.config)?;
        let cfg = raw.validate(&text)?.with_overrides(args.seed, args.replications)?;
        let opts = RunOptions { out: args.out.clone(), workers: args.workers, trace: args.trace.clone() };
        run_and_write(exp, &cfg, &opts)
    };
    match run() {
        Err(e) => {
            eprintln!("ERROR\t{e}");
            ExitCode::from(2)
        }
        Ok((report, paths)) => {
            for line in &report.notes {
                println!("{line}");
            }
            for g in &report.gates {
                println!("{} {} ({})", if g.passed { "PASS" } else { "FAIL" }, g.name, g.criterion);
            }
            for p in &paths {
                println!("wrote {}", p.display());
            }
            if report.passed() {
                ExitCode::SUCCESS
            } else {
                for g in report.failures() {
                    eprintln!("{}", g.failure_line());
                }
                ExitCode::from(1)
            }
        }
    }
}
