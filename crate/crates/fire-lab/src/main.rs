//! `fire-lab`: batch experiment runner for FIRE sampling sweeps.
//!
//! Exit codes: 0 success, 2 configuration error, 3 model-source error,
//! 4 checker error, 1 anything else. The remote model's bearer token is
//! read from `FIRE_REMOTE_TOKEN`.

use clap::{Parser, Subcommand, ValueEnum};
use fire_sampling::experiment::{
    compare_report, run_experiment, ExperimentError, PolicyFilter, Report, RunOptions,
};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "fire-lab", version, about = "FIRE sampling experiment runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a TOML config file.
    Run {
        /// Path to the experiment config.
        #[arg(long)]
        config: PathBuf,
        /// Output directory (defaults to the config's `output`, then `out`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Replace the config's base seed.
        #[arg(long)]
        seed_override: Option<u64>,
        /// Which policy rows to run.
        #[arg(long, value_enum, default_value_t = PolicyArg::Both)]
        policy: PolicyArg,
        /// Reuse existing pool files instead of regenerating them.
        #[arg(long)]
        resume: bool,
    },
    /// Compare two report JSON files and print a delta table (B - A).
    Compare {
        report_a: PathBuf,
        report_b: PathBuf,
        /// Also write the delta table as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyArg {
    Regular,
    Fire,
    Both,
}

impl From<PolicyArg> for PolicyFilter {
    fn from(arg: PolicyArg) -> Self {
        match arg {
            PolicyArg::Regular => PolicyFilter::Regular,
            PolicyArg::Fire => PolicyFilter::Fire,
            PolicyArg::Both => PolicyFilter::Both,
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(cause) = source {
                eprintln!("  caused by: {cause}");
                source = cause.source();
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> Result<(), ExperimentError> {
    match cli.command {
        Command::Run {
            config,
            out,
            seed_override,
            policy,
            resume,
        } => {
            let options = RunOptions {
                out_dir: out,
                seed_override,
                policy: policy.into(),
                resume,
            };
            let report = run_experiment(&config, &options)?;
            println!(
                "wrote {} report row(s) over {} problem(s)",
                report.rows.len(),
                report.problems.len()
            );
            Ok(())
        }
        Command::Compare {
            report_a,
            report_b,
            out,
        } => {
            let a = load_report(&report_a)?;
            let b = load_report(&report_b)?;
            let table = compare_report(&a, &b)?;
            print!("{}", table.render());
            if let Some(path) = out {
                let mut json = serde_json::to_string_pretty(&table)
                    .expect("delta table serializes");
                json.push('\n');
                std::fs::write(&path, json).map_err(|e| ExperimentError::io(&path, e))?;
            }
            Ok(())
        }
    }
}

fn load_report(path: &PathBuf) -> Result<Report, ExperimentError> {
    let text = std::fs::read_to_string(path).map_err(|e| ExperimentError::io(path, e))?;
    Report::from_json(&text)
}
