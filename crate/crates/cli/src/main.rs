use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use irl_core::artifacts::{write_run, RunStatus};
use irl_core::check::{self, CheckOptions};
use irl_core::config::{Experiment, ExperimentConfig};
use irl_core::IrlError;

mod sweep;

const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERIC: u8 = 3;
const EXIT_ORACLE: u8 = 4;

#[derive(Parser)]
#[command(name = "irlctl", version, about = "Run and inspect IRL tracking experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse a config and check every invariant.
    Validate {
        config: PathBuf,
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Run one experiment and write its artifacts.
    Run {
        config: PathBuf,
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Update law: novel or baseline.
        #[arg(long)]
        law: Option<String>,
        /// Run directory; defaults to the config's output.dir.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the oracle suite.
    Check {
        /// Added to every closed-form penalty, to confirm the identity check fails.
        #[arg(long, default_value_t = 0.0, value_name = "DELTA")]
        perturb_penalty: f64,
        /// Discount used by the constant-integrand quadrature check.
        #[arg(long, default_value_t = 0.1)]
        gamma: f64,
    },
    /// Run the cross-product of a parameter grid in parallel.
    Sweep {
        config: PathBuf,
        /// One axis, e.g. `learner.q2=0.0,0.1`; repeat for more axes.
        #[arg(long = "grid", value_name = "KEY=V1,V2,...", required = true)]
        grid: Vec<String>,
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn exit_code(e: &IrlError) -> u8 {
    match e {
        IrlError::Numeric { .. } | IrlError::NotReady => EXIT_NUMERIC,
        IrlError::Oracle(_) => EXIT_ORACLE,
        _ => EXIT_CONFIG,
    }
}

fn fail(e: &IrlError) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(exit_code(e))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Validate { config, overrides } => validate(&config, &overrides),
        Command::Run {
            config,
            mut overrides,
            law,
            out,
        } => {
            if let Some(law) = law {
                overrides.push(format!("experiment.law=\"{law}\""));
            }
            run(&config, &overrides, out)
        }
        Command::Check { perturb_penalty, gamma } => run_check(perturb_penalty, gamma),
        Command::Sweep {
            config,
            grid,
            overrides,
            out,
        } => sweep::cmd_sweep(&config, &grid, &overrides, out),
    }
}

fn validate(path: &Path, overrides: &[String]) -> ExitCode {
    let cfg = match ExperimentConfig::load(path, overrides) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{}: invalid", path.display());
            return fail(&e);
        }
    };
    let issues = cfg.issues();
    if issues.is_empty() {
        println!("{}: valid", path.display());
        return ExitCode::SUCCESS;
    }
    eprintln!("{}: invalid ({} issue(s))", path.display(), issues.len());
    for e in &issues {
        eprintln!("  - {e}");
    }
    ExitCode::from(EXIT_CONFIG)
}

pub(crate) fn default_out(cfg: &ExperimentConfig) -> PathBuf {
    cfg.output_dir()
        .unwrap_or_else(|| PathBuf::from("runs").join(&cfg.experiment.name))
}

fn run(path: &Path, overrides: &[String], out: Option<PathBuf>) -> ExitCode {
    let cfg = match ExperimentConfig::load(path, overrides) {
        Ok(c) => c,
        Err(e) => return fail(&e),
    };
    let exp = match Experiment::build(&cfg) {
        Ok(e) => e,
        Err(e) => return fail(&e),
    };
    let dir = out.unwrap_or_else(|| default_out(&cfg));
    let oracle = exp.oracle.as_ref().map(|o| o.weights.clone());
    let (tel, status) = match exp.run() {
        Ok(t) => (t, RunStatus::Completed),
        Err(f) => (f.telemetry, RunStatus::Failed(f.error)),
    };
    let written = match write_run(&dir, &cfg, &tel, oracle.as_ref(), &status) {
        Ok(w) => w,
        Err(e) => return fail(&e),
    };
    println!(
        "{} ({}): {} records, {} files in {}",
        cfg.experiment.name,
        tel.law,
        tel.records.len(),
        written.len(),
        dir.display()
    );
    match status {
        RunStatus::Completed => ExitCode::SUCCESS,
        RunStatus::Failed(e) => fail(&e),
    }
}

fn run_check(perturb_penalty: f64, gamma: f64) -> ExitCode {
    let opts = CheckOptions {
        penalty_perturbation: perturb_penalty,
        quadrature_gamma: gamma,
        ..CheckOptions::default()
    };
    let outcomes = check::run_all(&opts);
    for o in &outcomes {
        println!("{}", o.line());
    }
    let failed = outcomes.iter().filter(|o| !o.passed()).count();
    if failed == 0 {
        println!("all {} checks passed", outcomes.len());
        ExitCode::SUCCESS
    } else {
        println!("{failed} of {} checks failed", outcomes.len());
        ExitCode::from(EXIT_ORACLE)
    }
}
