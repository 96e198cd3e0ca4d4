use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use log::info;
use mtef_cli::{compare, estimate_cost, parse_config, run, CompareError, Mode, RunConfig};

/// Ehrenfest-trajectory and exact simulations of spontaneous emission in a
/// one-dimensional cavity.
#[derive(Parser)]
#[command(name = "mtef", version)]
struct Cli {
    /// Configuration file (TOML); omitted keys take their defaults
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads (default: all cores)
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one or both solvers and write the observables
    Run {
        #[arg(long, value_enum, default_value_t = Mode::Mtef)]
        mode: Mode,
        /// Output directory (overrides output.directory)
        #[arg(long)]
        out: Option<PathBuf>,
        /// Master seed (overrides mtef.seed)
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Compare the observables of two run directories; the JSON report goes
    /// to stdout and a table to stderr
    Compare {
        a: PathBuf,
        b: PathBuf,
        /// Exit with status 3 if any deviation exceeds this
        #[arg(long)]
        tolerance: Option<f64>,
    },
    /// Check a configuration and print it with all defaults filled in
    ValidateConfig,
    /// Print basis dimension and trajectory-step counts without running
    EstimateCost,
}

enum Failure {
    Validation(anyhow::Error),
    Runtime(anyhow::Error),
    Mismatch(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Self::Validation(_) => 1,
            Self::Runtime(_) => 2,
            Self::Mismatch(_) => 3,
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<RunConfig, Failure> {
    let text = match path {
        Some(p) => std::fs::read_to_string(p)
            .with_context(|| format!("cannot read configuration {}", p.display()))
            .map_err(Failure::Validation)?,
        None => String::new(),
    };
    parse_config(&text).map_err(|e| Failure::Validation(e.into()))
}

fn execute(cli: Cli) -> Result<(), Failure> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Failure::Validation(anyhow::anyhow!("--threads must be at least 1")));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Runtime(e.into()))?;
    }
    match cli.command {
        Command::Run { mode, out, seed } => {
            let mut config = load_config(cli.config.as_deref())?;
            if let Some(seed) = seed {
                if seed > i64::MAX as u64 {
                    return Err(Failure::Validation(anyhow::anyhow!("--seed must be below 2^63")));
                }
                config.mtef.seed = seed;
            }
            if let Some(out) = &out {
                config.output.directory = out.display().to_string();
            }
            let dir = PathBuf::from(&config.output.directory);
            let runs = run(&config, mode, &dir).map_err(Failure::Runtime)?;
            for r in &runs {
                info!("{}: {:.1} s, {} flagged", r.solver.as_str(), r.wall_time, r.flagged());
            }
            println!("wrote {}", dir.display());
            Ok(())
        }
        Command::Compare { a, b, tolerance } => {
            let report = compare(&a, &b).map_err(|e| match e {
                CompareError::Mismatch(m) => Failure::Mismatch(m),
                other => Failure::Runtime(other.into()),
            })?;
            eprint!("{}", report.summary());
            let json = serde_json::to_string_pretty(&report).map_err(|e| Failure::Runtime(e.into()))?;
            println!("{json}");
            if let Some(tol) = tolerance {
                if report.max_deviation() > tol || report.mask_differences() > 0 {
                    return Err(Failure::Mismatch(format!(
                        "largest deviation {:e} exceeds tolerance {tol:e} ({} mask differences)",
                        report.max_deviation(),
                        report.mask_differences()
                    )));
                }
            }
            Ok(())
        }
        Command::ValidateConfig => {
            let config = load_config(cli.config.as_deref())?;
            print!("{}", config.to_toml());
            Ok(())
        }
        Command::EstimateCost => {
            let config = load_config(cli.config.as_deref())?;
            let cost = estimate_cost(&config).map_err(Failure::Validation)?;
            println!("modes:              {} ({} coupled)", cost.modes, cost.coupled_modes);
            println!("time steps:         {}", cost.time_steps);
            println!("trajectories:       {}", cost.trajectories);
            println!("trajectory-steps:   {}", cost.trajectory_steps);
            println!(
                "exact basis:        {} states ({} the budget of {})",
                cost.exact_dimension,
                if cost.exact_within_budget { "within" } else { "exceeds" },
                cost.exact_memory_budget
            );
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            match &failure {
                Failure::Validation(e) | Failure::Runtime(e) => eprintln!("error: {e:#}"),
                Failure::Mismatch(m) => eprintln!("mismatch: {m}"),
            }
            ExitCode::from(failure.code())
        }
    }
}
