//! `tdlab`: solve, simulate and bound policy evaluation problems from JSON specs.
//!
//! Exit codes: 0 on success, 1 when the input is invalid, 2 when a computation
//! fails (including every run of an algorithm diverging).

mod overrides;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::Value;

use tdlab::harness::{
    bound_report, example2_spec, mixing_report, run_experiment_with, solve_report, Execution, ExperimentSpec, Problem,
    DEFAULT_DISCOUNT,
};

use overrides::UsageError;

const OUTPUT_DIR_ENV: &str = "TDLAB_OUTPUT_DIR";

#[derive(Parser, Debug)]
#[command(name = "tdlab", version, about = "Policy evaluation with TD(0), averaged TD(0) and centered TD")]
struct Cli {
    /// More log output (repeat for debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct SpecArgs {
    /// Experiment spec (JSON).
    spec: PathBuf,

    /// Replace a spec field before validation, e.g. `n_runs=1` or `problem.seed=3`.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    /// Output file. Defaults to a file in $TDLAB_OUTPUT_DIR if set, else stdout.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve the projected Bellman equation: theta*, V, mu, A, b.
    Solve(SpecArgs),
    /// Run the configured estimators and write the aggregated error trace (CSV).
    Run {
        #[command(flatten)]
        args: SpecArgs,
        /// Execute runs one after another instead of on the thread pool.
        #[arg(long)]
        serial: bool,
    },
    /// Report every bound constant and the step-size admissibility margins.
    Bounds(SpecArgs),
    /// Report the mixing rate, geometric constant and per-state mixing sums.
    Mixing(SpecArgs),
    /// Emit a ready-to-run spec for one of the built-in problems.
    Gen {
        #[arg(value_enum)]
        example: Example,
        #[arg(long, default_value_t = 100)]
        n_states: usize,
        #[arg(long, default_value_t = 3)]
        d: usize,
        /// Seed of the random chain and features.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = DEFAULT_DISCOUNT)]
        discount: f64,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum Example {
    Example1,
    Example2,
}

fn load_spec(args: &SpecArgs) -> Result<ExperimentSpec> {
    let text = std::fs::read_to_string(&args.spec)
        .map_err(|e| UsageError(format!("cannot read spec {}: {e}", args.spec.display())))?;
    let mut value: Value = serde_json::from_str(&text)
        .map_err(|e| UsageError(format!("{}: invalid JSON: {e}", args.spec.display())))?;
    overrides::check_keys(&value)?;
    for o in &args.overrides {
        overrides::apply(&mut value, o)?;
    }
    let mut spec: ExperimentSpec =
        serde_json::from_value(value).map_err(|e| UsageError(format!("{}: {e}", args.spec.display())))?;
    spec.resolve_paths(args.spec.parent().unwrap_or(Path::new(".")));
    spec.validate()?;
    Ok(spec)
}

/// Explicit path, else `$TDLAB_OUTPUT_DIR/<default_name>`, else stdout (`None`).
fn output_target(explicit: Option<&Path>, default_name: &str) -> Option<PathBuf> {
    explicit.map(Path::to_path_buf).or_else(|| {
        std::env::var_os(OUTPUT_DIR_ENV)
            .filter(|d| !d.is_empty())
            .map(|d| PathBuf::from(d).join(default_name))
    })
}

fn create_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(())
}

fn emit_json<T: Serialize>(value: &T, target: Option<PathBuf>) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match target {
        Some(path) => {
            create_parent(&path)?;
            std::fs::write(&path, text + "\n").with_context(|| format!("writing {}", path.display()))?;
            log::info!("wrote {}", path.display());
        }
        None => {
            let mut out = std::io::stdout().lock();
            writeln!(out, "{text}")?;
        }
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Solve(args) => {
            let spec = load_spec(&args)?;
            let problem = Problem::from_spec(&spec)?;
            emit_json(&solve_report(&problem), output_target(args.output.as_deref(), "solve.json"))
        }
        Command::Bounds(args) => {
            let spec = load_spec(&args)?;
            let problem = Problem::from_spec(&spec)?;
            emit_json(&bound_report(&spec, &problem)?, output_target(args.output.as_deref(), "bounds.json"))
        }
        Command::Mixing(args) => {
            let spec = load_spec(&args)?;
            let problem = Problem::from_spec(&spec)?;
            emit_json(&mixing_report(&spec, &problem)?, output_target(args.output.as_deref(), "mixing.json"))
        }
        Command::Run { args, serial } => {
            let spec = load_spec(&args)?;
            let execution = if serial { Execution::Serial } else { Execution::Parallel };
            let trace = run_experiment_with(&spec, execution)?;
            let explicit = args.output.clone().or_else(|| spec.output_path.clone());
            match output_target(explicit.as_deref(), "trace.csv") {
                Some(path) => {
                    for written in trace.write_files(&path, spec.dump_runs)? {
                        log::info!("wrote {}", written.display());
                    }
                }
                None => {
                    if spec.dump_runs {
                        log::warn!("dump_runs needs an output file; per-run dump skipped");
                    }
                    trace.write_csv(std::io::stdout().lock())?;
                }
            }
            for alg in &trace.algorithms {
                let finals = alg.mean.last().copied().unwrap_or(f64::NAN);
                log::info!(
                    "{}: final normalized error {finals:.4e} (diverged {}/{})",
                    alg.name,
                    alg.n_diverged(),
                    trace.n_runs
                );
            }
            Ok(())
        }
        Command::Gen { example, n_states, d, seed, discount, output } => {
            let spec = match example {
                Example::Example1 => {
                    let mut spec = ExperimentSpec::example1_default();
                    spec.discount = Some(discount);
                    spec
                }
                Example::Example2 => example2_spec(n_states, d, seed, discount)?,
            };
            let name = match example {
                Example::Example1 => "example1.json",
                Example::Example2 => "example2.json",
            };
            emit_json(&spec, output_target(output.as_deref(), name))
        }
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<UsageError>().is_some() {
        return 1;
    }
    match err.downcast_ref::<tdlab::Error>() {
        Some(e) if e.is_validation() => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
