//! `aos`: offline minimum-time quadrotor planning from JSON configs.

mod analyze;
mod bench;
mod config;
mod error;
mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use aos_core::solver::plan;
use clap::{Args, Parser, Subcommand};

use config::{read_json, AnalyzeConfig, Model, PlanConfig, Pieces};
use error::CliError;

#[derive(Parser)]
#[command(name = "aos", version, about = "Minimum-time quadrotor trajectory planning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Plan a flight and write solution.json, pieces.json and trajectory.csv.
    Plan(PlanArgs),
    /// Plan through waypoints; also writes waypoint_hits.json.
    Race(PlanArgs),
    /// Shoot one extremal and report its switching structure.
    Analyze {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a benchmark suite and write CSV, JSON and plot data.
    Bench {
        #[arg(long, value_enum)]
        suite: bench::Suite,
        #[arg(long)]
        out: PathBuf,
        /// Seed for the random suite.
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
}

#[derive(Args)]
struct PlanArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    sample_dt: Option<f64>,
    /// Pieces per segment: a positive integer or `auto`.
    #[arg(long)]
    pieces: Option<Pieces>,
    #[arg(long, value_enum)]
    model: Option<Model>,
}

fn load(args: &PlanArgs) -> Result<PlanConfig, CliError> {
    let mut cfg: PlanConfig = read_json(&args.config)?;
    if let Some(dt) = args.sample_dt {
        cfg.sample_dt = dt;
    }
    if let Some(p) = args.pieces {
        cfg.pieces = p;
    }
    if let Some(m) = args.model {
        cfg.model = m;
    }
    Ok(cfg)
}

fn run_plan(args: &PlanArgs, race: bool) -> Result<(), CliError> {
    let cfg = load(args)?;
    if race && cfg.waypoints.is_empty() {
        return Err(CliError::Config("waypoints: race needs at least one waypoint".into()));
    }
    let problem = cfg.problem()?;
    let opts = cfg.options()?;
    let sol = match plan(&problem, &opts) {
        Ok(sol) => sol,
        Err(e @ aos_core::Error::InfeasibleBoundary(_)) => return Err(CliError::Config(format!("start/end: {e}"))),
        Err(e) => {
            write_failure(&args.out, &e.to_string())?;
            return Err(CliError::NotConverged(e.to_string()));
        }
    };
    let wps = race.then_some(problem.waypoints.as_slice());
    output::write_solution(&args.out, &sol, &problem.params, cfg.sample_dt, wps)?;
    if !sol.is_success(opts.feas_tol) {
        return Err(CliError::NotConverged(format!(
            "max violation {:.3e} after {} iterations; diagnostics written to {}",
            sol.max_violation,
            sol.iterations,
            args.out.display()
        )));
    }
    println!(
        "total_time {} s, {} pieces per segment, max violation {:.2e}",
        output::sig9(sol.total_time),
        sol.pieces_per_segment,
        sol.max_violation
    );
    Ok(())
}

fn write_failure(dir: &Path, message: &str) -> Result<(), CliError> {
    output::ensure_dir(dir)?;
    output::write_json(dir.join("solution.json"), &serde_json::json!({ "converged": false, "error": message }))
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Plan(args) => run_plan(&args, false),
        Command::Race(args) => run_plan(&args, true),
        Command::Analyze { config, out } => {
            let cfg: AnalyzeConfig = read_json(&config)?;
            let r = analyze::run(&cfg, &out)?;
            println!(
                "thrust {} | rate {} | flat {} | bounds ok {}",
                r.structure.thrust_structure, r.structure.rate_structure, r.is_flat, r.structure.theorem_bounds_ok
            );
            Ok(())
        }
        Command::Bench { suite, out, seed } => {
            let report = bench::run(suite, seed, &out)?;
            let ok = report.rows.iter().filter(|r| r.converged).count();
            println!("{}: {ok}/{} converged", report.suite, report.rows.len());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("aos: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
