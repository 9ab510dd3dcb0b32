//! `scmpc` — run predictions, closed-loop simulations and latency benchmarks
//! from a JSON experiment config.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use scmpc::sim::{
    bench, run_closed_loop, run_prediction, write_csv, write_jsonl, write_predictions_csv, write_predictions_jsonl,
    ExperimentConfig, RunStatus,
};

#[derive(Debug, Parser)]
#[command(name = "scmpc", version, about = "Interaction-aware prediction and scenario-based MPC on highway scenes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Filter-only run: mode probabilities, predictions and scenarios.
    Predict(RunArgs),
    /// Closed-loop simulation.
    Simulate(RunArgs),
    /// Per-step latency over randomized braking scenes.
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Jsonl,
    Csv,
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory, created if missing.
    #[arg(long, default_value = "runs")]
    out: PathBuf,
    /// Overrides the seed of the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Per-step log format.
    #[arg(long, value_enum, default_value_t = Format::Jsonl)]
    format: Format,
    /// Re-check the shifted previous worst-case plan at every control step.
    #[arg(long)]
    verify_feasibility: bool,
}

#[derive(Debug, Args)]
struct BenchArgs {
    /// Config whose parameters the scenes use; defaults otherwise.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Writes `bench.json` into this directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed of the first scene; scene `i` uses `seed + i`.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Number of scenes.
    #[arg(long, default_value_t = 100)]
    scenes: usize,
    #[arg(long)]
    verify_feasibility: bool,
}

/// Failure of a subcommand: bad input (exit 1, with usage) or a run that
/// aborted on a collision or infeasibility (exit 3).
enum Failure {
    Usage(String),
    Aborted(String),
}

impl From<scmpc::Error> for Failure {
    fn from(e: scmpc::Error) -> Self {
        Failure::Usage(e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Usage(e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Usage(e.to_string())
    }
}

fn load(path: &Path, seed: Option<u64>, verify: bool) -> Result<ExperimentConfig, Failure> {
    let mut cfg = ExperimentConfig::load(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.verify_feasibility |= verify;
    Ok(cfg)
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>, Failure> {
    std::fs::create_dir_all(dir)?;
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn predict(args: &RunArgs) -> Result<(), Failure> {
    let cfg = load(&args.config, args.seed, args.verify_feasibility)?;
    let logs = run_prediction(&cfg)?;
    match args.format {
        Format::Jsonl => write_predictions_jsonl(create(&args.out, "predictions.jsonl")?, &logs)?,
        Format::Csv => write_predictions_csv(create(&args.out, "predictions.csv")?, &logs)?,
    }
    println!("{}: {} prediction steps written to {}", cfg.name, logs.len(), args.out.display());
    Ok(())
}

fn simulate(args: &RunArgs) -> Result<(), Failure> {
    let cfg = load(&args.config, args.seed, args.verify_feasibility)?;
    let out = run_closed_loop(&cfg)?;
    match args.format {
        Format::Jsonl => write_jsonl(create(&args.out, "steps.jsonl")?, &out.steps)?,
        Format::Csv => write_csv(create(&args.out, "steps.csv")?, &out.steps)?,
    }
    serde_json::to_writer_pretty(create(&args.out, "summary.json")?, &out.summary)?;
    let s = &out.summary;
    println!(
        "{}: {:?} after {:.2} s, {} control steps, final lane {}, step time p50 {:.2} ms / p95 {:.2} ms",
        s.name, s.status, s.simulated_time, s.control_steps, s.final_lane, s.step_time.p50_ms, s.step_time.p95_ms
    );
    if cfg.verify_feasibility {
        println!("shift checks: {}/{} passed", s.shift_checks.passed, s.shift_checks.checked);
    }
    match s.status {
        RunStatus::Completed => Ok(()),
        RunStatus::Collision { id, time } => Err(Failure::Aborted(format!("collision with vehicle {id} at t = {time:.2} s"))),
        RunStatus::Infeasible { time } => {
            Err(Failure::Aborted(format!("no feasible control mode at t = {time:.2} s after a feasible start")))
        }
    }
}

fn run_bench(args: &BenchArgs) -> Result<(), Failure> {
    let base = match &args.config {
        Some(p) => load(p, None, args.verify_feasibility)?,
        None => ExperimentConfig { verify_feasibility: args.verify_feasibility, ..ExperimentConfig::default() },
    };
    let r = bench(&base, args.seed, args.scenes)?;
    println!("scenes {} (seeds {}..{}), parallel {}", r.scenes, r.seed, r.seed + r.scenes as u64, r.parallel);
    println!("control steps {}, mean horizon {:.1}, max scenarios {}", r.step.samples, r.mean_horizon, r.max_scenarios);
    for (name, t) in [("step", &r.step), ("filter", &r.filter), ("scenarios", &r.scenarios), ("control", &r.control)] {
        println!("{name:>9}: p50 {:8.3} ms  p95 {:8.3} ms  max {:8.3} ms", t.p50_ms, t.p95_ms, t.max_ms);
    }
    println!("incidents {}", r.incidents);
    if let Some(dir) = &args.out {
        serde_json::to_writer_pretty(create(dir, "bench.json")?, &r)?;
    }
    if r.incidents > 0 {
        return Err(Failure::Aborted(format!("{} scenes ended in a collision or infeasibility", r.incidents)));
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let (result, name) = match &cli.command {
        Command::Predict(a) => (predict(a), "predict"),
        Command::Simulate(a) => (simulate(a), "simulate"),
        Command::Bench(a) => (run_bench(a), "bench"),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}\n");
            let mut cmd = Cli::command();
            cmd.build();
            let usage = cmd.find_subcommand_mut(name).map(|c| c.render_usage().to_string()).unwrap_or_default();
            eprintln!("{usage}\n\nFor more information, try '--help'.");
            ExitCode::from(1)
        }
        Err(Failure::Aborted(msg)) => {
            eprintln!("run aborted: {msg}");
            ExitCode::from(3)
        }
    }
}
