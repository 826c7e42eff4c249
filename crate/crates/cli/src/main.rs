//! Command-line front door: validate scenario files, run simulations,
//! pre-generate workloads and render reports from a run's metrics.
//!
//! Output is a pure function of the arguments and input files; the only
//! randomness is the explicit `--seed`. Exit codes by failure class:
//! 2 usage, 3 scenario schema, 4 runtime.

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use crmsim_core::simkit::{self, Scenario, SimError};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(name = "crmsim", version, about, disable_help_subcommand = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a scenario file without running it.
    Validate {
        #[arg(long)]
        scenario: PathBuf,
    },
    /// Run a scenario and write the event log and metrics.
    Run(RunArgs),
    /// Expand a scenario's generator streams into an explicit workload block.
    GenWorkload {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Write `workload.json` here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Summarize a finished run from its output directory.
    Report {
        /// Directory a `run` wrote its metrics into.
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Independent replicas run in parallel; replica i uses seed + i and
    /// writes to <out>/r<i>.
    #[arg(long, default_value_t = 1)]
    replicas: u32,
    /// Only report errors.
    #[arg(long)]
    quiet: bool,
}

/// A failure annotated with its exit code class.
struct Failure {
    code: i32,
    error: anyhow::Error,
}

fn schema(error: impl Into<anyhow::Error>) -> Failure {
    Failure {
        code: 3,
        error: error.into(),
    }
}

fn runtime(error: impl Into<anyhow::Error>) -> Failure {
    Failure {
        code: 4,
        error: error.into(),
    }
}

fn main() {
    let cli = Cli::parse(); // clap exits 2 on usage errors
    match dispatch(cli) {
        Ok(()) => {}
        Err(failure) => {
            eprintln!("error: {:#}", failure.error);
            std::process::exit(failure.code);
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Validate { scenario } => validate(&scenario),
        Command::Run(args) => run(&args),
        Command::GenWorkload { scenario, seed, out } => gen_workload(&scenario, seed, out.as_deref()),
        Command::Report { out } => report(&out),
    }
}

fn load_scenario(path: &Path) -> Result<Scenario, Failure> {
    let scenario = Scenario::from_path(path).map_err(schema)?;
    scenario.validate().map_err(schema)?;
    Ok(scenario)
}

fn validate(path: &Path) -> Result<(), Failure> {
    let scenario = load_scenario(path)?;
    println!(
        "{} OK: {} hosts, {} templates, {} queues, horizon {} s",
        path.display(),
        scenario.hosts.len(),
        scenario.templates.len(),
        scenario.queues.len(),
        scenario.horizon_s
    );
    Ok(())
}

fn run(args: &RunArgs) -> Result<(), Failure> {
    if args.replicas == 0 {
        return Err(Failure {
            code: 2,
            error: anyhow!("--replicas must be at least 1"),
        });
    }
    let scenario = load_scenario(&args.scenario)?;
    if args.replicas == 1 {
        let line = run_one(&scenario, args.seed, &args.out)?;
        if !args.quiet {
            println!("{line}");
        }
        return Ok(());
    }
    let results: Vec<Result<String, Failure>> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..args.replicas)
            .map(|i| {
                let scenario = &scenario;
                let dir = args.out.join(format!("r{i}"));
                let seed = args.seed + u64::from(i);
                scope.spawn(move || run_one(scenario, seed, &dir))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("replica thread does not panic"))
            .collect()
    });
    for result in results {
        let line = result?;
        if !args.quiet {
            println!("{line}");
        }
    }
    Ok(())
}

fn run_one(scenario: &Scenario, seed: u64, dir: &Path) -> Result<String, Failure> {
    let output = simkit::run(scenario, seed).map_err(|e| match e {
        SimError::Scenario(_) => schema(e),
        SimError::Integrity { .. } => runtime(e),
    })?;
    std::fs::create_dir_all(dir)
        .with_context(|| format!("creating {}", dir.display()))
        .map_err(runtime)?;
    let log_path = dir.join("events.jsonl");
    output
        .log
        .write_jsonl(&log_path)
        .with_context(|| format!("writing {}", log_path.display()))
        .map_err(runtime)?;
    simkit::export_metrics(&output.metrics, dir)
        .with_context(|| format!("writing metrics to {}", dir.display()))
        .map_err(runtime)?;
    Ok(format!(
        "seed {}: {} events, digest {}, wrote {}",
        seed,
        output.log.len(),
        output.log.digest(),
        dir.display()
    ))
}

fn gen_workload(path: &Path, seed: u64, out: Option<&Path>) -> Result<(), Failure> {
    let scenario = load_scenario(path)?;
    if matches!(scenario.workload, simkit::scenario::Workload::Explicit { .. }) {
        return Err(schema(anyhow!(
            "{}: workload is already explicit; nothing to generate",
            path.display()
        )));
    }
    let jobs: Vec<simkit::scenario::JobSubmission> = simkit::generator::generate(&scenario, seed)
        .into_iter()
        .map(|job| simkit::scenario::JobSubmission {
            job_id: job.job_id,
            queue: job.queue_name,
            user: job.user,
            cores: job.cores,
            runtime_s: job.runtime_s,
            submit_time_s: job.submit_time_s,
        })
        .collect();
    let block = simkit::scenario::Workload::Explicit { jobs };
    let rendered =
        serde_json::to_string_pretty(&block).expect("workload block serializes");
    match out {
        Some(dir) => {
            std::fs::create_dir_all(dir)
                .with_context(|| format!("creating {}", dir.display()))
                .map_err(runtime)?;
            let file = dir.join("workload.json");
            std::fs::write(&file, rendered)
                .with_context(|| format!("writing {}", file.display()))
                .map_err(runtime)?;
            println!("wrote {}", file.display());
        }
        None => println!("{rendered}"),
    }
    Ok(())
}

/// One parsed row of `queue_times.csv`.
struct QueueTimeRow {
    group: String,
    cores: u32,
    start_time_s: Option<u64>,
    end_time_s: Option<u64>,
    queue_time_s: Option<u64>,
    path: String,
}

fn report(dir: &Path) -> Result<(), Failure> {
    let file = dir.join("queue_times.csv");
    let mut reader = csv::Reader::from_path(&file)
        .with_context(|| format!("reading {}", file.display()))
        .map_err(runtime)?;
    let mut rows: Vec<QueueTimeRow> = Vec::new();
    for record in reader.records() {
        let record = record
            .with_context(|| format!("reading {}", file.display()))
            .map_err(runtime)?;
        let field = |i: usize| record.get(i).unwrap_or("").to_owned();
        let num = |i: usize| -> Result<Option<u64>, Failure> {
            let raw = record.get(i).unwrap_or("");
            if raw.is_empty() {
                return Ok(None);
            }
            raw.parse()
                .map(Some)
                .with_context(|| format!("{}: bad number {raw:?}", file.display()))
                .map_err(runtime)
        };
        rows.push(QueueTimeRow {
            group: field(2),
            cores: num(3)?.unwrap_or(0) as u32,
            start_time_s: num(5)?,
            end_time_s: num(6)?,
            queue_time_s: num(7)?,
            path: field(8),
        });
    }

    println!("queue time by provisioning path");
    println!("{:<16} {:>6} {:>8} {:>8} {:>8}", "path", "jobs", "min_s", "median_s", "max_s");
    let mut by_path: BTreeMap<String, Vec<u64>> = BTreeMap::new();
    for row in &rows {
        if let Some(qt) = row.queue_time_s {
            if !row.path.is_empty() {
                by_path.entry(row.path.clone()).or_default().push(qt);
            }
        }
    }
    for (path, mut times) in by_path {
        times.sort_unstable();
        let n = times.len();
        let median = if n % 2 == 1 {
            times[n / 2]
        } else {
            (times[n / 2 - 1] + times[n / 2]) / 2
        };
        println!(
            "{path:<16} {n:>6} {:>8} {median:>8} {:>8}",
            times[0],
            times[n - 1]
        );
    }

    println!();
    println!("core-seconds by group (completed spans only)");
    println!("{:<16} {:>14} {:>7}", "group", "core_seconds", "share");
    let mut by_group: BTreeMap<String, u64> = BTreeMap::new();
    for row in &rows {
        if let (Some(start), Some(end)) = (row.start_time_s, row.end_time_s) {
            *by_group.entry(row.group.clone()).or_insert(0) +=
                u64::from(row.cores) * (end - start);
        }
    }
    let total: u64 = by_group.values().sum();
    for (group, secs) in &by_group {
        let share = if total == 0 {
            0.0
        } else {
            *secs as f64 / total as f64
        };
        println!("{group:<16} {secs:>14} {share:>7.3}");
    }
    Ok(())
}
