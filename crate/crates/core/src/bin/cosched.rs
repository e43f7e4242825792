use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use cosched::coalloc::{AllocPolicy, RationalSolution};
use cosched::experiment::{
    calibrate, export, export_calibration, export_summary, modeled_at, parse_config, run_experiment_with, run_solved,
    solve_instance, summarize, Execution, ExperimentConfig, Format, Scenario,
};
use cosched::model::{Allocation, CoAllocation, Partition};
use cosched::perf::{calibrate_bandwidth, BandwidthModel};
use cosched::sim::{simulate, write_trace};

/// Co-scheduling and resource allocation for in-situ workflow ensembles.
#[derive(Parser)]
#[command(name = "cosched", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one instance and print its partition and allocations as JSON.
    Solve(InstanceArgs),
    /// Simulate one instance and write its execution trace.
    Simulate {
        #[command(flatten)]
        instance: InstanceArgs,
        /// Integer allocation (JSON) to simulate instead of the solved one.
        #[arg(long)]
        allocation: Option<PathBuf>,
    },
    /// Run the full experiment described by the config.
    Sweep {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, default_value = "csv")]
        format: Format,
        /// Run only this policy instead of the configured list.
        #[arg(long)]
        policy: Option<AllocPolicy>,
        /// Also write per-scenario mean/min/max plot data to this CSV file.
        #[arg(long)]
        summary: Option<PathBuf>,
        #[arg(long)]
        sequential: bool,
    },
    /// Compare every bandwidth model against the simulator.
    Calibrate {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        sequential: bool,
    },
}

#[derive(Args)]
struct CommonArgs {
    #[arg(long)]
    config: PathBuf,
    /// Output file; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Base seed; trials use consecutive seeds from here.
    #[arg(long)]
    seed_override: Option<u64>,
    #[arg(long)]
    calibration: Option<BandwidthModel>,
}

#[derive(Args)]
struct InstanceArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Scenario to solve; defaults to the first configured one.
    #[arg(long)]
    scenario: Option<Scenario>,
    /// Defaults to the first configured policy.
    #[arg(long)]
    policy: Option<AllocPolicy>,
}

#[derive(Serialize)]
struct SolveReport<'a> {
    scenario: String,
    policy: String,
    seed: u64,
    partition: &'a Partition,
    layout: Vec<CoAllocation>,
    solution: &'a RationalSolution,
    rational: &'a Allocation,
    integer: &'a Allocation,
    lifted: &'a [String],
    modeled_makespan: f64,
    calibrated_makespan: f64,
}

enum Failure {
    Config(String),
    Run(String),
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Run(e.to_string())
    }
}

fn load(common: &CommonArgs) -> Result<ExperimentConfig, Failure> {
    let mut cfg = parse_config(&common.config).map_err(|e| Failure::Config(e.to_string()))?;
    if let Some(seed) = common.seed_override {
        cfg.generator.seed = seed;
        cfg.seeds.clear();
    }
    if let Some(c) = common.calibration {
        cfg.calibration = c;
    }
    Ok(cfg)
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>, Failure> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).map_err(|e| Failure::Run(format!("{}: {e}", p.display())))?,
        )),
        None => Box::new(io::stdout().lock()),
    })
}

fn execution(sequential: bool) -> Execution {
    if sequential {
        Execution::Sequential
    } else {
        Execution::Parallel
    }
}

fn pick_instance(args: &InstanceArgs) -> Result<(ExperimentConfig, Scenario, AllocPolicy), Failure> {
    let cfg = load(&args.common)?;
    let scenario = args.scenario.unwrap_or(cfg.scenarios[0]);
    let policy = args.policy.unwrap_or(cfg.policies[0]);
    Ok((cfg, scenario, policy))
}

fn run(cli: Cli) -> Result<bool, Failure> {
    match cli.command {
        Command::Solve(args) => {
            let (cfg, scenario, policy) = pick_instance(&args)?;
            let solved = solve_instance(&cfg.platform, &cfg.generator, scenario, policy).map_err(Failure::Run)?;
            let layout = solved.partition.allocations(&solved.ensemble);
            let calibrated =
                calibrate_bandwidth(&solved.platform, &solved.partition, solved.integer_n_tilde() as f64, cfg.calibration);
            let modeled = |b| modeled_at(&solved, b).map_err(Failure::Run);
            let report = SolveReport {
                scenario: scenario.to_string(),
                policy: policy.to_string(),
                seed: cfg.generator.seed,
                partition: &solved.partition,
                layout,
                solution: &solved.solution,
                rational: &solved.rational,
                integer: &solved.integer,
                lifted: &solved.lifted,
                modeled_makespan: modeled(solved.platform.bandwidth())?,
                calibrated_makespan: modeled(calibrated.bandwidth)?,
            };
            let mut out = output(args.common.out.as_deref())?;
            serde_json::to_writer_pretty(&mut out, &report).map_err(|e| Failure::Run(e.to_string()))?;
            writeln!(out)?;
            out.flush()?;
            Ok(true)
        }
        Command::Simulate { instance, allocation } => {
            let (cfg, scenario, policy) = pick_instance(&instance)?;
            let solved = solve_instance(&cfg.platform, &cfg.generator, scenario, policy).map_err(Failure::Run)?;
            let report = match allocation {
                Some(path) => {
                    let file = File::open(&path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
                    let alloc: Allocation = serde_json::from_reader(io::BufReader::new(file))
                        .map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
                    simulate(&solved.ensemble, &solved.partition, &alloc, &solved.platform, cfg.simulator)
                        .map_err(|e| Failure::Run(e.to_string()))?
                }
                None => run_solved(&solved, cfg.simulator).map_err(Failure::Run)?,
            };
            let mut out = output(instance.common.out.as_deref())?;
            write_trace(&report, &mut out)?;
            out.flush()?;
            Ok(true)
        }
        Command::Sweep {
            common,
            format,
            policy,
            summary,
            sequential,
        } => {
            let mut cfg = load(&common)?;
            if let Some(p) = policy {
                cfg.policies = vec![p];
            }
            let rows = run_experiment_with(&cfg, execution(sequential));
            export(&rows, format, output(common.out.as_deref())?)?;
            if let Some(path) = summary {
                export_summary(&summarize(&rows), output(Some(&path))?)?;
            }
            for r in rows.iter().filter(|r| r.error.is_some()) {
                eprintln!(
                    "error: {} {} value={} seed={}: {}",
                    r.scenario,
                    r.policy,
                    r.value,
                    r.seed,
                    r.error.as_deref().unwrap_or_default()
                );
            }
            Ok(rows.iter().all(|r| r.error.is_none()))
        }
        Command::Calibrate { common, sequential } => {
            let cfg = load(&common)?;
            let rows = calibrate(&cfg, execution(sequential));
            export_calibration(&rows, output(common.out.as_deref())?)?;
            Ok(rows.iter().all(|r| r.error.is_none()))
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(Failure::Run(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Config(msg)) => {
            eprintln!("config error: {msg}");
            ExitCode::from(2)
        }
    }
}
