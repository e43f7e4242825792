//! Experiment configuration, sweep execution and result export.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{self, Write as _};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coalloc::{apply_policy, co_alloc, AllocPolicy, RationalSolution};
use crate::cosched::co_sched;
use crate::model::{validate, Allocation, Ensemble, Partition, Platform};
use crate::perf::{calibrate_bandwidth, modeled_makespan, BandwidthModel};
use crate::rounding::integerize;
use crate::scenarios::{generate_ensemble, make_partition, GeneratorConfig, ScenarioSpec};
use crate::sim::{simulate, SimOptions, SimReport};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{0}")]
    Parse(String),
    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Invalid(Vec<String>),
}

/// A fixed scenario or the greedy memory-aware partition search.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Scenario {
    Fixed(ScenarioSpec),
    CoSched,
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scenario::Fixed(s) => s.fmt(f),
            Scenario::CoSched => f.write_str("co-sched"),
        }
    }
}

impl FromStr for Scenario {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "co-sched" | "cosched" => Ok(Scenario::CoSched),
            _ => s.parse().map(Scenario::Fixed).map_err(|e| e.to_string()),
        }
    }
}

impl TryFrom<String> for Scenario {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<Scenario> for String {
    fn from(s: Scenario) -> String {
        s.to_string()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    DataVolume,
    NNodes,
    AnalysesPerSim,
    NSims,
}

impl SweepAxis {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepAxis::DataVolume => "data_volume",
            SweepAxis::NNodes => "n_nodes",
            SweepAxis::AnalysesPerSim => "analyses_per_sim",
            SweepAxis::NSims => "n_sims",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
}

fn default_scenarios() -> Vec<Scenario> {
    ScenarioSpec::standard().into_iter().map(Scenario::Fixed).collect()
}

fn default_policies() -> Vec<AllocPolicy> {
    vec![AllocPolicy::CO_CO]
}

fn default_trials() -> u32 {
    5
}

fn default_calibration() -> BandwidthModel {
    BandwidthModel::B3
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub platform: Platform,
    pub generator: GeneratorConfig,
    #[serde(default = "default_scenarios")]
    pub scenarios: Vec<Scenario>,
    #[serde(default = "default_policies")]
    pub policies: Vec<AllocPolicy>,
    #[serde(default)]
    pub sweep: Option<Sweep>,
    #[serde(default = "default_trials")]
    pub trials: u32,
    /// One seed per trial; defaults to `generator.seed + trial`.
    #[serde(default)]
    pub seeds: Vec<u64>,
    #[serde(default = "default_calibration")]
    pub calibration: BandwidthModel,
    #[serde(default)]
    pub simulator: SimOptions,
}

impl ExperimentConfig {
    /// Default experiment on `platform` and `generator`.
    pub fn new(platform: Platform, generator: GeneratorConfig) -> Self {
        ExperimentConfig {
            platform,
            generator,
            scenarios: default_scenarios(),
            policies: default_policies(),
            sweep: None,
            trials: default_trials(),
            seeds: Vec::new(),
            calibration: default_calibration(),
            simulator: SimOptions::default(),
        }
    }

    /// Seeds of the `trials` trials.
    pub fn trial_seeds(&self) -> Vec<u64> {
        if self.seeds.is_empty() {
            (0..self.trials as u64).map(|i| self.generator.seed.wrapping_add(i)).collect()
        } else {
            self.seeds[..self.trials as usize].to_vec()
        }
    }

    /// Sweep values, or the generator's own setting when there is no sweep.
    pub fn sweep_points(&self) -> Vec<(Option<SweepAxis>, f64)> {
        match &self.sweep {
            Some(s) => s.values.iter().map(|v| (Some(s.axis), *v)).collect(),
            None => vec![(None, self.generator.data_volume)],
        }
    }

    /// Every problem with the configuration, one message each.
    pub fn problems(&self) -> Vec<String> {
        let mut out = self.generator.problems();
        let p = &self.platform;
        if p.n_nodes == 0 {
            out.push("platform.n_nodes must be positive".into());
        }
        if p.cores_per_node == 0 {
            out.push("platform.cores_per_node must be positive".into());
        }
        if !(p.mem_per_node > 0.0) {
            out.push("platform.mem_per_node must be positive".into());
        }
        if !(p.bandwidth_per_node > 0.0 && p.bandwidth_per_node.is_finite()) {
            out.push("platform.bandwidth_per_node must be positive".into());
        }
        if self.trials == 0 {
            out.push("trials must be at least 1".into());
        }
        if !self.seeds.is_empty() && self.seeds.len() < self.trials as usize {
            out.push(format!("seeds lists {} seeds for {} trials", self.seeds.len(), self.trials));
        }
        if self.scenarios.is_empty() {
            out.push("scenarios must not be empty".into());
        }
        if self.policies.is_empty() {
            out.push("policies must not be empty".into());
        }
        if self.simulator.pipeline_depth == 0 {
            out.push("simulator.pipeline_depth must be at least 1".into());
        }
        if let Some(s) = &self.sweep {
            if s.values.is_empty() {
                out.push("sweep.values must not be empty".into());
            }
            let integral = s.axis != SweepAxis::DataVolume;
            for v in &s.values {
                if !(*v > 0.0 && v.is_finite()) || (integral && (v.fract() != 0.0 || *v > u32::MAX as f64)) {
                    out.push(format!("sweep value {v} is not valid for axis {}", s.axis.as_str()));
                }
            }
        }
        out
    }

    fn instance(&self, axis: Option<SweepAxis>, value: f64, seed: u64) -> (Platform, GeneratorConfig) {
        let mut platform = self.platform.clone();
        let mut generator = self.generator.clone();
        generator.seed = seed;
        match axis {
            Some(SweepAxis::DataVolume) => generator.data_volume = value,
            Some(SweepAxis::NNodes) => platform.n_nodes = value as u32,
            Some(SweepAxis::AnalysesPerSim) => generator.analyses_per_sim = value as u32,
            Some(SweepAxis::NSims) => generator.n_sims = value as u32,
            None => {}
        }
        (platform, generator)
    }
}

/// Parses and validates a TOML experiment description.
pub fn parse_config_str(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
    let problems = cfg.problems();
    if problems.is_empty() {
        Ok(cfg)
    } else {
        Err(ConfigError::Invalid(problems))
    }
}

pub fn parse_config(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_config_str(&text).map_err(|e| match e {
        ConfigError::Parse(msg) => ConfigError::Parse(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// One solved and simulated instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub scenario: String,
    pub axis: String,
    pub value: f64,
    pub policy: String,
    pub seed: u64,
    pub modeled_makespan: Option<f64>,
    pub simulated_makespan: Option<f64>,
    /// Modeled makespan under the configured calibrated bandwidth.
    pub calibrated_makespan: Option<f64>,
    pub rational_t_star: Option<f64>,
    pub n_co_scheduled: usize,
    pub n_not_co_scheduled: usize,
    /// Nodes of analysis-only allocations after rounding.
    pub n_tilde: Option<u64>,
    pub allocation_digest: String,
    /// Rounding steps that lifted sub-unit values, `;`-separated.
    pub lifted: String,
    pub error: Option<String>,
}

/// Everything computed for one instance.
#[derive(Clone, Debug)]
pub struct Solved {
    pub ensemble: Ensemble,
    pub platform: Platform,
    pub partition: Partition,
    pub solution: RationalSolution,
    pub rational: Allocation,
    pub integer: Allocation,
    /// Rounding steps that had to lift sub-unit values first.
    pub lifted: Vec<String>,
}

impl Solved {
    /// Integer nodes given to analysis-only allocations.
    pub fn integer_n_tilde(&self) -> u64 {
        let layout = self.partition.allocations(&self.ensemble);
        let nodes = self.integer.allocation_nodes(&layout).unwrap_or_default();
        layout
            .iter()
            .zip(nodes)
            .filter(|(a, _)| a.is_analysis_only())
            .map(|(_, n)| n as u64)
            .sum()
    }
}

/// Builds, partitions, allocates and rounds one instance.
pub fn solve_instance(
    platform: &Platform,
    generator: &GeneratorConfig,
    scenario: Scenario,
    policy: AllocPolicy,
) -> Result<Solved, String> {
    let ensemble = generate_ensemble(generator);
    validate(&ensemble, platform).map_err(|e| e.to_string())?;
    let (partition, solution) = match scenario {
        Scenario::Fixed(spec) => {
            let partition = make_partition(&ensemble, spec);
            let solution = co_alloc(&partition, &ensemble, platform).map_err(|e| e.to_string())?;
            (partition, solution)
        }
        Scenario::CoSched => {
            let out = co_sched(&ensemble, platform).map_err(|e| e.to_string())?;
            (out.partition, out.solution)
        }
    };
    let rational = apply_policy(&solution, &partition, &ensemble, platform, policy);
    let rounded = integerize(&rational, &partition, &ensemble, platform, &solution.u_star_per_group).map_err(|e| e.to_string())?;
    Ok(Solved {
        ensemble,
        platform: platform.clone(),
        partition,
        solution,
        rational,
        integer: rounded.allocation,
        lifted: rounded.lifted,
    })
}

/// Simulates a solved instance.
pub fn run_solved(solved: &Solved, options: SimOptions) -> Result<SimReport, String> {
    simulate(&solved.ensemble, &solved.partition, &solved.integer, &solved.platform, options).map_err(|e| e.to_string())
}

/// Modeled makespan of the integer allocation at a given bandwidth.
pub fn modeled_at(solved: &Solved, bandwidth: f64) -> Result<f64, String> {
    modeled_makespan(&solved.ensemble, &solved.partition, &solved.integer, bandwidth).map_err(|e| e.to_string())
}

#[derive(Clone, Copy, Debug)]
struct Case {
    axis: Option<SweepAxis>,
    value: f64,
    scenario: Scenario,
    policy: AllocPolicy,
    seed: u64,
}

fn cases(cfg: &ExperimentConfig) -> Vec<Case> {
    let seeds = cfg.trial_seeds();
    let mut out = Vec::new();
    for (axis, value) in cfg.sweep_points() {
        for &scenario in &cfg.scenarios {
            for &policy in &cfg.policies {
                for &seed in &seeds {
                    out.push(Case {
                        axis,
                        value,
                        scenario,
                        policy,
                        seed,
                    });
                }
            }
        }
    }
    out
}

fn run_case(cfg: &ExperimentConfig, case: &Case) -> ResultRow {
    let mut row = ResultRow {
        scenario: case.scenario.to_string(),
        axis: case.axis.map_or("none", |a| a.as_str()).to_string(),
        value: case.value,
        policy: case.policy.to_string(),
        seed: case.seed,
        modeled_makespan: None,
        simulated_makespan: None,
        calibrated_makespan: None,
        rational_t_star: None,
        n_co_scheduled: 0,
        n_not_co_scheduled: 0,
        n_tilde: None,
        allocation_digest: String::new(),
        lifted: String::new(),
        error: None,
    };
    let (platform, generator) = cfg.instance(case.axis, case.value, case.seed);
    let outcome = (|| -> Result<(), String> {
        let solved = solve_instance(&platform, &generator, case.scenario, case.policy)?;
        row.rational_t_star = Some(solved.solution.equalized_time);
        row.n_co_scheduled = solved.partition.co_scheduled().len();
        row.n_not_co_scheduled = solved.partition.n_not_co_scheduled();
        let n_tilde = solved.integer_n_tilde();
        row.n_tilde = Some(n_tilde);
        row.allocation_digest = solved.integer.digest(&solved.partition.allocations(&solved.ensemble));
        row.lifted = solved.lifted.join(";");
        row.modeled_makespan = Some(modeled_at(&solved, platform.bandwidth())?);
        let calibrated = calibrate_bandwidth(&platform, &solved.partition, n_tilde as f64, cfg.calibration);
        row.calibrated_makespan = Some(modeled_at(&solved, calibrated.bandwidth)?);
        row.simulated_makespan = Some(run_solved(&solved, cfg.simulator)?.makespan);
        Ok(())
    })();
    row.error = outcome.err();
    row
}

/// How independent cases are spread over threads.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Execution {
    /// Uses the rayon thread pool when built with the `parallel` feature.
    Parallel,
    Sequential,
}

fn map_cases<T: Send, F>(items: &[Case], execution: Execution, f: F) -> Vec<T>
where
    F: Fn(&Case) -> T + Sync + Send,
{
    match execution {
        #[cfg(feature = "parallel")]
        Execution::Parallel => {
            use rayon::prelude::*;
            items.par_iter().map(f).collect()
        }
        _ => items.iter().map(f).collect(),
    }
}

/// Runs every (sweep value, scenario, policy, trial) combination once.
pub fn run_experiment(cfg: &ExperimentConfig) -> Vec<ResultRow> {
    run_experiment_with(cfg, Execution::Parallel)
}

/// Same as [`run_experiment`]; rows come back in the same order either way.
pub fn run_experiment_with(cfg: &ExperimentConfig, execution: Execution) -> Vec<ResultRow> {
    map_cases(&cases(cfg), execution, |c| run_case(cfg, c))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Jsonl,
}

impl FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(Format::Csv),
            "jsonl" | "json-lines" => Ok(Format::Jsonl),
            other => Err(format!("unknown format `{other}` (expected csv|jsonl)")),
        }
    }
}

/// Simulated makespan over the `co:co` row of the same scenario, value and seed.
pub fn normalized(rows: &[ResultRow]) -> Vec<Option<f64>> {
    let co = AllocPolicy::CO_CO.to_string();
    let mut base: BTreeMap<(&str, u64, u64), f64> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.policy == co) {
        if let Some(m) = r.simulated_makespan {
            base.insert((r.scenario.as_str(), r.value.to_bits(), r.seed), m);
        }
    }
    rows.iter()
        .map(|r| {
            let b = base.get(&(r.scenario.as_str(), r.value.to_bits(), r.seed))?;
            Some(r.simulated_makespan? / b)
        })
        .collect()
}

pub const CSV_HEADER: [&str; 16] = [
    "scenario",
    "axis",
    "value",
    "policy",
    "seed",
    "modeled_makespan",
    "simulated_makespan",
    "calibrated_makespan",
    "normalized_makespan",
    "rational_t_star",
    "n_co_scheduled",
    "n_not_co_scheduled",
    "n_tilde",
    "allocation_digest",
    "lifted",
    "error",
];

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

#[derive(Serialize)]
struct JsonRow<'a> {
    #[serde(flatten)]
    row: &'a ResultRow,
    normalized_makespan: Option<f64>,
}

/// Writes rows as CSV (header from [`CSV_HEADER`]) or JSON lines.
pub fn export<W: io::Write>(rows: &[ResultRow], format: Format, out: W) -> io::Result<()> {
    let norm = normalized(rows);
    match format {
        Format::Csv => {
            let mut w = csv::Writer::from_writer(out);
            w.write_record(CSV_HEADER)?;
            for (r, n) in rows.iter().zip(norm) {
                w.write_record([
                    r.scenario.clone(),
                    r.axis.clone(),
                    r.value.to_string(),
                    r.policy.clone(),
                    r.seed.to_string(),
                    opt(r.modeled_makespan),
                    opt(r.simulated_makespan),
                    opt(r.calibrated_makespan),
                    opt(n),
                    opt(r.rational_t_star),
                    r.n_co_scheduled.to_string(),
                    r.n_not_co_scheduled.to_string(),
                    opt(r.n_tilde),
                    r.allocation_digest.clone(),
                    r.lifted.clone(),
                    r.error.clone().unwrap_or_default(),
                ])?;
            }
            w.flush()
        }
        Format::Jsonl => {
            let mut out = io::BufWriter::new(out);
            for (row, normalized_makespan) in rows.iter().zip(norm) {
                serde_json::to_writer(&mut out, &JsonRow { row, normalized_makespan })?;
                writeln!(out)?;
            }
            out.flush()
        }
    }
}

/// Writes rows to `path`, surfacing the path on failure.
pub fn export_to(rows: &[ResultRow], format: Format, path: &Path) -> io::Result<()> {
    let file = std::fs::File::create(path).map_err(|e| io::Error::new(e.kind(), format!("{}: {e}", path.display())))?;
    export(rows, format, file)
}

/// Per (value, scenario, policy) statistics across trials, for plotting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub scenario: String,
    pub axis: String,
    pub value: f64,
    pub policy: String,
    pub trials: usize,
    pub failed: usize,
    pub simulated_mean: f64,
    pub simulated_min: f64,
    pub simulated_max: f64,
    pub modeled_mean: f64,
}

pub fn summarize(rows: &[ResultRow]) -> Vec<SummaryRow> {
    let mut out: Vec<SummaryRow> = Vec::new();
    let mut index: BTreeMap<(String, u64, String), usize> = BTreeMap::new();
    let mut sums: Vec<(Vec<f64>, Vec<f64>)> = Vec::new();
    for r in rows {
        let key = (r.scenario.clone(), r.value.to_bits(), r.policy.clone());
        let i = *index.entry(key).or_insert_with(|| {
            out.push(SummaryRow {
                scenario: r.scenario.clone(),
                axis: r.axis.clone(),
                value: r.value,
                policy: r.policy.clone(),
                trials: 0,
                failed: 0,
                simulated_mean: f64::NAN,
                simulated_min: f64::NAN,
                simulated_max: f64::NAN,
                modeled_mean: f64::NAN,
            });
            sums.push((Vec::new(), Vec::new()));
            out.len() - 1
        });
        out[i].trials += 1;
        match (r.simulated_makespan, r.modeled_makespan) {
            (Some(s), Some(m)) if r.error.is_none() => {
                sums[i].0.push(s);
                sums[i].1.push(m);
            }
            _ => out[i].failed += 1,
        }
    }
    for (row, (sim, model)) in out.iter_mut().zip(sums) {
        if !sim.is_empty() {
            row.simulated_mean = sim.iter().sum::<f64>() / sim.len() as f64;
            row.simulated_min = sim.iter().copied().fold(f64::INFINITY, f64::min);
            row.simulated_max = sim.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            row.modeled_mean = model.iter().sum::<f64>() / model.len() as f64;
        }
    }
    out
}

pub fn export_summary<W: io::Write>(summary: &[SummaryRow], out: W) -> io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in summary {
        w.serialize(row)?;
    }
    w.flush()
}

/// Model-vs-simulator comparison for one instance and bandwidth model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRow {
    pub scenario: String,
    pub axis: String,
    pub value: f64,
    pub seed: u64,
    pub variant: BandwidthModel,
    pub bandwidth: f64,
    pub modeled_makespan: Option<f64>,
    pub simulated_makespan: Option<f64>,
    /// `simulated / modeled`.
    pub ratio: Option<f64>,
    pub error: Option<String>,
}

/// Compares every bandwidth model with the simulator using `co:co` allocations.
pub fn calibrate(cfg: &ExperimentConfig, execution: Execution) -> Vec<CalibrationRow> {
    let mut reduced = cfg.clone();
    reduced.policies = vec![AllocPolicy::CO_CO];
    let rows: Vec<Vec<CalibrationRow>> = map_cases(&cases(&reduced), execution, |c| {
        let (platform, generator) = cfg.instance(c.axis, c.value, c.seed);
        let base = |variant: BandwidthModel| CalibrationRow {
            scenario: c.scenario.to_string(),
            axis: c.axis.map_or("none", |a| a.as_str()).to_string(),
            value: c.value,
            seed: c.seed,
            variant,
            bandwidth: platform.bandwidth(),
            modeled_makespan: None,
            simulated_makespan: None,
            ratio: None,
            error: None,
        };
        let solved = solve_instance(&platform, &generator, c.scenario, c.policy)
            .and_then(|s| run_solved(&s, cfg.simulator).map(|r| (s, r.makespan)));
        BandwidthModel::ALL
            .into_iter()
            .map(|variant| {
                let mut row = base(variant);
                match &solved {
                    Ok((s, simulated)) => {
                        let cal = calibrate_bandwidth(&platform, &s.partition, s.integer_n_tilde() as f64, variant);
                        row.bandwidth = cal.bandwidth;
                        row.simulated_makespan = Some(*simulated);
                        match modeled_at(s, cal.bandwidth) {
                            Ok(m) => {
                                row.modeled_makespan = Some(m);
                                row.ratio = Some(simulated / m);
                            }
                            Err(e) => row.error = Some(e),
                        }
                    }
                    Err(e) => row.error = Some(e.clone()),
                }
                row
            })
            .collect()
    });
    rows.into_iter().flatten().collect()
}

pub fn export_calibration<W: io::Write>(rows: &[CalibrationRow], out: W) -> io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[platform]
n_nodes = 16
cores_per_node = 32
mem_per_node = 128e9
bandwidth_per_node = 10e9

[generator]
n_sims = 2
analyses_per_sim = 2
sim_seq_time = 100.0
data_volume = 1e9
n_steps = 5
"#;

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = parse_config_str(MINIMAL).unwrap();
        assert_eq!(cfg.trials, 5);
        assert_eq!(cfg.generator.analysis_time_range, (0.5, 1.5));
        assert_eq!(cfg.calibration, BandwidthModel::B3);
        assert_eq!(cfg.policies, vec![AllocPolicy::CO_CO]);
        assert_eq!(cfg.scenarios.len(), 8);
        assert_eq!(cfg.trial_seeds(), vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn unknown_scenario_names_the_field() {
        let text = format!("scenarios = [\"ideal\", \"sideways\"]\n{MINIMAL}");
        let err = parse_config_str(&text).unwrap_err().to_string();
        assert!(err.contains("scenarios"), "{err}");
        assert!(err.contains("sideways"), "{err}");
    }

    #[test]
    fn unknown_field_is_rejected() {
        let err = parse_config_str(&MINIMAL.replace("n_steps = 5", "n_steps = 5\nn_stepz = 5")).unwrap_err();
        assert!(err.to_string().contains("n_stepz"), "{err}");
    }

    #[test]
    fn validation_errors_are_aggregated() {
        let text = format!("trials = 0\n{}", MINIMAL.replace("n_sims = 2", "n_sims = 0"));
        match parse_config_str(&text) {
            Err(ConfigError::Invalid(p)) => assert_eq!(p.len(), 2, "{p:?}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn data_sweep_parses() {
        let text = format!(
            "scenarios = [\"ideal\", \"in-transit\", \"co-sched\"]\npolicies = [\"co:co\", \"ev:co\"]\n{MINIMAL}\n[sweep]\naxis = \"data_volume\"\nvalues = [1e9, 2e9, 4e9]\n"
        );
        let cfg = parse_config_str(&text).unwrap();
        assert_eq!(cfg.sweep.as_ref().unwrap().axis, SweepAxis::DataVolume);
        assert_eq!(cfg.scenarios[2], Scenario::CoSched);
        assert_eq!(cases(&cfg).len(), 3 * 3 * 2 * 5);
        let bad = text.replace("data_volume\"", "n_nodes\"").replace("1e9, 2e9, 4e9", "1.5, 2");
        assert!(matches!(parse_config_str(&bad), Err(ConfigError::Invalid(_))));
    }

    fn small() -> ExperimentConfig {
        let mut cfg = parse_config_str(MINIMAL).unwrap();
        cfg.trials = 2;
        cfg
    }

    #[test]
    fn one_row_per_policy() {
        let mut cfg = small();
        cfg.trials = 1;
        cfg.scenarios = vec![Scenario::Fixed(ScenarioSpec::Ideal)];
        cfg.policies = AllocPolicy::ALL.to_vec();
        let rows = run_experiment(&cfg);
        assert_eq!(rows.len(), 4);
        assert!(rows.iter().all(|r| r.error.is_none()));
        let norm = normalized(&rows);
        assert_eq!(norm[0], Some(1.0));
    }

    #[test]
    fn sequential_and_parallel_agree() {
        let cfg = small();
        assert_eq!(run_experiment_with(&cfg, Execution::Sequential), run_experiment_with(&cfg, Execution::Parallel));
    }

    #[test]
    fn export_is_byte_stable() {
        let rows = run_experiment(&small());
        let (mut a, mut b) = (Vec::new(), Vec::new());
        export(&rows, Format::Csv, &mut a).unwrap();
        export(&rows, Format::Csv, &mut b).unwrap();
        assert_eq!(a, b);
        let text = String::from_utf8(a).unwrap();
        assert_eq!(text.lines().next().unwrap(), CSV_HEADER.join(","));
        assert_eq!(text.lines().count(), rows.len() + 1);

        let mut j = Vec::new();
        export(&rows[..1], Format::Jsonl, &mut j).unwrap();
        let v: serde_json::Value = serde_json::from_slice(&j).unwrap();
        assert_eq!(v["scenario"], "ideal");
        assert!(v["normalized_makespan"].is_number());
    }

    #[test]
    fn infeasible_rows_carry_errors() {
        let mut cfg = small();
        cfg.trials = 1;
        cfg.platform.n_nodes = 1;
        cfg.scenarios = vec![Scenario::Fixed(ScenarioSpec::InTransit)];
        let rows = run_experiment(&cfg);
        assert_eq!(rows.len(), 1);
        assert!(rows[0].error.is_some());
        assert_eq!(rows[0].simulated_makespan, None);
    }

    #[test]
    fn summary_and_calibration() {
        let cfg = small();
        let rows = run_experiment(&cfg);
        let summary = summarize(&rows);
        assert_eq!(summary.len(), 8);
        assert!(summary.iter().all(|s| s.trials == 2 && s.simulated_min <= s.simulated_mean));
        let cal = calibrate(&cfg, Execution::Sequential);
        assert_eq!(cal.len(), 8 * 2 * 4);
        let ideal_base = &cal[0];
        assert_eq!(ideal_base.variant, BandwidthModel::Baseline);
        assert!((ideal_base.ratio.unwrap() - 1.0).abs() < 1e-9);
    }
}
