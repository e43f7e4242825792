//! Synthetic ensembles and the experimental partitions built on them.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{AnalysisSpec, AppId, Ensemble, Partition, SimulationSpec};

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum ScenarioError {
    #[error("unknown scenario `{0}` (expected ideal, in-transit, increasing-<x>, decreasing-<x>)")]
    Unknown(String),
    #[error("scenario percentage must lie strictly between 0 and 100, got `{0}`")]
    Percentage(String),
}

/// Which analyses run away from their simulation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum ScenarioSpec {
    Ideal,
    InTransit,
    /// The largest `x%` analyses are remote, listed shortest first.
    IncreasingPct(f64),
    /// The largest `x%` analyses are remote, listed longest first.
    DecreasingPct(f64),
}

impl ScenarioSpec {
    /// The scenarios of a standard sweep.
    pub fn standard() -> Vec<ScenarioSpec> {
        let mut all = vec![ScenarioSpec::Ideal];
        for x in [25.0, 50.0, 75.0] {
            all.push(ScenarioSpec::IncreasingPct(x));
            all.push(ScenarioSpec::DecreasingPct(x));
        }
        all.push(ScenarioSpec::InTransit);
        all
    }

    /// Remote-analysis percentage: 0 for ideal, 100 for in-transit.
    pub fn percentage(&self) -> f64 {
        match *self {
            ScenarioSpec::Ideal => 0.0,
            ScenarioSpec::InTransit => 100.0,
            ScenarioSpec::IncreasingPct(x) | ScenarioSpec::DecreasingPct(x) => x,
        }
    }
}

impl fmt::Display for ScenarioSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScenarioSpec::Ideal => f.write_str("ideal"),
            ScenarioSpec::InTransit => f.write_str("in-transit"),
            ScenarioSpec::IncreasingPct(x) => write!(f, "increasing-{x}"),
            ScenarioSpec::DecreasingPct(x) => write!(f, "decreasing-{x}"),
        }
    }
}

impl FromStr for ScenarioSpec {
    type Err = ScenarioError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lower = s.trim().to_ascii_lowercase();
        match lower.as_str() {
            "ideal" => return Ok(ScenarioSpec::Ideal),
            "in-transit" | "intransit" | "in_transit" => return Ok(ScenarioSpec::InTransit),
            _ => {}
        }
        let (kind, pct) = lower.split_once('-').ok_or_else(|| ScenarioError::Unknown(s.to_string()))?;
        let x: f64 = pct
            .trim_end_matches('%')
            .parse()
            .map_err(|_| ScenarioError::Percentage(s.to_string()))?;
        if !(x > 0.0 && x < 100.0) {
            return Err(ScenarioError::Percentage(s.to_string()));
        }
        match kind {
            "increasing" => Ok(ScenarioSpec::IncreasingPct(x)),
            "decreasing" => Ok(ScenarioSpec::DecreasingPct(x)),
            _ => Err(ScenarioError::Unknown(s.to_string())),
        }
    }
}

impl TryFrom<String> for ScenarioSpec {
    type Error = ScenarioError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<ScenarioSpec> for String {
    fn from(s: ScenarioSpec) -> String {
        s.to_string()
    }
}

fn default_time_range() -> (f64, f64) {
    (0.5, 1.5)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorConfig {
    pub n_sims: u32,
    pub analyses_per_sim: u32,
    /// Sequential per-iteration time shared by every simulation, seconds.
    pub sim_seq_time: f64,
    /// Analysis times are drawn uniformly from this multiple of `sim_seq_time`.
    #[serde(default = "default_time_range")]
    pub analysis_time_range: (f64, f64),
    /// Bytes each analysis reads per iteration.
    pub data_volume: f64,
    pub n_steps: u32,
    #[serde(default)]
    pub seed: u64,
    /// Per-node memory footprint of every simulation, bytes.
    #[serde(default)]
    pub sim_mem: f64,
    /// Analysis footprints are drawn uniformly from this range, bytes.
    #[serde(default)]
    pub analysis_mem_range: (f64, f64),
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            n_sims: 4,
            analyses_per_sim: 4,
            sim_seq_time: 100.0,
            analysis_time_range: default_time_range(),
            data_volume: 4e9,
            n_steps: 50,
            seed: 0,
            sim_mem: 0.0,
            analysis_mem_range: (0.0, 0.0),
        }
    }
}

impl GeneratorConfig {
    /// Every problem with the config, one message each.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        let mut need = |ok: bool, msg: &str| {
            if !ok {
                out.push(msg.to_string());
            }
        };
        need(self.n_sims > 0, "generator.n_sims must be positive");
        need(self.analyses_per_sim > 0, "generator.analyses_per_sim must be positive");
        need(self.sim_seq_time > 0.0 && self.sim_seq_time.is_finite(), "generator.sim_seq_time must be positive");
        let (lo, hi) = self.analysis_time_range;
        need(lo > 0.0 && lo <= hi && hi.is_finite(), "generator.analysis_time_range needs 0 < lo <= hi");
        need(self.data_volume >= 0.0 && self.data_volume.is_finite(), "generator.data_volume must be non-negative");
        need(self.n_steps > 0, "generator.n_steps must be positive");
        need(self.sim_mem >= 0.0 && self.sim_mem.is_finite(), "generator.sim_mem must be non-negative");
        let (mlo, mhi) = self.analysis_mem_range;
        need(mlo >= 0.0 && mlo <= mhi && mhi.is_finite(), "generator.analysis_mem_range needs 0 <= lo <= hi");
        out
    }
}

fn draw(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.gen_range(lo..=hi)
    }
}

/// Deterministic ensemble for `cfg.seed`. Times and memory footprints come
/// from separate random streams, so enabling memory leaves times unchanged.
pub fn generate_ensemble(cfg: &GeneratorConfig) -> Ensemble {
    let mut times = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut mems = ChaCha8Rng::seed_from_u64(cfg.seed);
    mems.set_stream(1);

    let mut ensemble = Ensemble {
        simulations: Vec::with_capacity(cfg.n_sims as usize),
        analyses: Vec::with_capacity((cfg.n_sims * cfg.analyses_per_sim) as usize),
        n_steps: cfg.n_steps,
    };
    for i in 0..cfg.n_sims {
        let sim_id = format!("S{i:03}");
        for j in 0..cfg.analyses_per_sim {
            ensemble.analyses.push(AnalysisSpec {
                id: format!("A{i:03}_{j:03}"),
                seq_time: draw(&mut times, cfg.analysis_time_range) * cfg.sim_seq_time,
                data_volume: cfg.data_volume,
                mem: draw(&mut mems, cfg.analysis_mem_range),
                coupled_sim: sim_id.clone(),
            });
        }
        ensemble.simulations.push(SimulationSpec {
            id: sim_id,
            seq_time: cfg.sim_seq_time,
            mem: cfg.sim_mem,
        });
    }
    ensemble
}

/// The largest `⌈x% |A|⌉` analyses by sequential time, longest first, ties by id.
pub fn largest_analyses(ensemble: &Ensemble, x: f64) -> Vec<AppId> {
    let n = ensemble.analyses.len();
    let count = ((x * n as f64 / 100.0) - 1e-9).ceil().clamp(0.0, n as f64) as usize;
    let mut sorted: Vec<&AnalysisSpec> = ensemble.analyses.iter().collect();
    sorted.sort_by(|a, b| b.seq_time.total_cmp(&a.seq_time).then_with(|| a.id.cmp(&b.id)));
    sorted.into_iter().take(count).map(|a| a.id.clone()).collect()
}

/// Partition of `ensemble` for `scenario`. Remote analyses form one group.
pub fn make_partition(ensemble: &Ensemble, scenario: ScenarioSpec) -> Partition {
    let remote = match scenario {
        ScenarioSpec::Ideal => return Partition::ideal(ensemble),
        ScenarioSpec::InTransit => return Partition::in_transit(ensemble),
        ScenarioSpec::IncreasingPct(x) => {
            let mut r = largest_analyses(ensemble, x);
            r.reverse();
            r
        }
        ScenarioSpec::DecreasingPct(x) => largest_analyses(ensemble, x),
    };
    let co: Vec<AppId> = ensemble
        .analyses
        .iter()
        .filter(|a| !remote.contains(&a.id))
        .map(|a| a.id.clone())
        .collect();
    let groups = if remote.is_empty() { Vec::new() } else { vec![remote] };
    Partition::new(ensemble, co, groups).expect("scenario partitions cover the ensemble")
}
