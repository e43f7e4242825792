//! Analytical performance model.
//!
//! Perfectly parallel computation, a linear bandwidth model for remote reads
//! and free intra-node communication. Times are seconds, volumes bytes,
//! bandwidths bytes per second.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{AllocationError, AnalysisSpec, AppId, Allocation, Application, Ensemble, Partition, Platform, SimulationSpec};

#[derive(Clone, Debug, PartialEq, Error)]
pub enum PerfError {
    #[error("resources must be strictly positive (nodes={nodes}, cores={cores})")]
    NonPositiveResources { nodes: f64, cores: f64 },
    #[error("bandwidth must be strictly positive, got {0}")]
    NonPositiveBandwidth(f64),
    #[error(transparent)]
    Allocation(#[from] AllocationError),
}

fn check_resources(nodes: f64, cores: f64) -> Result<(), PerfError> {
    if nodes > 0.0 && cores > 0.0 {
        Ok(())
    } else {
        Err(PerfError::NonPositiveResources { nodes, cores })
    }
}

/// Time of one simulation iteration on `nodes` nodes with `cores` cores each.
pub fn iter_time_sim(sim: &SimulationSpec, nodes: f64, cores: f64) -> Result<f64, PerfError> {
    check_resources(nodes, cores)?;
    Ok(sim.seq_time / (nodes * cores))
}

/// Time of one analysis iteration; remote analyses pay `V / (B n)` on top.
pub fn iter_time_analysis(
    analysis: &AnalysisSpec,
    nodes: f64,
    cores: f64,
    co_located: bool,
    bandwidth: f64,
) -> Result<f64, PerfError> {
    check_resources(nodes, cores)?;
    if !(bandwidth > 0.0) {
        return Err(PerfError::NonPositiveBandwidth(bandwidth));
    }
    let compute = analysis.seq_time / (nodes * cores);
    if co_located {
        Ok(compute)
    } else {
        Ok(compute + analysis.data_volume / (bandwidth * nodes))
    }
}

/// `Q(X)`: total sequential time of a set of applications.
pub fn q_sum<A: Application>(apps: impl IntoIterator<Item = A>) -> f64 {
    apps.into_iter().map(|a| a.seq_time()).sum()
}

/// `U(X) = Σ c_x V_x`: remote processing cost.
pub fn u_sum<'a>(apps: impl IntoIterator<Item = (&'a AnalysisSpec, f64)>) -> f64 {
    apps.into_iter().map(|(a, cores)| cores * a.data_volume).sum()
}

/// Modeled per-iteration time of every application under `allocation`.
pub fn iteration_times(
    ensemble: &Ensemble,
    partition: &Partition,
    allocation: &Allocation,
    bandwidth: f64,
) -> Result<BTreeMap<AppId, f64>, PerfError> {
    let mut out = BTreeMap::new();
    for s in &ensemble.simulations {
        let r = allocation.get(&s.id)?;
        out.insert(s.id.clone(), iter_time_sim(s, r.nodes, r.cores)?);
    }
    for a in &ensemble.analyses {
        let r = allocation.get(&a.id)?;
        let t = iter_time_analysis(a, r.nodes, r.cores, partition.is_co_scheduled(&a.id), bandwidth)?;
        out.insert(a.id.clone(), t);
    }
    Ok(out)
}

/// `n_steps` times the slowest application's iteration time.
pub fn modeled_makespan(
    ensemble: &Ensemble,
    partition: &Partition,
    allocation: &Allocation,
    bandwidth: f64,
) -> Result<f64, PerfError> {
    let times = iteration_times(ensemble, partition, allocation, bandwidth)?;
    let worst = times.values().copied().fold(0.0, f64::max);
    Ok(worst * f64::from(ensemble.n_steps))
}

/// Minimal equalized iteration time of one co-scheduling allocation:
/// `(B Q + U) / (B C n)`, where `u_remote` only counts members that are not
/// coupled to the allocation's simulation.
pub fn lemma1_alloc_time(
    q_total: f64,
    u_remote: f64,
    nodes: f64,
    platform: &Platform,
    bandwidth: f64,
) -> Result<f64, PerfError> {
    check_resources(nodes, platform.cores())?;
    if !(bandwidth > 0.0) {
        return Err(PerfError::NonPositiveBandwidth(bandwidth));
    }
    Ok((bandwidth * q_total + u_remote) / (bandwidth * platform.cores() * nodes))
}

/// Bandwidth models used to calibrate the analytical model against contention.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BandwidthModel {
    /// `B`
    Baseline,
    /// `B / |P^NC|`
    B1,
    /// `B / Ñ`
    B2,
    /// `B / (Ñ |P^NC|)`
    B3,
}

impl BandwidthModel {
    pub const ALL: [BandwidthModel; 4] = [BandwidthModel::Baseline, BandwidthModel::B1, BandwidthModel::B2, BandwidthModel::B3];
}

impl fmt::Display for BandwidthModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BandwidthModel::Baseline => "baseline",
            BandwidthModel::B1 => "b1",
            BandwidthModel::B2 => "b2",
            BandwidthModel::B3 => "b3",
        })
    }
}

impl FromStr for BandwidthModel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "baseline" | "b" => Ok(BandwidthModel::Baseline),
            "b1" => Ok(BandwidthModel::B1),
            "b2" => Ok(BandwidthModel::B2),
            "b3" => Ok(BandwidthModel::B3),
            other => Err(format!("unknown calibration `{other}` (expected baseline|b1|b2|b3)")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationModel {
    pub variant: BandwidthModel,
    /// Effective bandwidth plugged into the remote-read term, bytes/second.
    pub bandwidth: f64,
}

/// Effective bandwidth of `variant`. Degenerate denominators (no remote
/// analysis, or no analysis-only nodes) fall back to the platform bandwidth.
pub fn calibrate_bandwidth(
    platform: &Platform,
    partition: &Partition,
    n_tilde: f64,
    variant: BandwidthModel,
) -> CalibrationModel {
    let b = platform.bandwidth();
    let remote = partition.n_not_co_scheduled() as f64;
    let bandwidth = match variant {
        BandwidthModel::Baseline => b,
        BandwidthModel::B1 if remote > 0.0 => b / remote,
        BandwidthModel::B2 if n_tilde > 0.0 => b / n_tilde,
        BandwidthModel::B3 if n_tilde > 0.0 && remote > 0.0 => b / (n_tilde * remote),
        _ => b,
    };
    CalibrationModel { variant, bandwidth }
}
