//! Rational makespan-minimizing resource allocation for a fixed partition,
//! plus the even-split baseline.
//!
//! Analysis-only groups are sized first: each group's remote-processing cost
//! `U*` is the unique root of
//!
//! ```text
//!   Σ_k Q(A_k) / (B Q(P) + U - C V_k) = 1 / B
//! ```
//!
//! after which node shares follow in closed form. The remaining nodes go to the
//! simulation-based allocations in proportion to their sequential time. The
//! result equalizes every application's modeled iteration time.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{AnalysisSpec, AppId, Allocation, CoAllocation, Ensemble, NumericKind, Partition, PartitionError, Platform};
use crate::perf::q_sum;

#[derive(Clone, Debug, PartialEq, Error)]
pub enum CoallocError {
    #[error(transparent)]
    Partition(#[from] PartitionError),
    #[error("analysis-only group {0} is empty")]
    EmptyGroup(usize),
    #[error("root bracket failure on [{lo}, {hi}] (residuals {f_lo}, {f_hi})")]
    BracketFailure { lo: f64, hi: f64, f_lo: f64, f_hi: f64 },
    #[error("analysis `{analysis}` in group {group}: core denominator is not positive")]
    VolumeInfeasible { group: usize, analysis: AppId },
    #[error("analysis-only allocations take {n_tilde} of {n_nodes} nodes; nothing left for simulations")]
    InfeasiblePartition { n_tilde: f64, n_nodes: f64 },
}

/// Solved root of one analysis-only group.
#[derive(Clone, Debug)]
struct GroupRoot {
    u_star: f64,
    /// `B Q + U* - C V_max`, kept separately so core denominators avoid cancellation.
    gap: f64,
    v_max: f64,
}

impl GroupRoot {
    fn denominator(&self, v: f64, cores: f64) -> f64 {
        self.gap + cores * (self.v_max - v)
    }
}

fn solve_group(group: &[&AnalysisSpec], platform: &Platform) -> Result<GroupRoot, CoallocError> {
    let b = platform.bandwidth();
    let c = platform.cores();
    let q = q_sum(group.iter().copied());
    let v_max = group.iter().map(|a| a.data_volume).fold(f64::NEG_INFINITY, f64::max);

    // Equal volumes (including singletons): the root is U* = C V in closed form.
    if group.iter().all(|a| a.data_volume == v_max) {
        let u_star = c * v_max;
        return Ok(GroupRoot {
            u_star,
            gap: b * q,
            v_max,
        });
    }

    // Parametrize by g = B Q + U - C V_max > 0. The normalized residual
    // F(g) = B Σ Q_k / (g + C (V_max - V_k)) - 1 is strictly decreasing, and
    // the root lies in [B Q_k*, B Q] where k* carries the largest volume.
    let residual = |g: f64| -> f64 {
        b * group
            .iter()
            .map(|a| a.seq_time / (g + c * (v_max - a.data_volume)))
            .sum::<f64>()
            - 1.0
    };
    let q_top = group
        .iter()
        .filter(|a| a.data_volume == v_max)
        .map(|a| a.seq_time)
        .fold(0.0, f64::max);
    let (mut lo, mut hi) = (b * q_top, b * q);
    let (f_lo, f_hi) = (residual(lo), residual(hi));
    if !(f_lo >= 0.0 && f_hi <= 0.0) {
        return Err(CoallocError::BracketFailure { lo, hi, f_lo, f_hi });
    }
    loop {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let f = residual(mid);
        if f == 0.0 {
            lo = mid;
            hi = mid;
            break;
        }
        if f > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let gap = if residual(lo).abs() <= residual(hi).abs() { lo } else { hi };
    Ok(GroupRoot {
        u_star: gap + c * v_max - b * q,
        gap,
        v_max,
    })
}

/// Solves for the remote-processing cost `U*` of one analysis-only group.
pub fn solve_u_star(group: &[&AnalysisSpec], platform: &Platform) -> Result<f64, CoallocError> {
    if group.is_empty() {
        return Err(CoallocError::EmptyGroup(0));
    }
    solve_group(group, platform).map(|r| r.u_star)
}

/// Relative residual `|LHS(U) - 1/B| / (1/B)` of the group's core-balance equation.
pub fn u_star_residual(group: &[&AnalysisSpec], u: f64, platform: &Platform) -> f64 {
    let b = platform.bandwidth();
    let c = platform.cores();
    let q = q_sum(group.iter().copied());
    let lhs: f64 = group
        .iter()
        .map(|a| a.seq_time / (b * q + u - c * a.data_volume))
        .sum();
    (lhs * b - 1.0).abs()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupAllocation {
    pub members: Vec<AppId>,
    pub u_star: f64,
    pub nodes: f64,
    /// Cores per node for each member, in member order.
    pub cores: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalysisOnlySolution {
    pub groups: Vec<GroupAllocation>,
    /// Total nodes of analysis-only allocations.
    pub n_tilde: f64,
}

fn resolve_group<'a>(ensemble: &'a Ensemble, ids: &[AppId]) -> Result<Vec<&'a AnalysisSpec>, CoallocError> {
    ids.iter()
        .map(|id| {
            ensemble
                .analysis(id)
                .ok_or_else(|| CoallocError::Partition(PartitionError::UnknownAnalysis(id.clone())))
        })
        .collect()
}

/// Node and core assignment of every analysis-only group.
pub fn alloc_analysis_only(
    partition: &Partition,
    ensemble: &Ensemble,
    platform: &Platform,
) -> Result<AnalysisOnlySolution, CoallocError> {
    if partition.groups().is_empty() {
        return Ok(AnalysisOnlySolution {
            groups: Vec::new(),
            n_tilde: 0.0,
        });
    }
    let b = platform.bandwidth();
    let c = platform.cores();

    let mut solved = Vec::with_capacity(partition.groups().len());
    for (i, ids) in partition.groups().iter().enumerate() {
        if ids.is_empty() {
            return Err(CoallocError::EmptyGroup(i));
        }
        let members = resolve_group(ensemble, ids)?;
        let root = solve_group(&members, platform)?;
        solved.push((members, root));
    }

    let u_total: f64 = solved.iter().map(|(_, r)| r.u_star).sum();
    let denominator = b * q_sum(ensemble.apps()) + u_total;

    let mut groups = Vec::with_capacity(solved.len());
    for (i, (members, root)) in solved.into_iter().enumerate() {
        let q_group = q_sum(members.iter().copied());
        let nodes = (b * q_group + root.u_star) / denominator * platform.nodes();
        let mut cores = Vec::with_capacity(members.len());
        for a in &members {
            let d = root.denominator(a.data_volume, c);
            if !(d > 0.0) {
                return Err(CoallocError::VolumeInfeasible {
                    group: i,
                    analysis: a.id.clone(),
                });
            }
            cores.push(b * a.seq_time / d * c);
        }
        groups.push(GroupAllocation {
            members: members.iter().map(|a| a.id.clone()).collect(),
            u_star: root.u_star,
            nodes,
            cores,
        });
    }
    let n_tilde = groups.iter().map(|g| g.nodes).sum();
    Ok(AnalysisOnlySolution { groups, n_tilde })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimBasedAllocation {
    pub sim: AppId,
    pub nodes: f64,
    /// Members (simulation first) with their cores per node.
    pub cores: Vec<(AppId, f64)>,
}

/// Splits the `N - Ñ` remaining nodes among simulation-based allocations.
pub fn alloc_simulation_based(
    partition: &Partition,
    ensemble: &Ensemble,
    platform: &Platform,
    n_tilde: f64,
) -> Result<Vec<SimBasedAllocation>, CoallocError> {
    let n = platform.nodes();
    if !(n_tilde < n) {
        return Err(CoallocError::InfeasiblePartition { n_tilde, n_nodes: n });
    }
    let layout: Vec<CoAllocation> = partition
        .allocations(ensemble)
        .into_iter()
        .filter(|a| !a.is_analysis_only())
        .collect();
    let q_of = |alloc: &CoAllocation| -> f64 { q_sum(alloc.members.iter().filter_map(|id| ensemble.app(id))) };
    let q_co: f64 = layout.iter().map(q_of).sum();
    let c = platform.cores();

    Ok(layout
        .iter()
        .map(|alloc| {
            let q_alloc = q_of(alloc);
            let cores = alloc
                .members
                .iter()
                .map(|id| {
                    let t = ensemble.app(id).map_or(0.0, |a| crate::model::Application::seq_time(&a));
                    (id.clone(), t / q_alloc * c)
                })
                .collect();
            SimBasedAllocation {
                sim: alloc.members[0].clone(),
                nodes: q_alloc / q_co * (n - n_tilde),
                cores,
            }
        })
        .collect())
}

/// Full rational solution for one partition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RationalSolution {
    pub allocation: Allocation,
    pub n_tilde: f64,
    pub u_star_per_group: Vec<f64>,
    /// The common per-iteration time `t*` every application reaches.
    pub equalized_time: f64,
}

/// Makespan-minimizing rational allocation for `partition`.
pub fn co_alloc(partition: &Partition, ensemble: &Ensemble, platform: &Platform) -> Result<RationalSolution, CoallocError> {
    let analysis_only = alloc_analysis_only(partition, ensemble, platform)?;
    let sim_based = alloc_simulation_based(partition, ensemble, platform, analysis_only.n_tilde)?;

    let mut allocation = Allocation::new(NumericKind::Rational);
    for s in &sim_based {
        for (id, cores) in &s.cores {
            allocation.insert(id.clone(), s.nodes, *cores);
        }
    }
    for g in &analysis_only.groups {
        for (id, cores) in g.members.iter().zip(&g.cores) {
            allocation.insert(id.clone(), g.nodes, *cores);
        }
    }

    let b = platform.bandwidth();
    let u_star_per_group: Vec<f64> = analysis_only.groups.iter().map(|g| g.u_star).collect();
    let u_total: f64 = u_star_per_group.iter().sum();
    let equalized_time = (b * q_sum(ensemble.apps()) + u_total) / (platform.nodes() * b * platform.cores());

    Ok(RationalSolution {
        allocation,
        n_tilde: analysis_only.n_tilde,
        u_star_per_group,
        equalized_time,
    })
}

/// How one level (nodes or cores) of the allocation is decided.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Level {
    CoAlloc,
    EvAlloc,
}

/// `(n: node level, c: core level)` policy pair, written `co:ev` and so on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct AllocPolicy {
    pub node: Level,
    pub core: Level,
}

impl AllocPolicy {
    pub const CO_CO: AllocPolicy = AllocPolicy {
        node: Level::CoAlloc,
        core: Level::CoAlloc,
    };
    pub const ALL: [AllocPolicy; 4] = [
        AllocPolicy::CO_CO,
        AllocPolicy {
            node: Level::CoAlloc,
            core: Level::EvAlloc,
        },
        AllocPolicy {
            node: Level::EvAlloc,
            core: Level::CoAlloc,
        },
        AllocPolicy {
            node: Level::EvAlloc,
            core: Level::EvAlloc,
        },
    ];
}

impl fmt::Display for AllocPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = |l: Level| match l {
            Level::CoAlloc => "co",
            Level::EvAlloc => "ev",
        };
        write!(f, "{}:{}", name(self.node), name(self.core))
    }
}

impl TryFrom<String> for AllocPolicy {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<AllocPolicy> for String {
    fn from(p: AllocPolicy) -> String {
        p.to_string()
    }
}

impl FromStr for AllocPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let level = |t: &str| match t.trim().to_ascii_lowercase().as_str() {
            "co" | "coalloc" | "co-alloc" => Ok(Level::CoAlloc),
            "ev" | "evalloc" | "ev-alloc" => Ok(Level::EvAlloc),
            other => Err(format!("unknown allocation level `{other}` (expected co|ev)")),
        };
        let (node, core) = s
            .split_once(':')
            .ok_or_else(|| format!("policy `{s}` must look like <node>:<core>"))?;
        Ok(AllocPolicy {
            node: level(node)?,
            core: level(core)?,
        })
    }
}

/// Even-split baseline, optionally mixed with the optimized split at one level.
///
/// Even nodes give every co-scheduling allocation `N / L`; even cores give
/// every member of an allocation `C / |members|`. The result is rational and
/// goes through [`crate::rounding::integerize`] like any other allocation.
pub fn ev_alloc(
    partition: &Partition,
    ensemble: &Ensemble,
    platform: &Platform,
    policy: AllocPolicy,
) -> Result<Allocation, CoallocError> {
    let solution = co_alloc(partition, ensemble, platform)?;
    Ok(apply_policy(&solution, partition, ensemble, platform, policy))
}

/// Mixes `solution` with the even split according to `policy`.
pub fn apply_policy(
    solution: &RationalSolution,
    partition: &Partition,
    ensemble: &Ensemble,
    platform: &Platform,
    policy: AllocPolicy,
) -> Allocation {
    if policy == AllocPolicy::CO_CO {
        return solution.allocation.clone();
    }
    let layout = partition.allocations(ensemble);
    let even_nodes = platform.nodes() / layout.len() as f64;
    let mut allocation = Allocation::new(NumericKind::Rational);
    for alloc in &layout {
        let even_cores = platform.cores() / alloc.members.len() as f64;
        for id in &alloc.members {
            let optimal = solution.allocation.entries[id];
            let nodes = match policy.node {
                Level::CoAlloc => optimal.nodes,
                Level::EvAlloc => even_nodes,
            };
            let cores = match policy.core {
                Level::CoAlloc => optimal.cores,
                Level::EvAlloc => even_cores,
            };
            allocation.insert(id.clone(), nodes, cores);
        }
    }
    allocation
}
