//! Sum-preserving rounding of rational allocations to whole nodes and cores.
//!
//! Every value becomes its floor or its ceiling and the total is preserved.
//! The `k = s - Σ⌊x⌋` round-ups go first to values below one (so nothing ends
//! at zero), then by descending priority weight, ties by id.
//!
//! When there are more sub-unit values than round-ups, no floor/ceiling
//! choice gives everyone a unit. Node and core rounding then *lift* the
//! rational values first (see [`lift_to_one`]) and report that they did.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{AllocationError, Allocation, AllocationKind, AppId, Application, Ensemble, NumericKind, Partition, Platform};
use crate::perf::q_sum;

/// Values this close to an integer are treated as that integer.
const SNAP: f64 = 1e-9;
/// Relative tolerance on `Σ values = s`.
const SUM_RTOL: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Error)]
pub enum RoundingError {
    #[error("cannot give each of {count} targets at least one unit out of {target_sum}")]
    Infeasible { target_sum: u64, count: usize },
    #[error("rational values sum to {sum}, expected {target_sum}")]
    SumMismatch { sum: f64, target_sum: u64 },
    #[error("target `{0}` has a non-positive or non-finite value")]
    NonPositive(String),
    #[error("no rational entry for `{0}`")]
    Missing(AppId),
    #[error(transparent)]
    Allocation(#[from] AllocationError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundingTarget {
    pub id: String,
    pub value: f64,
    pub weight: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundingPlan {
    pub targets: Vec<RoundingTarget>,
    pub target_sum: u64,
}

impl RoundingPlan {
    pub fn new(target_sum: u64) -> Self {
        RoundingPlan {
            targets: Vec::new(),
            target_sum,
        }
    }

    pub fn push(&mut self, id: impl Into<String>, value: f64, weight: f64) {
        self.targets.push(RoundingTarget {
            id: id.into(),
            value,
            weight,
        });
    }
}

fn round_values(plan: &RoundingPlan) -> Result<Vec<u64>, RoundingError> {
    let s = plan.target_sum;
    let count = plan.targets.len();
    if (s as usize) < count || count == 0 {
        return Err(RoundingError::Infeasible { target_sum: s, count });
    }
    if let Some(t) = plan.targets.iter().find(|t| !(t.value > 0.0 && t.value.is_finite())) {
        return Err(RoundingError::NonPositive(t.id.clone()));
    }
    let sum: f64 = plan.targets.iter().map(|t| t.value).sum();
    if (sum - s as f64).abs() > SUM_RTOL * s as f64 {
        return Err(RoundingError::SumMismatch { sum, target_sum: s });
    }

    let mut out = Vec::with_capacity(count);
    let mut fractional = Vec::new();
    for (i, t) in plan.targets.iter().enumerate() {
        let nearest = t.value.round();
        if (t.value - nearest).abs() <= SNAP * t.value.max(1.0) {
            out.push(nearest as u64);
        } else {
            out.push(t.value.floor() as u64);
            fractional.push(i);
        }
    }
    let floor_sum: u64 = out.iter().sum();
    let k = s
        .checked_sub(floor_sum)
        .filter(|&k| k as usize <= fractional.len())
        .ok_or(RoundingError::SumMismatch { sum, target_sum: s })?;

    fractional.sort_by(|&a, &b| {
        let (ta, tb) = (&plan.targets[a], &plan.targets[b]);
        (out[b] == 0)
            .cmp(&(out[a] == 0))
            .then(tb.weight.total_cmp(&ta.weight))
            .then_with(|| ta.id.cmp(&tb.id))
    });
    for &i in &fractional[..k as usize] {
        out[i] += 1;
    }
    if out.contains(&0) {
        return Err(RoundingError::Infeasible { target_sum: s, count });
    }
    Ok(out)
}

/// Rounds every target to its floor or ceiling so the total stays `target_sum`.
pub fn sum_preserving_round(plan: &RoundingPlan) -> Result<BTreeMap<String, u64>, RoundingError> {
    let values = round_values(plan)?;
    Ok(plan.targets.iter().map(|t| t.id.clone()).zip(values).collect())
}

/// Raises values below one to exactly one, taking the deficit from the
/// values above one in proportion to their excess. The total is unchanged
/// and the order of the values above one is preserved.
pub fn lift_to_one(values: &[f64]) -> Vec<f64> {
    let deficit: f64 = values.iter().filter(|v| **v < 1.0).map(|v| 1.0 - v).sum();
    let excess: f64 = values.iter().filter(|v| **v > 1.0).map(|v| v - 1.0).sum();
    if deficit == 0.0 || excess <= 0.0 {
        return values.iter().map(|v| v.max(1.0)).collect();
    }
    let keep = (1.0 - deficit / excess).max(0.0);
    values
        .iter()
        .map(|&v| if v <= 1.0 { 1.0 } else { 1.0 + (v - 1.0) * keep })
        .collect()
}

/// Result of node or core rounding.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rounded {
    pub values: Vec<u64>,
    /// The rational values that were rounded: the input, or its lifted form.
    pub source: Vec<f64>,
    pub lifted: bool,
}

fn round_or_lift(plan: RoundingPlan) -> Result<Rounded, RoundingError> {
    match round_values(&plan) {
        Ok(values) => Ok(Rounded {
            values,
            source: plan.targets.iter().map(|t| t.value).collect(),
            lifted: false,
        }),
        Err(RoundingError::Infeasible { .. }) if plan.target_sum as usize >= plan.targets.len() => {
            let raw: Vec<f64> = plan.targets.iter().map(|t| t.value).collect();
            let mut lifted = plan;
            for (t, v) in lifted.targets.iter_mut().zip(lift_to_one(&raw)) {
                t.value = v;
            }
            Ok(Rounded {
                values: round_values(&lifted)?,
                source: lifted.targets.iter().map(|t| t.value).collect(),
                lifted: true,
            })
        }
        Err(e) => Err(e),
    }
}

/// Integer node count per co-scheduling allocation, in layout order.
///
/// Simulation-based and analysis-only allocations are rounded together to
/// the platform's `N`. Priorities are `B Q(X)` for simulation-based and
/// `B Q(X) + U*(X)` for analysis-only allocations.
pub fn round_nodes(
    rational: &Allocation,
    partition: &Partition,
    ensemble: &Ensemble,
    platform: &Platform,
    u_star_per_group: &[f64],
) -> Result<Rounded, RoundingError> {
    let layout = partition.allocations(ensemble);
    let nodes = rational.allocation_nodes(&layout)?;
    let b = platform.bandwidth();
    let mut plan = RoundingPlan::new(platform.n_nodes as u64);
    for (alloc, n) in layout.iter().zip(nodes) {
        let q = q_sum(alloc.members.iter().filter_map(|id| ensemble.app(id)));
        let u = match alloc.kind {
            AllocationKind::AnalysisOnly { group } => u_star_per_group.get(group).copied().unwrap_or(0.0),
            AllocationKind::SimulationBased { .. } => 0.0,
        };
        plan.push(alloc.label(), n, b * q + u);
    }
    round_or_lift(plan)
}

/// Integer cores per member of one allocation; priority is `t(1)`.
pub fn round_cores(members: &[(AppId, f64, f64)], cores_per_node: u32) -> Result<Rounded, RoundingError> {
    let mut plan = RoundingPlan::new(cores_per_node as u64);
    for (id, cores, seq_time) in members {
        plan.push(id.clone(), *cores, *seq_time);
    }
    round_or_lift(plan)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Integerized {
    pub allocation: Allocation,
    /// Rounding steps that had to lift sub-unit values: `"nodes"` or an
    /// allocation label for its cores.
    pub lifted: Vec<String>,
}

/// Integer version of a rational allocation: nodes first, then cores.
pub fn integerize(
    rational: &Allocation,
    partition: &Partition,
    ensemble: &Ensemble,
    platform: &Platform,
    u_star_per_group: &[f64],
) -> Result<Integerized, RoundingError> {
    let layout = partition.allocations(ensemble);
    let nodes = round_nodes(rational, partition, ensemble, platform, u_star_per_group)?;
    let mut lifted = Vec::new();
    if nodes.lifted {
        lifted.push("nodes".to_string());
    }
    let mut out = Allocation::new(NumericKind::Integer);
    for (alloc, n) in layout.iter().zip(nodes.values) {
        let members = alloc
            .members
            .iter()
            .map(|id| {
                let r = rational.entries.get(id).ok_or_else(|| RoundingError::Missing(id.clone()))?;
                let t = ensemble.app(id).map_or(0.0, |a| a.seq_time());
                Ok((id.clone(), r.cores, t))
            })
            .collect::<Result<Vec<_>, RoundingError>>()?;
        let cores = round_cores(&members, platform.cores_per_node)?;
        if cores.lifted {
            lifted.push(alloc.label());
        }
        for ((id, _, _), c) in members.into_iter().zip(cores.values) {
            out.insert(id, n as f64, c as f64);
        }
    }
    out.check(&layout, platform)?;
    Ok(Integerized { allocation: out, lifted })
}
