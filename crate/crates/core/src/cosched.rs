//! Greedy search for a memory-sustainable partition.
//!
//! Start with every analysis next to its simulation, then keep evicting
//! analyses from over-full simulation allocations into analysis-only
//! allocations until every allocation fits in one node's memory.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coalloc::{co_alloc, CoallocError, RationalSolution};
use crate::model::{AllocationKind, AnalysisSpec, AppId, Application, Ensemble, Partition, PartitionError, Platform};

/// Slack on memory comparisons so summation order never flips a verdict.
const MEM_RTOL: f64 = 1e-12;

fn fits(used: f64, capacity: f64) -> bool {
    used <= capacity * (1.0 + MEM_RTOL)
}

#[derive(Clone, Debug, PartialEq, Error)]
pub enum CoschedError {
    #[error("`{id}` needs {mem} bytes per node on its own, nodes have {capacity}")]
    HardInfeasible { id: AppId, mem: f64, capacity: f64 },
    #[error("{allocations} allocations cannot fit on {nodes} nodes")]
    TooManyAllocations { allocations: usize, nodes: u32 },
    #[error(transparent)]
    Coalloc(#[from] CoallocError),
    #[error(transparent)]
    Partition(#[from] PartitionError),
}

/// Memory excess of one allocation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub allocation: String,
    pub excess: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityReport {
    /// No evictions needed and no analysis-only group over capacity.
    pub feasible: bool,
    /// Analyses to move out of simulation allocations, in eviction order.
    pub evicted: Vec<AppId>,
    pub violations: Vec<Violation>,
    /// Analysis-only groups whose members do not fit on one node together.
    pub oversized_groups: Vec<usize>,
}

/// Eviction priority: memory descending, then sequential time ascending, then id.
pub fn evict_order(candidates: &[&AnalysisSpec]) -> Vec<AppId> {
    let mut sorted = candidates.to_vec();
    sorted.sort_by(|a, b| {
        b.mem
            .total_cmp(&a.mem)
            .then(a.seq_time.total_cmp(&b.seq_time))
            .then_with(|| a.id.cmp(&b.id))
    });
    sorted.into_iter().map(|a| a.id.clone()).collect()
}

fn check_alone(ensemble: &Ensemble, platform: &Platform) -> Result<(), CoschedError> {
    let capacity = platform.mem_per_node;
    match ensemble.apps().find(|a| !fits(a.mem(), capacity)) {
        Some(a) => Err(CoschedError::HardInfeasible {
            id: a.id().to_string(),
            mem: a.mem(),
            capacity,
        }),
        None => Ok(()),
    }
}

/// Checks every allocation's per-node memory against the node capacity.
pub fn check_feasibility(
    ensemble: &Ensemble,
    partition: &Partition,
    platform: &Platform,
) -> Result<FeasibilityReport, CoschedError> {
    check_alone(ensemble, platform)?;
    let capacity = platform.mem_per_node;
    let mut report = FeasibilityReport {
        feasible: true,
        evicted: Vec::new(),
        violations: Vec::new(),
        oversized_groups: Vec::new(),
    };
    for alloc in partition.allocations(ensemble) {
        let total: f64 = alloc.members.iter().filter_map(|id| ensemble.app(id)).map(|a| a.mem()).sum();
        if fits(total, capacity) {
            continue;
        }
        report.violations.push(Violation {
            allocation: alloc.label(),
            excess: total - capacity,
        });
        match alloc.kind {
            AllocationKind::SimulationBased { .. } => {
                let analyses: Vec<&AnalysisSpec> = alloc.members[1..].iter().filter_map(|id| ensemble.analysis(id)).collect();
                let mut remaining = total;
                for id in evict_order(&analyses) {
                    if fits(remaining, capacity) {
                        break;
                    }
                    remaining -= ensemble.analysis(&id).map_or(0.0, |a| a.mem);
                    report.evicted.push(id);
                }
            }
            AllocationKind::AnalysisOnly { group } => report.oversized_groups.push(group),
        }
    }
    report.feasible = report.evicted.is_empty() && report.oversized_groups.is_empty();
    Ok(report)
}

/// Packs analyses into as few groups as first-fit decreasing finds, each within `capacity`.
pub fn pack_groups(analyses: &[&AnalysisSpec], capacity: f64) -> Vec<Vec<AppId>> {
    let total: f64 = analyses.iter().map(|a| a.mem).sum();
    if fits(total, capacity) {
        return if analyses.is_empty() {
            Vec::new()
        } else {
            vec![analyses.iter().map(|a| a.id.clone()).collect()]
        };
    }
    let mut bins: Vec<(f64, Vec<AppId>)> = Vec::new();
    for id in evict_order(analyses) {
        let m = analyses.iter().find(|a| a.id == id).map_or(0.0, |a| a.mem);
        match bins.iter_mut().find(|(used, _)| fits(*used + m, capacity)) {
            Some((used, members)) => {
                *used += m;
                members.push(id);
            }
            None => bins.push((m, vec![id])),
        }
    }
    bins.into_iter().map(|(_, members)| members).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoschedOutcome {
    pub partition: Partition,
    pub solution: RationalSolution,
    /// Feasibility rounds run, including the final successful one.
    pub iterations: usize,
}

/// Greedy sustainable partition plus its rational allocation.
pub fn co_sched(ensemble: &Ensemble, platform: &Platform) -> Result<CoschedOutcome, CoschedError> {
    check_alone(ensemble, platform)?;
    let mut partition = Partition::ideal(ensemble);
    let mut iterations = 0;
    loop {
        iterations += 1;
        let report = check_feasibility(ensemble, &partition, platform)?;
        if report.feasible {
            let allocations = ensemble.simulations.len() + partition.groups().len();
            if allocations > platform.n_nodes as usize {
                return Err(CoschedError::TooManyAllocations {
                    allocations,
                    nodes: platform.n_nodes,
                });
            }
            let solution = co_alloc(&partition, ensemble, platform)?;
            return Ok(CoschedOutcome {
                partition,
                solution,
                iterations,
            });
        }
        let remote: Vec<&AnalysisSpec> = partition
            .groups()
            .iter()
            .flatten()
            .chain(&report.evicted)
            .filter_map(|id| ensemble.analysis(id))
            .collect();
        let co: Vec<AppId> = partition
            .co_scheduled()
            .iter()
            .filter(|id| !report.evicted.contains(id))
            .cloned()
            .collect();
        partition = Partition::new(ensemble, co, pack_groups(&remote, platform.mem_per_node))?;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::SimulationSpec;

    const GB: f64 = 1e9;

    fn platform(mem: f64) -> Platform {
        Platform {
            n_nodes: 16,
            cores_per_node: 16,
            mem_per_node: mem,
            bandwidth_per_node: 10.0 * GB,
        }
    }

    fn ana(id: &str, sim: &str, t: f64, m: f64) -> AnalysisSpec {
        AnalysisSpec {
            id: id.into(),
            seq_time: t,
            data_volume: GB,
            mem: m * GB,
            coupled_sim: sim.into(),
        }
    }

    fn ensemble(sim_mem: &[f64], analyses: Vec<AnalysisSpec>) -> Ensemble {
        Ensemble {
            simulations: sim_mem
                .iter()
                .enumerate()
                .map(|(i, m)| SimulationSpec {
                    id: format!("S{i}"),
                    seq_time: 100.0,
                    mem: m * GB,
                })
                .collect(),
            analyses,
            n_steps: 1,
        }
    }

    #[test]
    fn order_by_memory_then_time_then_id() {
        let a1 = ana("A1", "S0", 50.0, 8.0);
        let a2 = ana("A2", "S0", 10.0, 16.0);
        let a3 = ana("A3", "S0", 40.0, 8.0);
        assert_eq!(evict_order(&[&a1, &a2, &a3]), vec!["A2", "A3", "A1"]);
        assert_eq!(evict_order(&[&a1]), vec!["A1"]);
        let b = ana("B", "S0", 50.0, 8.0);
        let a = ana("A", "S0", 50.0, 8.0);
        assert_eq!(evict_order(&[&b, &a]), vec!["A", "B"]);
    }

    #[test]
    fn fitting_allocation_is_feasible() {
        let e = ensemble(&[32.0], vec![ana("A0", "S0", 100.0, 8.0), ana("A1", "S0", 100.0, 8.0)]);
        let r = check_feasibility(&e, &Partition::ideal(&e), &platform(64.0 * GB)).unwrap();
        assert!(r.feasible);
        assert!(r.evicted.is_empty());
    }

    #[test]
    fn overfull_allocation_evicts_one() {
        let analyses = (0..5).map(|i| ana(&format!("A{i}"), "S0", 60.0 + i as f64, 8.0)).collect();
        let e = ensemble(&[32.0], analyses);
        let r = check_feasibility(&e, &Partition::ideal(&e), &platform(64.0 * GB)).unwrap();
        assert!(!r.feasible);
        // Equal memory: the shortest analysis goes first.
        assert_eq!(r.evicted, vec!["A0"]);
        assert_eq!(r.violations[0].excess, 8.0 * GB);
    }

    #[test]
    fn oversized_application_is_hard_infeasible() {
        let e = ensemble(&[80.0], vec![ana("A0", "S0", 100.0, 1.0)]);
        assert!(matches!(
            check_feasibility(&e, &Partition::ideal(&e), &platform(64.0 * GB)),
            Err(CoschedError::HardInfeasible { .. })
        ));
        assert!(matches!(co_sched(&e, &platform(64.0 * GB)), Err(CoschedError::HardInfeasible { .. })));
    }

    #[test]
    fn unconstrained_memory_keeps_ideal() {
        let e = ensemble(&[1.0, 1.0], vec![ana("A0", "S0", 100.0, 1.0), ana("A1", "S1", 100.0, 1.0)]);
        let out = co_sched(&e, &platform(64.0 * GB)).unwrap();
        assert_eq!(out.partition, Partition::ideal(&e));
        assert_eq!(out.iterations, 1);
    }

    #[test]
    fn only_overfull_allocation_loses_analyses() {
        let mut analyses: Vec<AnalysisSpec> = (0..5).map(|i| ana(&format!("A{i}"), "S0", 60.0 + i as f64, 8.0)).collect();
        analyses.push(ana("B0", "S1", 100.0, 8.0));
        let e = ensemble(&[32.0, 32.0], analyses);
        let out = co_sched(&e, &platform(64.0 * GB)).unwrap();
        assert_eq!(out.partition.groups(), &[vec!["A0".to_string()]]);
        assert!(out.partition.is_co_scheduled("B0"));
        assert_eq!(out.iterations, 2);
    }

    #[test]
    fn tight_memory_ends_in_transit() {
        let e = ensemble(&[60.0, 60.0], vec![ana("A0", "S0", 100.0, 8.0), ana("A1", "S1", 100.0, 8.0)]);
        let out = co_sched(&e, &platform(64.0 * GB)).unwrap();
        assert!(out.partition.co_scheduled().is_empty());
        assert_eq!(out.partition.n_not_co_scheduled(), 2);
        assert!(check_feasibility(&e, &out.partition, &platform(64.0 * GB)).unwrap().feasible);
    }

    #[test]
    fn overfull_remote_group_is_split() {
        let e = ensemble(&[60.0], (0..3).map(|i| ana(&format!("A{i}"), "S0", 100.0, 40.0)).collect());
        let out = co_sched(&e, &platform(64.0 * GB)).unwrap();
        assert_eq!(out.partition.groups().len(), 3);
        let grouped = Partition::new(&e, Vec::<AppId>::new(), vec![vec!["A0".into(), "A1".into(), "A2".into()]]).unwrap();
        let r = check_feasibility(&e, &grouped, &platform(64.0 * GB)).unwrap();
        assert_eq!(r.oversized_groups, vec![0]);
        assert!(!r.feasible);
    }

    #[test]
    fn first_fit_decreasing_packing() {
        let a = [ana("A", "S0", 1.0, 30.0), ana("B", "S0", 1.0, 40.0), ana("C", "S0", 1.0, 20.0), ana("D", "S0", 1.0, 10.0)];
        let refs: Vec<&AnalysisSpec> = a.iter().collect();
        let groups = pack_groups(&refs, 64.0 * GB);
        assert_eq!(groups, vec![vec!["B".to_string(), "C".into()], vec!["A".into(), "D".into()]]);
        assert_eq!(pack_groups(&refs[..1], 64.0 * GB), vec![vec!["A".to_string()]]);
    }

    #[test]
    fn too_many_groups_for_the_nodes() {
        let mut p = platform(64.0 * GB);
        p.n_nodes = 2;
        let e = ensemble(&[60.0], (0..2).map(|i| ana(&format!("A{i}"), "S0", 100.0, 40.0)).collect());
        assert!(matches!(co_sched(&e, &p), Err(CoschedError::TooManyAllocations { .. })));
    }
}
