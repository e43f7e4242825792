//! Domain types: platform, ensemble, partition and allocation.
//!
//! Everything here is an immutable value once built. Identifiers are opaque
//! strings and every algorithm that has to break a tie does so by ascending id.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Application identifier (simulation or analysis).
pub type AppId = String;

/// A homogeneous parallel machine.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Platform {
    /// Number of identical compute nodes.
    pub n_nodes: u32,
    /// Cores per node.
    pub cores_per_node: u32,
    /// Memory per node, bytes.
    pub mem_per_node: f64,
    /// Maximum bandwidth per node, bytes/second.
    pub bandwidth_per_node: f64,
}

impl Platform {
    pub fn nodes(&self) -> f64 {
        f64::from(self.n_nodes)
    }

    pub fn cores(&self) -> f64 {
        f64::from(self.cores_per_node)
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth_per_node
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSpec {
    pub id: AppId,
    /// Time of one iteration on a single core, seconds.
    pub seq_time: f64,
    /// Resident memory per node, bytes.
    #[serde(default)]
    pub mem: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisSpec {
    pub id: AppId,
    /// Time of one iteration on a single core, seconds.
    pub seq_time: f64,
    /// Bytes ingested per iteration (total over all nodes of the analysis).
    #[serde(default)]
    pub data_volume: f64,
    /// Resident memory per node, bytes.
    #[serde(default)]
    pub mem: f64,
    /// Simulation whose output this analysis consumes.
    pub coupled_sim: AppId,
}

/// Anything with a sequential per-iteration time and a memory footprint.
pub trait Application {
    fn id(&self) -> &str;
    fn seq_time(&self) -> f64;
    fn mem(&self) -> f64;
}

impl Application for SimulationSpec {
    fn id(&self) -> &str {
        &self.id
    }
    fn seq_time(&self) -> f64 {
        self.seq_time
    }
    fn mem(&self) -> f64 {
        self.mem
    }
}

impl Application for AnalysisSpec {
    fn id(&self) -> &str {
        &self.id
    }
    fn seq_time(&self) -> f64 {
        self.seq_time
    }
    fn mem(&self) -> f64 {
        self.mem
    }
}

impl<T: Application + ?Sized> Application for &T {
    fn id(&self) -> &str {
        (**self).id()
    }
    fn seq_time(&self) -> f64 {
        (**self).seq_time()
    }
    fn mem(&self) -> f64 {
        (**self).mem()
    }
}

/// Borrowed view of either kind of application.
#[derive(Clone, Copy, Debug)]
pub enum AppRef<'a> {
    Simulation(&'a SimulationSpec),
    Analysis(&'a AnalysisSpec),
}

impl Application for AppRef<'_> {
    fn id(&self) -> &str {
        match self {
            AppRef::Simulation(s) => &s.id,
            AppRef::Analysis(a) => &a.id,
        }
    }
    fn seq_time(&self) -> f64 {
        match self {
            AppRef::Simulation(s) => s.seq_time,
            AppRef::Analysis(a) => a.seq_time,
        }
    }
    fn mem(&self) -> f64 {
        match self {
            AppRef::Simulation(s) => s.mem,
            AppRef::Analysis(a) => a.mem,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Ensemble {
    pub simulations: Vec<SimulationSpec>,
    pub analyses: Vec<AnalysisSpec>,
    /// Number of iterations shared by every application.
    pub n_steps: u32,
}

impl Ensemble {
    pub fn simulation(&self, id: &str) -> Option<&SimulationSpec> {
        self.simulations.iter().find(|s| s.id == id)
    }

    pub fn analysis(&self, id: &str) -> Option<&AnalysisSpec> {
        self.analyses.iter().find(|a| a.id == id)
    }

    pub fn app(&self, id: &str) -> Option<AppRef<'_>> {
        self.simulation(id)
            .map(AppRef::Simulation)
            .or_else(|| self.analysis(id).map(AppRef::Analysis))
    }

    /// The coupling `p(S_i)`: analyses consuming the output of `sim_id`.
    pub fn coupled<'a>(&'a self, sim_id: &'a str) -> impl Iterator<Item = &'a AnalysisSpec> + 'a {
        self.analyses.iter().filter(move |a| a.coupled_sim == sim_id)
    }

    pub fn apps(&self) -> impl Iterator<Item = AppRef<'_>> {
        self.simulations
            .iter()
            .map(AppRef::Simulation)
            .chain(self.analyses.iter().map(AppRef::Analysis))
    }

    pub fn n_apps(&self) -> usize {
        self.simulations.len() + self.analyses.len()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum ValidationError {
    #[error("duplicate id `{0}`")]
    DuplicateId(AppId),
    #[error("dangling coupling: analysis `{analysis}` couples to unknown simulation `{sim}`")]
    DanglingCoupling { analysis: AppId, sim: AppId },
    #[error("uncovered simulation: `{0}` has no coupled analysis")]
    UncoveredSimulation(AppId),
    #[error("`{id}`: {field} must be {requirement}")]
    BadValue {
        id: AppId,
        field: &'static str,
        requirement: &'static str,
    },
    #[error("ensemble has no simulation")]
    Empty,
}

/// Every violation found, not just the first.
#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub struct ValidationErrors(pub Vec<ValidationError>);

impl fmt::Display for ValidationErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let msgs: Vec<String> = self.0.iter().map(ToString::to_string).collect();
        write!(f, "{}", msgs.join("; "))
    }
}

fn check_positive(errors: &mut Vec<ValidationError>, id: &str, field: &'static str, value: f64) {
    if !(value > 0.0 && value.is_finite()) {
        errors.push(ValidationError::BadValue {
            id: id.to_owned(),
            field,
            requirement: "strictly positive",
        });
    }
}

fn check_non_negative(errors: &mut Vec<ValidationError>, id: &str, field: &'static str, value: f64) {
    if !(value >= 0.0 && value.is_finite()) {
        errors.push(ValidationError::BadValue {
            id: id.to_owned(),
            field,
            requirement: "non-negative",
        });
    }
}

/// Checks the structural invariants of an ensemble against a platform.
pub fn validate(ensemble: &Ensemble, platform: &Platform) -> Result<(), ValidationErrors> {
    let mut errors = Vec::new();

    if platform.n_nodes == 0 || platform.cores_per_node == 0 {
        errors.push(ValidationError::BadValue {
            id: "platform".into(),
            field: "n_nodes/cores_per_node",
            requirement: "strictly positive",
        });
    }
    check_positive(&mut errors, "platform", "mem_per_node", platform.mem_per_node);
    check_positive(&mut errors, "platform", "bandwidth_per_node", platform.bandwidth_per_node);
    if ensemble.n_steps == 0 {
        errors.push(ValidationError::BadValue {
            id: "ensemble".into(),
            field: "n_steps",
            requirement: "strictly positive",
        });
    }
    if ensemble.simulations.is_empty() {
        errors.push(ValidationError::Empty);
    }

    let mut seen = BTreeSet::new();
    for id in ensemble
        .simulations
        .iter()
        .map(|s| &s.id)
        .chain(ensemble.analyses.iter().map(|a| &a.id))
    {
        if !seen.insert(id.as_str()) {
            errors.push(ValidationError::DuplicateId(id.clone()));
        }
    }

    for s in &ensemble.simulations {
        check_positive(&mut errors, &s.id, "seq_time", s.seq_time);
        check_non_negative(&mut errors, &s.id, "mem", s.mem);
    }
    let sim_ids: BTreeSet<&str> = ensemble.simulations.iter().map(|s| s.id.as_str()).collect();
    for a in &ensemble.analyses {
        check_positive(&mut errors, &a.id, "seq_time", a.seq_time);
        check_non_negative(&mut errors, &a.id, "data_volume", a.data_volume);
        check_non_negative(&mut errors, &a.id, "mem", a.mem);
        if !sim_ids.contains(a.coupled_sim.as_str()) {
            errors.push(ValidationError::DanglingCoupling {
                analysis: a.id.clone(),
                sim: a.coupled_sim.clone(),
            });
        }
    }
    for s in &ensemble.simulations {
        if ensemble.coupled(&s.id).next().is_none() {
            errors.push(ValidationError::UncoveredSimulation(s.id.clone()));
        }
    }

    if errors.is_empty() {
        Ok(())
    } else {
        Err(ValidationErrors(errors))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum PartitionError {
    #[error("unknown analysis `{0}` in partition")]
    UnknownAnalysis(AppId),
    #[error("analysis `{0}` appears more than once")]
    Overlap(AppId),
    #[error("analysis `{0}` is not covered by the partition")]
    Uncovered(AppId),
    #[error("analysis-only group {0} is empty")]
    EmptyGroup(usize),
    #[error("unknown simulation `{0}`")]
    UnknownSimulation(AppId),
}

/// Split of the analyses into those co-scheduled with their coupled simulation
/// (`P^C`) and the analysis-only groups `P_1^NC ... P_L^NC`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    co_scheduled: BTreeSet<AppId>,
    not_co_scheduled: Vec<Vec<AppId>>,
}

impl Partition {
    /// Builds a partition and checks it covers the ensemble's analyses exactly once.
    pub fn new(
        ensemble: &Ensemble,
        co_scheduled: impl IntoIterator<Item = AppId>,
        not_co_scheduled: Vec<Vec<AppId>>,
    ) -> Result<Self, PartitionError> {
        let co_scheduled: Vec<AppId> = co_scheduled.into_iter().collect();
        let mut seen = BTreeSet::new();
        for id in co_scheduled.iter().chain(not_co_scheduled.iter().flatten()) {
            if ensemble.analysis(id).is_none() {
                return Err(PartitionError::UnknownAnalysis(id.clone()));
            }
            if !seen.insert(id.clone()) {
                return Err(PartitionError::Overlap(id.clone()));
            }
        }
        if let Some(i) = not_co_scheduled.iter().position(Vec::is_empty) {
            return Err(PartitionError::EmptyGroup(i));
        }
        if let Some(a) = ensemble.analyses.iter().find(|a| !seen.contains(&a.id)) {
            return Err(PartitionError::Uncovered(a.id.clone()));
        }
        Ok(Partition {
            co_scheduled: co_scheduled.into_iter().collect(),
            not_co_scheduled,
        })
    }

    /// Every analysis with its coupled simulation.
    pub fn ideal(ensemble: &Ensemble) -> Self {
        Partition {
            co_scheduled: ensemble.analyses.iter().map(|a| a.id.clone()).collect(),
            not_co_scheduled: Vec::new(),
        }
    }

    /// Every analysis in a single analysis-only group.
    pub fn in_transit(ensemble: &Ensemble) -> Self {
        let group: Vec<AppId> = ensemble.analyses.iter().map(|a| a.id.clone()).collect();
        Partition {
            co_scheduled: BTreeSet::new(),
            not_co_scheduled: if group.is_empty() { Vec::new() } else { vec![group] },
        }
    }

    pub fn co_scheduled(&self) -> &BTreeSet<AppId> {
        &self.co_scheduled
    }

    pub fn groups(&self) -> &[Vec<AppId>] {
        &self.not_co_scheduled
    }

    pub fn is_co_scheduled(&self, analysis: &str) -> bool {
        self.co_scheduled.contains(analysis)
    }

    /// Number of analyses outside `P^C`.
    pub fn n_not_co_scheduled(&self) -> usize {
        self.not_co_scheduled.iter().map(Vec::len).sum()
    }

    /// Co-scheduling allocations in canonical order: one per simulation (in
    /// ensemble order), then one per analysis-only group.
    pub fn allocations(&self, ensemble: &Ensemble) -> Vec<CoAllocation> {
        let mut out = Vec::with_capacity(ensemble.simulations.len() + self.not_co_scheduled.len());
        for s in &ensemble.simulations {
            let mut members = vec![s.id.clone()];
            members.extend(
                ensemble
                    .coupled(&s.id)
                    .filter(|a| self.co_scheduled.contains(&a.id))
                    .map(|a| a.id.clone()),
            );
            out.push(CoAllocation {
                kind: AllocationKind::SimulationBased { sim: s.id.clone() },
                members,
            });
        }
        for (i, g) in self.not_co_scheduled.iter().enumerate() {
            out.push(CoAllocation {
                kind: AllocationKind::AnalysisOnly { group: i },
                members: g.clone(),
            });
        }
        out
    }
}

/// `m(S_i) = p(S_i) ∩ P^C`.
pub fn mapping_of(
    partition: &Partition,
    ensemble: &Ensemble,
    sim_id: &str,
) -> Result<BTreeSet<AppId>, PartitionError> {
    if ensemble.simulation(sim_id).is_none() {
        return Err(PartitionError::UnknownSimulation(sim_id.to_owned()));
    }
    Ok(ensemble
        .coupled(sim_id)
        .filter(|a| partition.is_co_scheduled(&a.id))
        .map(|a| a.id.clone())
        .collect())
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum AllocationKind {
    SimulationBased { sim: AppId },
    AnalysisOnly { group: usize },
}

/// A set of applications sharing the same nodes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoAllocation {
    pub kind: AllocationKind,
    /// For simulation-based allocations the simulation comes first.
    pub members: Vec<AppId>,
}

impl CoAllocation {
    pub fn label(&self) -> String {
        match &self.kind {
            AllocationKind::SimulationBased { sim } => sim.clone(),
            AllocationKind::AnalysisOnly { group } => format!("NC{group}"),
        }
    }

    pub fn is_analysis_only(&self) -> bool {
        matches!(self.kind, AllocationKind::AnalysisOnly { .. })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NumericKind {
    Rational,
    Integer,
}

/// Nodes and cores-per-node of one application.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Resources {
    pub nodes: f64,
    pub cores: f64,
}

#[derive(Clone, Debug, PartialEq, Error)]
pub enum AllocationError {
    #[error("no allocation entry for `{0}`")]
    Missing(AppId),
    #[error("`{0}` has non-positive nodes or cores")]
    NonPositive(AppId),
    #[error("`{0}` has a fractional resource count in an integer allocation")]
    NotIntegral(AppId),
    #[error("members of allocation `{0}` disagree on node count")]
    NodeMismatch(String),
    #[error("allocation `{label}` uses {used} cores per node, capacity is {capacity}")]
    CoreCapacity { label: String, used: f64, capacity: f64 },
    #[error("allocations use {used} nodes, capacity is {capacity}")]
    NodeCapacity { used: f64, capacity: f64 },
}

/// Per-application resources, rational or integer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    pub kind: NumericKind,
    pub entries: BTreeMap<AppId, Resources>,
}

const CAPACITY_RTOL: f64 = 1e-9;

impl Allocation {
    pub fn new(kind: NumericKind) -> Self {
        Allocation {
            kind,
            entries: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, id: impl Into<AppId>, nodes: f64, cores: f64) {
        self.entries.insert(id.into(), Resources { nodes, cores });
    }

    pub fn get(&self, id: &str) -> Result<Resources, AllocationError> {
        self.entries
            .get(id)
            .copied()
            .ok_or_else(|| AllocationError::Missing(id.to_owned()))
    }

    /// Node count of every co-scheduling allocation, in layout order.
    pub fn allocation_nodes(&self, layout: &[CoAllocation]) -> Result<Vec<f64>, AllocationError> {
        layout
            .iter()
            .map(|alloc| self.get(&alloc.members[0]).map(|r| r.nodes))
            .collect()
    }

    /// Checks positivity, integrality, node agreement and both capacity bounds.
    pub fn check(&self, layout: &[CoAllocation], platform: &Platform) -> Result<(), AllocationError> {
        let mut total_nodes = 0.0;
        for alloc in layout {
            let mut nodes = None;
            let mut cores = 0.0;
            for id in &alloc.members {
                let r = self.get(id)?;
                if !(r.nodes > 0.0 && r.cores > 0.0) {
                    return Err(AllocationError::NonPositive(id.clone()));
                }
                if self.kind == NumericKind::Integer && (r.nodes.fract() != 0.0 || r.cores.fract() != 0.0) {
                    return Err(AllocationError::NotIntegral(id.clone()));
                }
                match nodes {
                    None => nodes = Some(r.nodes),
                    Some(n) if (n - r.nodes).abs() > CAPACITY_RTOL * n => {
                        return Err(AllocationError::NodeMismatch(alloc.label()));
                    }
                    _ => {}
                }
                cores += r.cores;
            }
            let capacity = platform.cores();
            if cores > capacity * (1.0 + CAPACITY_RTOL) {
                return Err(AllocationError::CoreCapacity {
                    label: alloc.label(),
                    used: cores,
                    capacity,
                });
            }
            total_nodes += nodes.unwrap_or(0.0);
        }
        if total_nodes > platform.nodes() * (1.0 + CAPACITY_RTOL) {
            return Err(AllocationError::NodeCapacity {
                used: total_nodes,
                capacity: platform.nodes(),
            });
        }
        Ok(())
    }

    /// Compact `label:nodes x cores/...` rendering used in result rows.
    pub fn digest(&self, layout: &[CoAllocation]) -> String {
        layout
            .iter()
            .map(|alloc| {
                let nodes = self.entries.get(&alloc.members[0]).map_or(f64::NAN, |r| r.nodes);
                let cores: Vec<String> = alloc
                    .members
                    .iter()
                    .map(|id| {
                        self.entries
                            .get(id)
                            .map_or_else(|| "?".to_owned(), |r| fmt_num(r.cores))
                    })
                    .collect();
                format!("{}:{}x{}", alloc.label(), fmt_num(nodes), cores.join("+"))
            })
            .collect::<Vec<_>>()
            .join(" ")
    }
}

fn fmt_num(v: f64) -> String {
    if v.fract() == 0.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.3}")
    }
}
