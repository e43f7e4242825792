//! Flow-level discrete-event simulation of an ensemble run.
//!
//! Each simulation iteration writes its current frame into node memory and
//! then computes the next one. Each analysis iteration reads the matching
//! frame and then computes. Reads between co-located applications are free.
//! Remote reads turn into network flows between node pairs, sharing each
//! node's bandwidth max-min fairly. A simulation may not overwrite its buffer
//! before every coupled analysis has read the previous frame(s).

use std::collections::BTreeMap;
use std::io;
use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{AllocationError, Allocation, AllocationKind, AppId, Application, Ensemble, Partition, Platform};

/// Relative tolerance used when matching event times.
const TIME_EPS: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Error)]
pub enum SimError {
    #[error(transparent)]
    Allocation(#[from] AllocationError),
    #[error("pipeline depth must be at least 1")]
    PipelineDepth,
    #[error("simulation stalled at t={time} with unfinished applications")]
    Stalled { time: f64 },
    #[error("modeled makespan must be positive")]
    ZeroModeled,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Stage {
    Write,
    Read,
    Compute,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Write => "write",
            Stage::Read => "read",
            Stage::Compute => "compute",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageEvent {
    pub app: AppId,
    pub iter: u32,
    pub stage: Stage,
    pub start: f64,
    pub end: f64,
}

/// Aggregate network activity over `[start, end)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BandwidthSegment {
    pub start: f64,
    pub end: f64,
    /// Sum of all flow rates, bytes/second.
    pub rate: f64,
    pub flows: usize,
}

/// How a remote analysis spread over several nodes obtains its input.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReadModel {
    /// Every node of the analysis pulls the whole frame (stages are
    /// replicated across the job's nodes).
    #[default]
    Replicated,
    /// Each node of the analysis pulls an equal slice of the frame.
    Split,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimOptions {
    /// Frames a simulation may run ahead of its slowest reader.
    pub pipeline_depth: u32,
    pub read_model: ReadModel,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            pipeline_depth: 1,
            read_model: ReadModel::Replicated,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub makespan: f64,
    pub timeline: Vec<StageEvent>,
    /// `(last end - first start) / n_steps` per application.
    pub mean_period: BTreeMap<AppId, f64>,
    pub bandwidth_trace: Vec<BandwidthSegment>,
    /// Bytes received per analysis over the whole run.
    pub bytes_delivered: BTreeMap<AppId, f64>,
}

/// Max-min fair rates for flows between node pairs, each node carrying at
/// most `capacity` bytes/second in total (incoming plus outgoing).
pub fn bandwidth_share(flows: &[(usize, usize)], n_nodes: usize, capacity: f64) -> Vec<f64> {
    let mut rates = vec![0.0; flows.len()];
    let mut frozen = vec![false; flows.len()];
    let mut left = vec![capacity; n_nodes];
    let mut count = vec![0usize; n_nodes];
    loop {
        count.iter_mut().for_each(|c| *c = 0);
        for (i, &(s, d)) in flows.iter().enumerate() {
            if !frozen[i] {
                count[s] += 1;
                count[d] += 1;
            }
        }
        let step = (0..n_nodes)
            .filter(|&n| count[n] > 0)
            .map(|n| left[n] / count[n] as f64)
            .fold(f64::INFINITY, f64::min);
        if !step.is_finite() {
            break;
        }
        let saturated: Vec<bool> = (0..n_nodes)
            .map(|n| count[n] > 0 && left[n] / count[n] as f64 <= step * (1.0 + TIME_EPS))
            .collect();
        for n in 0..n_nodes {
            left[n] = if saturated[n] { 0.0 } else { left[n] - step * count[n] as f64 };
        }
        for (i, &(s, d)) in flows.iter().enumerate() {
            if !frozen[i] {
                rates[i] += step;
                frozen[i] = saturated[s] || saturated[d];
            }
        }
    }
    rates
}

struct Flow {
    src: usize,
    dst: usize,
    remaining: f64,
    bytes: f64,
    reader: usize,
    rate: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Phase {
    Idle,
    Reading { start: f64, pending: usize },
    Computing { start: f64, until: f64 },
    Done,
}

enum Role {
    Simulation { readers: Vec<usize> },
    Analysis { producer: usize, remote: bool, volume: f64 },
}

struct AppState {
    id: AppId,
    role: Role,
    nodes: Range<usize>,
    duration: f64,
    iter: u32,
    /// Frames written (simulations) or read (analyses).
    progress: u32,
    phase: Phase,
    first_start: Option<f64>,
    last_end: f64,
}

fn near(a: f64, b: f64) -> bool {
    (a - b).abs() <= TIME_EPS * a.abs().max(b.abs()).max(1.0)
}

/// Runs the ensemble on an integer `allocation` and reports the timeline.
pub fn simulate(
    ensemble: &Ensemble,
    partition: &Partition,
    allocation: &Allocation,
    platform: &Platform,
    options: SimOptions,
) -> Result<SimReport, SimError> {
    if options.pipeline_depth == 0 {
        return Err(SimError::PipelineDepth);
    }
    let layout = partition.allocations(ensemble);
    allocation.check(&layout, platform)?;
    let node_counts = allocation.allocation_nodes(&layout)?;

    // Contiguous node ranges in layout order.
    let mut range_of: BTreeMap<&str, Range<usize>> = BTreeMap::new();
    let mut next = 0usize;
    for (alloc, n) in layout.iter().zip(&node_counts) {
        let r = next..next + n.round() as usize;
        next = r.end;
        for id in &alloc.members {
            range_of.insert(id.as_str(), r.clone());
        }
    }
    let n_nodes = next;
    let co_located: BTreeMap<&str, bool> = layout
        .iter()
        .flat_map(|a| {
            let local = matches!(a.kind, AllocationKind::SimulationBased { .. });
            a.members.iter().map(move |id| (id.as_str(), local))
        })
        .collect();

    let mut ids: Vec<&str> = ensemble
        .simulations
        .iter()
        .map(|s| s.id.as_str())
        .chain(ensemble.analyses.iter().map(|a| a.id.as_str()))
        .collect();
    ids.sort_unstable();
    let index: BTreeMap<&str, usize> = ids.iter().enumerate().map(|(i, id)| (*id, i)).collect();
    let mut apps: Vec<AppState> = ids
        .iter()
        .map(|&id| {
            let r = allocation.entries[id];
            let app = ensemble.app(id).expect("ids come from the ensemble");
            let role = match ensemble.analysis(id) {
                Some(a) => Role::Analysis {
                    producer: index[a.coupled_sim.as_str()],
                    remote: !co_located[id],
                    volume: a.data_volume,
                },
                None => Role::Simulation {
                    readers: ensemble.coupled(id).map(|a| index[a.id.as_str()]).collect(),
                },
            };
            AppState {
                id: id.to_string(),
                role,
                nodes: range_of[id].clone(),
                duration: app.seq_time() / (r.nodes * r.cores),
                iter: 0,
                progress: 0,
                phase: Phase::Idle,
                first_start: None,
                last_end: 0.0,
            }
        })
        .collect();

    let n_steps = ensemble.n_steps;
    let capacity = platform.bandwidth_per_node;
    let mut now = 0.0;
    let mut flows: Vec<Flow> = Vec::new();
    let mut timeline = Vec::new();
    let mut trace: Vec<BandwidthSegment> = Vec::new();
    let mut delivered: BTreeMap<AppId, f64> = BTreeMap::new();
    let mut rates_stale = false;

    loop {
        // Start everything that can start at `now`; instant stages cascade.
        let mut changed = true;
        while changed {
            changed = false;
            for i in 0..apps.len() {
                if apps[i].phase != Phase::Idle {
                    continue;
                }
                match &apps[i].role {
                    Role::Simulation { readers } => {
                        let k = apps[i].iter;
                        let need = (k + 1).saturating_sub(options.pipeline_depth);
                        if readers.iter().any(|&r| apps[r].progress < need) {
                            continue;
                        }
                        let app = &mut apps[i];
                        timeline.push(StageEvent {
                            app: app.id.clone(),
                            iter: k,
                            stage: Stage::Write,
                            start: now,
                            end: now,
                        });
                        app.progress += 1;
                        app.first_start.get_or_insert(now);
                        app.phase = Phase::Computing {
                            start: now,
                            until: now + app.duration,
                        };
                        changed = true;
                    }
                    Role::Analysis { producer, remote, volume } => {
                        let k = apps[i].iter;
                        if apps[*producer].progress <= k {
                            continue;
                        }
                        let (remote, volume, src) = (*remote, *volume, apps[*producer].nodes.clone());
                        let app = &mut apps[i];
                        app.first_start.get_or_insert(now);
                        if !remote || volume == 0.0 {
                            timeline.push(StageEvent {
                                app: app.id.clone(),
                                iter: k,
                                stage: Stage::Read,
                                start: now,
                                end: now,
                            });
                            app.progress += 1;
                            app.phase = Phase::Computing {
                                start: now,
                                until: now + app.duration,
                            };
                        } else {
                            let per_dst = match options.read_model {
                                ReadModel::Replicated => volume,
                                ReadModel::Split => volume / app.nodes.len() as f64,
                            };
                            let bytes = per_dst / src.len() as f64;
                            let mut pending = 0;
                            for dst in app.nodes.clone() {
                                for s in src.clone() {
                                    flows.push(Flow {
                                        src: s,
                                        dst,
                                        remaining: bytes,
                                        bytes,
                                        reader: i,
                                        rate: 0.0,
                                    });
                                    pending += 1;
                                }
                            }
                            app.phase = Phase::Reading { start: now, pending };
                            rates_stale = true;
                        }
                        changed = true;
                    }
                }
            }
        }

        if apps.iter().all(|a| a.phase == Phase::Done) {
            break;
        }

        if rates_stale {
            let pairs: Vec<(usize, usize)> = flows.iter().map(|f| (f.src, f.dst)).collect();
            for (f, r) in flows.iter_mut().zip(bandwidth_share(&pairs, n_nodes, capacity)) {
                f.rate = r;
            }
            rates_stale = false;
        }

        let next_compute = apps
            .iter()
            .filter_map(|a| match a.phase {
                Phase::Computing { until, .. } => Some(until),
                _ => None,
            })
            .fold(f64::INFINITY, f64::min);
        let next_flow = flows
            .iter()
            .map(|f| now + f.remaining / f.rate)
            .fold(f64::INFINITY, f64::min);
        let t = next_compute.min(next_flow);
        if !t.is_finite() {
            return Err(SimError::Stalled { time: now });
        }

        if !flows.is_empty() && t > now {
            let rate: f64 = flows.iter().map(|f| f.rate).sum();
            match trace.last_mut() {
                Some(seg) if seg.end == now && seg.rate == rate && seg.flows == flows.len() => seg.end = t,
                _ => trace.push(BandwidthSegment {
                    start: now,
                    end: t,
                    rate,
                    flows: flows.len(),
                }),
            }
        }

        // Advance flows, retiring those that finish at `t`.
        let dt = t - now;
        let mut finished_reads = Vec::new();
        flows.retain_mut(|f| {
            let done = near(now + f.remaining / f.rate, t) || f.remaining - f.rate * dt <= TIME_EPS * f.bytes;
            if done {
                *delivered.entry(apps[f.reader].id.clone()).or_insert(0.0) += f.bytes;
                finished_reads.push(f.reader);
                rates_stale = true;
                false
            } else {
                f.remaining -= f.rate * dt;
                true
            }
        });
        now = t;

        for i in finished_reads {
            let app = &mut apps[i];
            if let Phase::Reading { start, pending } = app.phase {
                if pending > 1 {
                    app.phase = Phase::Reading { start, pending: pending - 1 };
                } else {
                    timeline.push(StageEvent {
                        app: app.id.clone(),
                        iter: app.iter,
                        stage: Stage::Read,
                        start,
                        end: now,
                    });
                    app.progress += 1;
                    app.phase = Phase::Computing {
                        start: now,
                        until: now + app.duration,
                    };
                }
            }
        }

        for app in apps.iter_mut() {
            if let Phase::Computing { start, until } = app.phase {
                if until <= now || near(until, now) {
                    timeline.push(StageEvent {
                        app: app.id.clone(),
                        iter: app.iter,
                        stage: Stage::Compute,
                        start,
                        end: until,
                    });
                    app.last_end = until;
                    app.iter += 1;
                    app.phase = if app.iter == n_steps { Phase::Done } else { Phase::Idle };
                }
            }
        }
    }

    let makespan = timeline.iter().map(|e| e.end).fold(0.0, f64::max);
    let mean_period = apps
        .iter()
        .map(|a| (a.id.clone(), (a.last_end - a.first_start.unwrap_or(0.0)) / n_steps as f64))
        .collect();
    Ok(SimReport {
        makespan,
        timeline,
        mean_period,
        bandwidth_trace: trace,
        bytes_delivered: delivered,
    })
}

/// `simulated / modeled`; above one means the model is optimistic.
pub fn simulated_vs_modeled(report: &SimReport, modeled: f64) -> Result<f64, SimError> {
    if !(modeled > 0.0) {
        return Err(SimError::ZeroModeled);
    }
    Ok(report.makespan / modeled)
}

/// Writes the timeline as `app,iter,stage,start,end` rows followed by a
/// `# makespan=<seconds>` summary line.
pub fn write_trace<W: io::Write>(report: &SimReport, mut out: W) -> io::Result<()> {
    {
        let mut w = csv::Writer::from_writer(&mut out);
        w.write_record(["app", "iter", "stage", "start", "end"])?;
        for e in &report.timeline {
            w.write_record([
                e.app.as_str(),
                &e.iter.to_string(),
                e.stage.as_str(),
                &e.start.to_string(),
                &e.end.to_string(),
            ])?;
        }
        w.flush()?;
    }
    writeln!(out, "# makespan={}", report.makespan)
}
