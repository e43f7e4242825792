//! Oracles shared by the integration tests. Nothing here calls into the
//! allocation or rounding code it is used to check.
#![allow(dead_code)]

use std::path::PathBuf;

use cosched::coalloc::co_alloc;
use cosched::experiment::{parse_config, ExperimentConfig};
use cosched::model::{AnalysisSpec, AppId, Ensemble, Partition, Platform, SimulationSpec};
use cosched::scenarios::{generate_ensemble, GeneratorConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const GB: f64 = 1e9;

pub fn config_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

/// The 16-node, 4x4 data sweep shipped in `configs/`.
pub fn reference_config() -> ExperimentConfig {
    parse_config(&config_path("data-volume.toml")).expect("shipped config parses")
}

/// Member of an oracle allocation: sequential time and, for members that
/// read from another allocation, the bytes read per iteration.
#[derive(Clone, Debug)]
pub struct Member {
    pub seq_time: f64,
    pub remote_volume: Option<f64>,
}

pub type OracleAlloc = Vec<Member>;

fn cores_needed(alloc: &[Member], nodes: f64, t: f64, b: f64) -> f64 {
    alloc
        .iter()
        .map(|m| match m.remote_volume {
            None => m.seq_time / (nodes * t),
            Some(v) => {
                let left = nodes * t - v / b;
                if left <= 0.0 {
                    f64::INFINITY
                } else {
                    m.seq_time / left
                }
            }
        })
        .sum()
}

fn nodes_needed(alloc: &[Member], t: f64, c: f64, b: f64) -> f64 {
    let floor = alloc
        .iter()
        .filter_map(|m| m.remote_volume)
        .map(|v| v / (b * t))
        .fold(0.0, f64::max);
    let mut hi = floor.max(1e-6) * 2.0;
    while cores_needed(alloc, hi, t, b) > c {
        hi *= 2.0;
    }
    let mut lo = floor;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if cores_needed(alloc, mid, t, b) > c {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi
}

/// Smallest per-iteration time any rational node/core split can reach for
/// the given allocations, found by bisection on the target time.
pub fn equalized_time(allocs: &[OracleAlloc], n: f64, c: f64, b: f64) -> f64 {
    let feasible = |t: f64| allocs.iter().map(|a| nodes_needed(a, t, c, b)).sum::<f64>() <= n;
    let mut hi = 1.0;
    while !feasible(hi) {
        hi *= 2.0;
    }
    let mut lo = hi;
    while feasible(lo) {
        lo *= 0.5;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if feasible(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

/// Oracle view of a partition: every simulation with its co-scheduled
/// analyses, then every analysis-only group reading remotely.
pub fn oracle_allocs(ensemble: &Ensemble, partition: &Partition) -> Vec<OracleAlloc> {
    let mut out = Vec::new();
    for s in &ensemble.simulations {
        let mut alloc = vec![Member {
            seq_time: s.seq_time,
            remote_volume: None,
        }];
        for a in ensemble.coupled(&s.id) {
            if partition.co_scheduled().contains(&a.id) {
                alloc.push(Member {
                    seq_time: a.seq_time,
                    remote_volume: None,
                });
            }
        }
        out.push(alloc);
    }
    for group in partition.groups() {
        out.push(
            group
                .iter()
                .map(|id| {
                    let a = ensemble.analysis(id).unwrap();
                    Member {
                        seq_time: a.seq_time,
                        remote_volume: Some(a.data_volume),
                    }
                })
                .collect(),
        );
    }
    out
}

/// Values below one raised to one; the deficit comes out of the values above
/// one in proportion to how far each is above one.
pub fn lift(values: &[f64]) -> Vec<f64> {
    let deficit: f64 = values.iter().filter(|&&v| v < 1.0).map(|v| 1.0 - v).sum();
    let excess: f64 = values.iter().filter(|&&v| v > 1.0).map(|v| v - 1.0).sum();
    values
        .iter()
        .map(|&v| if v <= 1.0 { 1.0 } else { v - deficit * (v - 1.0) / excess })
        .collect()
}

/// Whether `x` is the floor or the ceiling of `source`. A source within
/// rounding noise of an integer must land on that integer.
pub fn is_floor_or_ceil(x: u64, source: f64) -> bool {
    let x = x as f64;
    let nearest = source.round();
    if (source - nearest).abs() <= 1e-9 * source.abs().max(1.0) {
        return x == nearest;
    }
    x == source.floor() || x == source.ceil()
}

pub fn sim(id: &str, t: f64) -> SimulationSpec {
    SimulationSpec {
        id: id.into(),
        seq_time: t,
        mem: 0.0,
    }
}

pub fn ana(id: &str, coupled: &str, t: f64, v: f64) -> AnalysisSpec {
    AnalysisSpec {
        id: id.into(),
        seq_time: t,
        data_volume: v,
        mem: 0.0,
        coupled_sim: coupled.into(),
    }
}

pub fn platform(n: u32, c: u32, b: f64) -> Platform {
    Platform {
        n_nodes: n,
        cores_per_node: c,
        mem_per_node: 1e15,
        bandwidth_per_node: b,
    }
}

/// Random instance with per-analysis volumes and up to three analysis-only groups.
pub fn random_instance(seed: u64) -> (Ensemble, Partition, Platform) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_sims = rng.gen_range(1..=4);
    let mut ensemble = Ensemble {
        simulations: Vec::new(),
        analyses: Vec::new(),
        n_steps: rng.gen_range(1..=20),
    };
    for i in 0..n_sims {
        let sid = format!("S{i}");
        ensemble.simulations.push(sim(&sid, rng.gen_range(20.0..300.0)));
        for j in 0..rng.gen_range(0..=4) {
            let v = if rng.gen_bool(0.2) { 0.0 } else { rng.gen_range(0.0..20.0) * GB };
            ensemble
                .analyses
                .push(ana(&format!("A{i}_{j}"), &sid, rng.gen_range(5.0..400.0), v));
        }
    }
    let n_groups = rng.gen_range(1..=3);
    let mut co: Vec<AppId> = Vec::new();
    let mut groups: Vec<Vec<AppId>> = vec![Vec::new(); n_groups];
    for a in &ensemble.analyses {
        if rng.gen_bool(0.5) {
            co.push(a.id.clone());
        } else {
            groups[rng.gen_range(0..n_groups)].push(a.id.clone());
        }
    }
    groups.retain(|g| !g.is_empty());
    let partition = Partition::new(&ensemble, co, groups).unwrap();
    let p = platform(
        [8, 16, 32, 64][rng.gen_range(0..4)],
        [8, 16, 32, 64][rng.gen_range(0..4)],
        rng.gen_range(1.0..20.0) * GB,
    );
    (ensemble, partition, p)
}

/// Best makespan-per-iteration found by a grid over node and core shares
/// (step 0.01 of N and of C) for at most two allocations of at most three
/// applications in total.
pub fn grid_best(allocs: &[OracleAlloc], n: f64, c: f64, b: f64) -> f64 {
    let time = |m: &Member, nodes: f64, cores: f64| {
        m.seq_time / (nodes * cores) + m.remote_volume.map_or(0.0, |v| v / (b * nodes))
    };
    // Best time of one allocation on `nodes` over its core splits.
    let alloc_best = |alloc: &[Member], nodes: f64| -> f64 {
        match alloc.len() {
            1 => time(&alloc[0], nodes, c),
            2 => (1..100)
                .map(|k| {
                    let c0 = k as f64 * 0.01 * c;
                    time(&alloc[0], nodes, c0).max(time(&alloc[1], nodes, c - c0))
                })
                .fold(f64::INFINITY, f64::min),
            3 => {
                let mut best = f64::INFINITY;
                for i in 1..99 {
                    for j in 1..(100 - i) {
                        let (c0, c1) = (i as f64 * 0.01 * c, j as f64 * 0.01 * c);
                        let t = time(&alloc[0], nodes, c0)
                            .max(time(&alloc[1], nodes, c1))
                            .max(time(&alloc[2], nodes, c - c0 - c1));
                        best = best.min(t);
                    }
                }
                best
            }
            k => panic!("grid oracle handles at most three members, got {k}"),
        }
    };
    match allocs.len() {
        1 => alloc_best(&allocs[0], n),
        2 => (1..100)
            .map(|k| {
                let n0 = k as f64 * 0.01 * n;
                alloc_best(&allocs[0], n0).max(alloc_best(&allocs[1], n - n0))
            })
            .fold(f64::INFINITY, f64::min),
        k => panic!("grid oracle handles at most two allocations, got {k}"),
    }
}

/// Tiny instance for the grid oracle: one simulation plus up to two analyses
/// in one of five shapes.
pub fn tiny_instance(seed: u64) -> (Ensemble, Partition, Platform) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7469_6e79);
    let shape = seed % 5;
    let n_analyses = if shape < 1 || shape == 2 { 1 } else { 2 };
    let mut ensemble = Ensemble {
        simulations: vec![sim("S", rng.gen_range(20.0..200.0))],
        analyses: Vec::new(),
        n_steps: 1,
    };
    for j in 0..n_analyses {
        ensemble.analyses.push(ana(
            &format!("A{j}"),
            "S",
            rng.gen_range(10.0..300.0),
            rng.gen_range(0.0..16.0) * GB,
        ));
    }
    let ids: Vec<AppId> = ensemble.analyses.iter().map(|a| a.id.clone()).collect();
    let (co, groups) = match shape {
        0 | 1 => (ids, vec![]),
        2 => (vec![], vec![ids]),
        3 => (vec![ids[0].clone()], vec![vec![ids[1].clone()]]),
        _ => (vec![], vec![ids]),
    };
    let partition = Partition::new(&ensemble, co, groups).unwrap();
    let p = platform(rng.gen_range(1..=16), [4, 8, 16, 32][rng.gen_range(0..4)], rng.gen_range(1.0..20.0) * GB);
    (ensemble, partition, p)
}

/// `part` with analysis `id` moved into the (single) analysis-only group.
pub fn move_to_remote(e: &Ensemble, part: &Partition, id: &str) -> Partition {
    let co: Vec<AppId> = part.co_scheduled().iter().filter(|x| *x != id).cloned().collect();
    let mut group: Vec<AppId> = part.groups().iter().flatten().cloned().collect();
    group.push(id.to_string());
    Partition::new(e, co, vec![group]).unwrap()
}

/// Generator ensembles (one volume shared by every analysis) with a random
/// starting partition; every single move of a co-scheduled analysis to the
/// analysis-only group is compared by `t*`. Returns (moves, violations).
pub fn remote_move_violations(instances: u64) -> (usize, usize) {
    let (mut checked, mut violations) = (0, 0);
    for seed in 0..instances {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = GeneratorConfig {
            n_sims: rng.gen_range(1..=4),
            analyses_per_sim: rng.gen_range(1..=4),
            data_volume: [0.0, 1.0, 4.0, 16.0][rng.gen_range(0..4)] * GB,
            seed,
            ..Default::default()
        };
        let e = generate_ensemble(&g);
        let p = platform(16, 32, 10.0 * GB);
        let remote: Vec<AppId> = e.analyses.iter().filter(|_| rng.gen_bool(0.3)).map(|a| a.id.clone()).collect();
        let co: Vec<AppId> = e.analyses.iter().map(|a| a.id.clone()).filter(|id| !remote.contains(id)).collect();
        let groups = if remote.is_empty() { vec![] } else { vec![remote] };
        let part = Partition::new(&e, co, groups).unwrap();
        let before = co_alloc(&part, &e, &p).unwrap().equalized_time;
        for id in part.co_scheduled() {
            let after = co_alloc(&move_to_remote(&e, &part, id), &e, &p).unwrap().equalized_time;
            checked += 1;
            if after < before * (1.0 - 1e-12) {
                violations += 1;
            }
        }
    }
    (checked, violations)
}
