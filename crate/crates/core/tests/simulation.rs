mod common;

use common::GB;
use cosched::coalloc::AllocPolicy;
use cosched::experiment::{modeled_at, run_solved, solve_instance, Scenario, Solved};
use cosched::model::{Ensemble, Platform};
use cosched::scenarios::{GeneratorConfig, ScenarioSpec};
use cosched::sim::{simulate, ReadModel, SimOptions};
use proptest::prelude::*;

fn scenario(i: usize) -> Scenario {
    Scenario::Fixed(ScenarioSpec::standard()[i % 8])
}

fn policy(i: usize) -> AllocPolicy {
    AllocPolicy::ALL[i % 4]
}

fn solved(seed: u64, sims: u32, per_sim: u32, volume: f64, sc: usize, pol: usize) -> Solved {
    let platform = Platform {
        n_nodes: 16,
        cores_per_node: 32,
        mem_per_node: 128e9,
        bandwidth_per_node: 10.0 * GB,
    };
    let g = GeneratorConfig {
        n_sims: sims,
        analyses_per_sim: per_sim,
        data_volume: volume,
        n_steps: 10,
        seed,
        ..Default::default()
    };
    solve_instance(&platform, &g, scenario(sc), policy(pol)).unwrap()
}

fn with_volume(e: &Ensemble, v: f64) -> Ensemble {
    let mut e = e.clone();
    for a in &mut e.analyses {
        a.data_volume = v;
    }
    e
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn without_data_the_simulator_matches_the_model(
        seed in 0u64..10_000, sims in 1u32..=4, per_sim in 1u32..=4, sc in 0usize..8, pol in 0usize..4,
    ) {
        let s = solved(seed, sims, per_sim, 0.0, sc, pol);
        let simulated = run_solved(&s, SimOptions::default()).unwrap().makespan;
        let modeled = modeled_at(&s, s.platform.bandwidth()).unwrap();
        prop_assert!((simulated - modeled).abs() <= 1e-9 * modeled, "{} vs {}", simulated, modeled);
    }

    #[test]
    fn simulation_is_deterministic(seed in 0u64..10_000, sc in 0usize..8) {
        let s = solved(seed, 3, 3, 4.0 * GB, sc, 0);
        prop_assert_eq!(run_solved(&s, SimOptions::default()).unwrap(), run_solved(&s, SimOptions::default()).unwrap());
    }

    #[test]
    fn more_data_never_finishes_sooner(seed in 0u64..10_000, sc in 0usize..8, v in 0.0f64..8.0, extra in 0.0f64..8.0) {
        let s = solved(seed, 3, 3, v * GB, sc, 0);
        let opts = SimOptions::default();
        let base = simulate(&s.ensemble, &s.partition, &s.integer, &s.platform, opts).unwrap().makespan;
        let heavier = with_volume(&s.ensemble, (v + extra) * GB);
        let more = simulate(&heavier, &s.partition, &s.integer, &s.platform, opts).unwrap().makespan;
        prop_assert!(more >= base * (1.0 - 1e-12), "{} < {}", more, base);
    }

    #[test]
    fn every_frame_is_delivered(seed in 0u64..10_000, sc in 0usize..8, split in any::<bool>()) {
        let s = solved(seed, 2, 3, 2.0 * GB, sc, 0);
        let opts = SimOptions {
            read_model: if split { ReadModel::Split } else { ReadModel::Replicated },
            ..Default::default()
        };
        let r = simulate(&s.ensemble, &s.partition, &s.integer, &s.platform, opts).unwrap();
        for a in &s.ensemble.analyses {
            let got = r.bytes_delivered.get(&a.id).copied().unwrap_or(0.0);
            let expected = if s.partition.is_co_scheduled(&a.id) {
                0.0
            } else {
                let copies = if split { 1.0 } else { s.integer.entries[&a.id].nodes };
                copies * a.data_volume * s.ensemble.n_steps as f64
            };
            prop_assert!((got - expected).abs() <= 1e-6 * expected.max(1.0), "{}: {} vs {}", a.id, got, expected);
        }
    }
}

#[test]
fn simulated_makespan_never_beats_the_model() {
    for seed in 0..5 {
        for (sc, pol) in [(0, 0), (7, 0), (3, 2)] {
            let s = solved(seed, 4, 4, 4.0 * GB, sc, pol);
            let simulated = run_solved(&s, SimOptions::default()).unwrap().makespan;
            let modeled = modeled_at(&s, s.platform.bandwidth()).unwrap();
            assert!(simulated >= modeled * (1.0 - 1e-9), "{sc}/{pol}: {simulated} < {modeled}");
        }
    }
}
