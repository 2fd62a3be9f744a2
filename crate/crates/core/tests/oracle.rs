mod common;

use mec_offload::policy::Oracle;
use mec_offload::sim::{SimConfig, Simulation};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Steps a random 20-task instance with the oracle and returns how many of
/// its choices disagree with forking the simulation for every option.
fn mismatches(cfg: &SimConfig) -> usize {
    let mut sim = Simulation::new(cfg).unwrap();
    let mut oracle = Oracle::new(cfg.cost, cfg.kappa, None);
    let mut bad = 0;
    while sim.next_request().unwrap().is_some() {
        let mine = oracle.decide(&sim).unwrap();
        let (truth, costs) = common::brute_force(&sim);
        if mine != truth {
            eprintln!("oracle {mine:?} vs brute force {truth:?}, costs {costs:?}");
            bad += 1;
        }
        sim.apply(mine).unwrap();
    }
    bad
}

fn random_instance(rng: &mut ChaCha8Rng) -> SimConfig {
    let mut cfg = SimConfig {
        seed: rng.random(),
        tasks: 20,
        arrival_rate: rng.random_range(5.0..60.0),
        candidates: rng.random_range(1..=4),
        ..SimConfig::default()
    };
    cfg.radio.channels = rng.random_range(1..=3);
    cfg
}

#[test]
fn oracle_agrees_with_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..25 {
        let cfg = random_instance(&mut rng);
        assert_eq!(mismatches(&cfg), 0, "{cfg:?}");
    }
}

#[test]
fn oracle_is_no_worse_than_any_single_option_per_task() {
    let cfg = SimConfig {
        tasks: 40,
        arrival_rate: 30.0,
        ..SimConfig::default()
    };
    let mut sim = Simulation::new(&cfg).unwrap();
    let mut oracle = Oracle::new(cfg.cost, cfg.kappa, None);
    while sim.next_request().unwrap().is_some() {
        let best = oracle
            .options(&sim)
            .unwrap()
            .iter()
            .map(|o| o.cost)
            .fold(f64::INFINITY, f64::min);
        let (_, costs) = common::brute_force(&sim);
        assert!(costs.iter().all(|&c| c >= best - 1e-9 * best));
        let d = oracle.decide(&sim).unwrap();
        sim.apply(d).unwrap();
    }
}
