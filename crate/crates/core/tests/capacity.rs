mod common;

use common::{rel_err, GridTrace, DT};
use mec_offload::capacity::{CapacityTrace, WorkAmount};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn kernel_matches_riemann_sums_on_random_traces() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for _ in 0..100 {
        let g = GridTrace::random(&mut rng, 8, 50_000);
        let trace = g.to_trace();
        let i0 = rng.random_range(0..100_000u64);
        let i1 = i0 + rng.random_range(1..200_000u64);
        let c = trace
            .cycles_between(i0 as f64 * DT, i1 as f64 * DT)
            .unwrap()
            .cycles();
        assert!(rel_err(c, g.cycles(i0, i1)) < 1e-6);

        let work = rng.random_range(1e8..1e10);
        let (d, e) = g.serve(i0, work, 1e-27);
        let w = WorkAmount::new(work).unwrap();
        assert!(rel_err(trace.time_to_complete(i0 as f64 * DT, w), d) < 1e-6);
        assert!(
            rel_err(
                trace.computation_energy(i0 as f64 * DT, w, 1e-27).unwrap(),
                e
            ) < 1e-6
        );
    }
}

#[test]
fn constant_capacity_closed_forms() {
    let f = 7e9;
    let t = CapacityTrace::constant(f).unwrap();
    let w = WorkAmount::new(7.5e9).unwrap();
    assert_eq!(t.time_to_complete(3.0, w), 7.5e9 / f);
    assert_eq!(
        t.computation_energy(3.0, w, 1e-27).unwrap(),
        1e-27 * f * f * 7.5e9
    );
    assert_eq!(t.cycles_between(1.0, 2.5).unwrap().cycles(), 1.5 * f);
}

fn trace_strategy() -> impl Strategy<Value = CapacityTrace> {
    prop::collection::vec((0.01f64..3.0, 1e9f64..2e10), 1..10).prop_map(|segs| {
        let mut t = 0.0;
        let points: Vec<(f64, f64)> = segs
            .into_iter()
            .map(|(len, f)| {
                let p = (t, f);
                t += len;
                p
            })
            .collect();
        CapacityTrace::from_breakpoints(&points).unwrap()
    })
}

proptest! {
    #[test]
    fn time_to_complete_inverts_cycles_between(trace in trace_strategy(), t0 in 0.0f64..10.0, work in 1e6f64..1e11) {
        let d = trace.time_to_complete(t0, WorkAmount::new(work).unwrap());
        let served = trace.cycles_between(t0, t0 + d).unwrap().cycles();
        prop_assert!(rel_err(served, work) < 1e-9);
    }

    #[test]
    fn cycles_are_additive_and_monotone(trace in trace_strategy(), a in 0.0f64..5.0, b in 0.0f64..5.0, c in 0.0f64..5.0) {
        let (t0, t1, t2) = (a, a + b, a + b + c);
        let x = trace.cycles_between(t0, t1).unwrap().cycles();
        let y = trace.cycles_between(t1, t2).unwrap().cycles();
        let z = trace.cycles_between(t0, t2).unwrap().cycles();
        prop_assert!((x + y - z).abs() <= 1e-9 * z.max(1.0));
        prop_assert!(z >= x);
    }

    #[test]
    fn energy_is_bounded_by_extreme_capacities(trace in trace_strategy(), t0 in 0.0f64..10.0, work in 1e6f64..1e11) {
        let (lo, hi) = trace
            .breakpoints()
            .fold((f64::INFINITY, 0.0f64), |(lo, hi), (_, f)| (lo.min(f), hi.max(f)));
        let e = trace.computation_energy(t0, WorkAmount::new(work).unwrap(), 1e-27).unwrap();
        prop_assert!(e >= 1e-27 * lo * lo * work * (1.0 - 1e-12));
        prop_assert!(e <= 1e-27 * hi * hi * work * (1.0 + 1e-12));
    }

    #[test]
    fn text_round_trip(trace in trace_strategy()) {
        prop_assert_eq!(CapacityTrace::from_text(&trace.to_text()).unwrap(), trace);
    }
}
