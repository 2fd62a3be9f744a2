//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use mec_offload::capacity::{CapacityTrace, WorkAmount};
use mec_offload::nn::Mlp;
use mec_offload::policy::Decision;
use mec_offload::sim::{RunResult, Simulation};
use ndarray::Array2;
use rand::Rng;

/// Step of the Riemann oracle, in seconds.
pub const DT: f64 = 1e-5;

/// A piecewise-constant trace whose breakpoints sit on the `DT` grid, so a
/// left Riemann sum with step `DT` is exact up to summation rounding.
#[derive(Debug, Clone)]
pub struct GridTrace {
    /// `(start step, capacity)`, first start is 0.
    pub segments: Vec<(u64, f64)>,
}

impl GridTrace {
    pub fn random<R: Rng>(rng: &mut R, max_segments: usize, max_len_steps: u64) -> Self {
        let n = rng.random_range(1..=max_segments);
        let mut start = 0;
        let segments = (0..n)
            .map(|_| {
                let s = (start, rng.random_range(5e9..12e9));
                start += rng.random_range(1..=max_len_steps);
                s
            })
            .collect();
        GridTrace { segments }
    }

    pub fn to_trace(&self) -> CapacityTrace {
        let points: Vec<(f64, f64)> = self
            .segments
            .iter()
            .map(|&(s, f)| (s as f64 * DT, f))
            .collect();
        CapacityTrace::from_breakpoints(&points).unwrap()
    }

    fn value_at(&self, step: u64) -> f64 {
        self.segments
            .iter()
            .rev()
            .find(|&&(s, _)| s <= step)
            .unwrap()
            .1
    }

    /// Left Riemann sum of the capacity over steps `[i0, i1)`.
    pub fn cycles(&self, i0: u64, i1: u64) -> f64 {
        (i0..i1).map(|i| self.value_at(i) * DT).sum()
    }

    /// Steps forward from `i0` until `work` cycles are served; the final
    /// partial step is exact because the capacity is constant within it.
    /// Returns `(duration, energy)`.
    pub fn serve(&self, i0: u64, work: f64, kappa: f64) -> (f64, f64) {
        let mut done = 0.0;
        let mut energy = 0.0;
        let mut i = i0;
        let mut seg = self.segments.iter().rposition(|&(s, _)| s <= i0).unwrap();
        loop {
            if seg + 1 < self.segments.len() && self.segments[seg + 1].0 <= i {
                seg += 1;
            }
            let f = self.segments[seg].1;
            let step = f * DT;
            if done + step >= work {
                let rest = work - done;
                energy += kappa * f * f * rest;
                return ((i - i0) as f64 * DT + rest / f, energy);
            }
            done += step;
            energy += kappa * f * f * f * DT;
            i += 1;
        }
    }
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

/// Every option for the pending task in the oracle's order: local, then
/// each free candidate by distance.
pub fn options(sim: &Simulation) -> Vec<Decision> {
    let req = sim.pending_request().expect("pending task");
    let mut out = vec![Decision::Local];
    out.extend(
        req.feasible()
            .map(|c| Decision::full(c.server, c.channel.unwrap())),
    );
    out
}

/// Cheapest option found by forking the simulation once per option and
/// running each fork until the task departs.
pub fn brute_force(sim: &Simulation) -> (Decision, Vec<f64>) {
    let task = sim.pending_request().unwrap().task_id;
    let mut costs = Vec::new();
    for d in options(sim) {
        let mut fork = sim.clone();
        fork.apply(d).unwrap();
        costs.push(fork.run_until_departed(task).unwrap().cost);
    }
    let mut best = 0;
    for (i, &c) in costs.iter().enumerate() {
        if c < costs[best] {
            best = i;
        }
    }
    (options(sim)[best], costs)
}

/// Largest relative gap between backpropagated and central-difference
/// gradients over every parameter of `net`.
pub fn gradient_check_error(net: &Mlp, x: &Array2<f64>, y: &Array2<f64>) -> f64 {
    let (_, grads) = net.mse_gradients(x.view(), y.view());
    let h = 1e-6;
    let mut worst = 0.0f64;
    for li in 0..net.layers().len() {
        let shape = net.layers()[li].weights.dim();
        let nb = net.layers()[li].bias.len();
        let mut probe = |set: &dyn Fn(&mut Mlp, f64), analytic: f64| {
            let mut plus = net.clone();
            set(&mut plus, h);
            let mut minus = net.clone();
            set(&mut minus, -h);
            let numeric =
                (plus.mse(x.view(), y.view()) - minus.mse(x.view(), y.view())) / (2.0 * h);
            let scale = analytic.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max((analytic - numeric).abs() / scale);
        };
        for r in 0..shape.0 {
            for c in 0..shape.1 {
                probe(
                    &|n: &mut Mlp, d| n.layers_mut()[li].weights[[r, c]] += d,
                    grads.layers[li].weights[[r, c]],
                );
            }
        }
        for b in 0..nb {
            probe(
                &|n: &mut Mlp, d| n.layers_mut()[li].bias[b] += d,
                grads.layers[li].bias[b],
            );
        }
    }
    worst
}

/// Replays every server's FIFO queue from the service records alone: a job
/// starts when it has arrived and its predecessor has left, and leaves once
/// the trace has delivered its work.
pub fn fifo_replay_errors(r: &RunResult) -> Vec<String> {
    let mut bad = Vec::new();
    for m in 0..r.traces.len() {
        let mut jobs: Vec<_> = r.services.iter().filter(|s| s.server == m).collect();
        jobs.sort_by_key(|s| s.enqueue_order);
        let mut free_at = 0.0f64;
        for s in jobs {
            let start = s.t_queue.max(free_at);
            let end = start + r.traces[m].time_to_complete(start, WorkAmount::new(s.work).unwrap());
            if (start - s.t_comp).abs() > 1e-9 || (end - s.t_dep).abs() > 1e-9 * end.max(1.0) {
                bad.push(format!(
                    "server {m} task {}: replay ({start}, {end}) vs ({}, {})",
                    s.task_id, s.t_comp, s.t_dep
                ));
            }
            free_at = end;
        }
    }
    bad
}
