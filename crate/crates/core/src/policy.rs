//! The decision interface shared by every offloading policy, plus the
//! non-learning baselines and the privileged greedy oracle.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::capacity::{local_energy, WorkAmount};
use crate::cost::CostModel;
use crate::error::{Error, Result};
use crate::estimator::features;
use crate::radio::Position;
use crate::sim::Simulation;

/// What one candidate server reports when asked about a new task.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateInfo {
    pub server: usize,
    pub distance_km: f64,
    /// Current and past capacities, newest first.
    pub capacity_history: Vec<f64>,
    /// Remaining cycles of queued and in-service work.
    pub backlog: f64,
    /// Best free channel, `None` when every channel is uploading.
    pub channel: Option<usize>,
    /// Rate on `channel`, 0 when no channel is free.
    pub rate: f64,
}

impl CandidateInfo {
    pub fn is_feasible(&self) -> bool {
        self.channel.is_some()
    }

    /// Estimator input for offloading `ratio` of the task here.
    pub fn features(&self, input_bits: f64, work_cycles: f64, ratio: f64) -> Vec<f64> {
        features(
            &self.capacity_history,
            self.backlog,
            ratio * input_bits,
            ratio * work_cycles,
            self.rate,
        )
    }
}

/// Everything a causal policy may look at when deciding for one task: the
/// user's own report and the answers of its nearest servers.
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionRequest {
    pub task_id: u64,
    pub arrival_time: f64,
    pub position: Position,
    pub input_bits: f64,
    pub work_cycles: f64,
    pub user_capability: f64,
    /// The nearest servers, closest first.
    pub candidates: Vec<CandidateInfo>,
    /// Number of servers in the network.
    pub num_servers: usize,
}

impl DecisionRequest {
    pub fn local_delay(&self, ratio: f64) -> f64 {
        (1.0 - ratio) * self.work_cycles / self.user_capability
    }

    pub fn feasible(&self) -> impl Iterator<Item = &CandidateInfo> {
        self.candidates.iter().filter(|c| c.is_feasible())
    }

    pub fn candidate(&self, server: usize) -> Option<&CandidateInfo> {
        self.candidates.iter().find(|c| c.server == server)
    }
}

/// The strategy applied to one task.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Decision {
    Local,
    /// Upload `ratio` of the input on `channel` of `server`; the remaining
    /// `1 - ratio` of the work runs locally in parallel.
    Offload {
        server: usize,
        channel: usize,
        ratio: f64,
    },
}

impl Decision {
    pub fn full(server: usize, channel: usize) -> Self {
        Decision::Offload {
            server,
            channel,
            ratio: 1.0,
        }
    }

    /// Action index with `0` for local and `m + 1` for server `m`.
    pub fn action(&self) -> usize {
        match *self {
            Decision::Local => 0,
            Decision::Offload { server, .. } => server + 1,
        }
    }

    pub fn ratio(&self) -> f64 {
        match *self {
            Decision::Local => 0.0,
            Decision::Offload { ratio, .. } => ratio,
        }
    }

    /// Number of ones in the binary server/channel strategy matrix.
    pub fn strategy_weight(&self) -> usize {
        usize::from(matches!(self, Decision::Offload { .. }))
    }
}

/// A causal offloading policy.
pub trait Policy {
    fn name(&self) -> &str;

    fn decide(&mut self, request: &DecisionRequest) -> Result<Decision>;

    /// Called once per task when its outcome is known.
    fn observe(&mut self, _outcome: &crate::sim::TaskOutcome) {}
}

#[derive(Debug, Default)]
pub struct LocalOnly;

impl Policy for LocalOnly {
    fn name(&self) -> &str {
        "local-only"
    }

    fn decide(&mut self, _request: &DecisionRequest) -> Result<Decision> {
        Ok(Decision::Local)
    }
}

/// Nearest server with a free channel, then the next nearest, then local.
#[derive(Debug, Default)]
pub struct MecOnly;

impl Policy for MecOnly {
    fn name(&self) -> &str {
        "mec-only"
    }

    fn decide(&mut self, request: &DecisionRequest) -> Result<Decision> {
        Ok(request.feasible().next().map_or(Decision::Local, |c| {
            Decision::full(c.server, c.channel.expect("feasible"))
        }))
    }
}

/// Offloads to each of the `L` nearest servers with probability `p / L`.
#[derive(Debug)]
pub struct Probabilistic {
    p: f64,
    rng: ChaCha8Rng,
}

impl Probabilistic {
    pub fn new(p: f64, seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::invalid(format!(
                "offloading probability must be in [0, 1], got {p}"
            )));
        }
        Ok(Probabilistic {
            p,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn p(&self) -> f64 {
        self.p
    }
}

impl Policy for Probabilistic {
    fn name(&self) -> &str {
        "probabilistic"
    }

    fn decide(&mut self, request: &DecisionRequest) -> Result<Decision> {
        let l = request.candidates.len();
        let u: f64 = self.rng.random();
        if l == 0 || u >= self.p {
            return Ok(Decision::Local);
        }
        let j = ((u / self.p) * l as f64).floor() as usize;
        let c = &request.candidates[j.min(l - 1)];
        Ok(match c.channel {
            Some(channel) => Decision::full(c.server, channel),
            None => Decision::Local,
        })
    }
}

/// Privileged greedy lower bound: evaluates the exact delay and energy of
/// every option for the current task against the true system state and picks
/// the cheapest. Earlier assignments are held fixed; later tasks are ignored.
#[derive(Debug, Clone)]
pub struct Oracle {
    cost: CostModel,
    kappa: f64,
    /// Offloading ratios to consider; `None` means binary offloading.
    ratios: Option<Vec<f64>>,
}

/// One evaluated option.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleOption {
    pub decision: Decision,
    pub delay: f64,
    pub energy: f64,
    pub cost: f64,
}

impl Oracle {
    pub fn new(cost: CostModel, kappa: f64, ratios: Option<Vec<f64>>) -> Self {
        Oracle {
            cost,
            kappa,
            ratios,
        }
    }

    /// Every feasible option in a fixed order: local first (binary mode
    /// only), then candidates by distance, then ratios ascending.
    pub fn options(&self, sim: &Simulation) -> Result<Vec<OracleOption>> {
        let req = sim
            .pending_request()
            .ok_or_else(|| Error::Integrity("oracle queried without a pending task".into()))?;
        let option = |decision: Decision, delay: f64, energy: f64| OracleOption {
            decision,
            delay,
            energy,
            cost: self.cost.cost(delay, energy),
        };
        let local = |ratio: f64| -> Result<(f64, f64)> {
            let work = WorkAmount::new((1.0 - ratio) * req.work_cycles)?;
            Ok((
                req.local_delay(ratio),
                local_energy(req.user_capability, work, self.kappa)?,
            ))
        };
        let mut out = Vec::new();
        let ratios = self.ratios.clone().unwrap_or_else(|| vec![1.0]);
        if self.ratios.is_none() {
            let (d, e) = local(0.0)?;
            out.push(option(Decision::Local, d, e));
        }
        for c in req.feasible() {
            let channel = c.channel.expect("feasible");
            for &ratio in &ratios {
                let decision = Decision::Offload {
                    server: c.server,
                    channel,
                    ratio,
                };
                let (edge_delay, edge_energy) = sim.project_edge(decision)?;
                let (local_delay, local_e) = local(ratio)?;
                out.push(option(
                    decision,
                    edge_delay.max(local_delay),
                    edge_energy + local_e,
                ));
            }
        }
        if out.is_empty() {
            let (d, e) = local(0.0)?;
            out.push(option(Decision::Local, d, e));
        }
        Ok(out)
    }

    pub fn decide(&mut self, sim: &Simulation) -> Result<Decision> {
        let options = self.options(sim)?;
        let best = options
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.cost.total_cmp(&b.1.cost).then(a.0.cmp(&b.0)))
            .expect("at least one option");
        Ok(best.1.decision)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn request(feasible: &[bool]) -> DecisionRequest {
        DecisionRequest {
            task_id: 0,
            arrival_time: 0.0,
            position: Position::default(),
            input_bits: 1e7,
            work_cycles: 7.5e9,
            user_capability: 1e9,
            candidates: feasible
                .iter()
                .enumerate()
                .map(|(j, &ok)| CandidateInfo {
                    server: 10 + j,
                    distance_km: j as f64 + 1.0,
                    capacity_history: vec![5e9; 3],
                    backlog: 0.0,
                    channel: ok.then_some(j),
                    rate: if ok { 5e7 } else { 0.0 },
                })
                .collect(),
            num_servers: 15,
        }
    }

    #[test]
    fn local_only_always_local() {
        let r = request(&[true, true]);
        assert_eq!(LocalOnly.decide(&r).unwrap(), Decision::Local);
    }

    #[test]
    fn mec_only_fallbacks() {
        assert_eq!(
            MecOnly.decide(&request(&[true, true])).unwrap(),
            Decision::full(10, 0)
        );
        assert_eq!(
            MecOnly.decide(&request(&[false, true])).unwrap(),
            Decision::full(11, 1)
        );
        assert_eq!(
            MecOnly.decide(&request(&[false, false])).unwrap(),
            Decision::Local
        );
    }

    fn frequencies(p: f64, l: usize) -> Vec<f64> {
        let r = request(&vec![true; l]);
        let mut pol = Probabilistic::new(p, 7).unwrap();
        let n = 100_000;
        let mut counts = vec![0usize; l + 1];
        for _ in 0..n {
            counts[pol.decide(&r).unwrap().action().saturating_sub(10)] += 1;
        }
        counts.into_iter().map(|c| c as f64 / n as f64).collect()
    }

    #[test]
    fn probabilistic_frequencies() {
        assert_eq!(frequencies(0.0, 3)[0], 1.0);
        let f = frequencies(1.0, 2);
        assert_eq!(f[0], 0.0);
        assert!(
            (f[1] - 0.5).abs() < 0.02 && (f[2] - 0.5).abs() < 0.02,
            "{f:?}"
        );
        let f = frequencies(0.6, 3);
        assert!((f[0] - 0.4).abs() < 0.02, "{f:?}");
        assert!(Probabilistic::new(1.5, 0).is_err());
    }

    #[test]
    fn probabilistic_busy_choice_goes_local() {
        let r = request(&[false]);
        let mut pol = Probabilistic::new(1.0, 1).unwrap();
        assert_eq!(pol.decide(&r).unwrap(), Decision::Local);
    }

    #[test]
    fn strategy_has_at_most_one_entry() {
        assert_eq!(Decision::Local.strategy_weight(), 0);
        assert_eq!(Decision::Local.action(), 0);
        let d = Decision::full(2, 6);
        assert_eq!(d.strategy_weight(), 1);
        assert_eq!(d.action(), 3);
    }
}
