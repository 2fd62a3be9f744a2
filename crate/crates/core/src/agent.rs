//! Double deep Q-learning agent: state construction from estimated delays,
//! epsilon-greedy selection, targets, replay and the two learned policies
//! (ranked-state and raw-state).

use std::collections::{BTreeMap, VecDeque};
use std::path::Path;

use ndarray::Array2;
use rand::seq::IndexedRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cost::CostWeights;
use crate::error::{Error, Result};
use crate::estimator::Predictor;
use crate::nn::{train_step, Adam, Mlp};
use crate::policy::{Decision, DecisionRequest, Policy};
use crate::sim::TaskOutcome;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub discount: f64,
    pub replay_capacity: usize,
    pub batch_size: usize,
    /// Minibatch steps per finished task.
    pub train_steps: usize,
    /// Copy the evaluation weights into the target network every this many
    /// training steps.
    pub sync_period: usize,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Fraction of the episode over which epsilon decays linearly.
    pub epsilon_decay_fraction: f64,
    /// Number of past actions in the state (`A`).
    pub history: usize,
    /// Rewards are multiplied by this before entering the targets.
    pub reward_scale: f64,
    /// Every Q-value starts here. Unset means zero, unless the experiment
    /// runner derives it from the scenario (see [`AgentConfig::start_at`]).
    pub initial_q: Option<f64>,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            hidden: vec![512, 512],
            learning_rate: 1e-3,
            discount: 0.95,
            replay_capacity: 100_000,
            batch_size: 32,
            train_steps: 1,
            sync_period: 1,
            epsilon_start: 1.0,
            epsilon_end: 0.01,
            epsilon_decay_fraction: 0.25,
            history: 5,
            reward_scale: 1.0,
            initial_q: None,
        }
    }
}

impl AgentConfig {
    /// Sets `initial_q` to the discounted value of receiving `reward` on
    /// every task, unless it is already set.
    pub fn start_at(mut self, reward: f64) -> Self {
        if self.initial_q.is_none() {
            self.initial_q = Some(reward * self.reward_scale / (1.0 - self.discount).max(1e-6));
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, reason: &str| Err(Error::config(format!("agent.{field}"), reason));
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return bad("hidden", "needs at least one layer, all widths >= 1");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate", "must be > 0");
        }
        if !(0.0..=1.0).contains(&self.discount) {
            return bad("discount", "must be in [0, 1]");
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be >= 1");
        }
        if self.replay_capacity < self.batch_size {
            return bad("replay_capacity", "must be >= batch_size");
        }
        if self.train_steps == 0 {
            return bad("train_steps", "must be >= 1");
        }
        if self.sync_period == 0 {
            return bad("sync_period", "must be >= 1");
        }
        if !(0.0..=1.0).contains(&self.epsilon_start) || !(0.0..=1.0).contains(&self.epsilon_end) {
            return bad("epsilon_start", "epsilon values must be in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.epsilon_decay_fraction) {
            return bad("epsilon_decay_fraction", "must be in [0, 1]");
        }
        if !(self.reward_scale > 0.0) || !self.reward_scale.is_finite() {
            return bad("reward_scale", "must be finite and > 0");
        }
        if self.initial_q.is_some_and(|q| !q.is_finite()) {
            return bad("initial_q", "must be finite");
        }
        Ok(())
    }
}

/// Linear decay from `start` to `end` over the first `decay_steps` decisions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub end: f64,
    pub decay_steps: u64,
}

impl EpsilonSchedule {
    pub fn new(config: &AgentConfig, total_tasks: usize) -> Self {
        EpsilonSchedule {
            start: config.epsilon_start,
            end: config.epsilon_end,
            decay_steps: (config.epsilon_decay_fraction * total_tasks as f64).round() as u64,
        }
    }

    pub fn constant(epsilon: f64) -> Self {
        EpsilonSchedule {
            start: epsilon,
            end: epsilon,
            decay_steps: 0,
        }
    }

    pub fn at(&self, step: u64) -> f64 {
        if step >= self.decay_steps {
            return self.end;
        }
        self.start + (self.end - self.start) * step as f64 / self.decay_steps as f64
    }
}

/// Ranks the `(index, score)` entries by ascending score (ties by lower
/// index) and writes ranks `1..=l` into a zero vector of length `len`.
pub fn rank_scores(scores: &[(usize, f64)], len: usize, l: usize) -> Vec<f64> {
    let mut order: Vec<&(usize, f64)> = scores.iter().collect();
    order.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    let mut omega = vec![0.0; len];
    for (rank, (idx, _)) in order.into_iter().take(l).enumerate() {
        omega[*idx] = (rank + 1) as f64;
    }
    omega
}

/// Ranking of the feasible candidates by estimated edge delay; length `M`.
pub fn build_state(request: &DecisionRequest, delay: &dyn Predictor) -> Vec<f64> {
    let scores: Vec<(usize, f64)> = request
        .feasible()
        .map(|c| {
            (
                c.server,
                delay.predict(&c.features(request.input_bits, request.work_cycles, 1.0)),
            )
        })
        .collect();
    rank_scores(&scores, request.num_servers, request.candidates.len())
}

/// Ranking by the weighted sum of estimated delay and energy.
pub fn build_state_general(
    request: &DecisionRequest,
    delay: &dyn Predictor,
    energy: &dyn Predictor,
    weights: CostWeights,
) -> Vec<f64> {
    let scores: Vec<(usize, f64)> = request
        .feasible()
        .map(|c| {
            let x = c.features(request.input_bits, request.work_cycles, 1.0);
            let d = if weights.delay > 0.0 {
                delay.predict(&x)
            } else {
                0.0
            };
            let e = if weights.energy > 0.0 {
                energy.predict(&x)
            } else {
                0.0
            };
            (c.server, weights.total(d, e))
        })
        .collect();
    rank_scores(&scores, request.num_servers, request.candidates.len())
}

/// Ranking over the (server, ratio) grid by the slower of the local and the
/// estimated edge part; entry `m * ratios.len() + i` is server `m` with
/// `ratios[i]`.
pub fn build_state_partial(
    request: &DecisionRequest,
    delay: &dyn Predictor,
    ratios: &[f64],
) -> Vec<f64> {
    let mut scores = Vec::new();
    for c in request.feasible() {
        for (i, &v) in ratios.iter().enumerate() {
            let edge = delay.predict(&c.features(request.input_bits, request.work_cycles, v));
            scores.push((
                c.server * ratios.len() + i,
                request.local_delay(v).max(edge),
            ));
        }
    }
    rank_scores(
        &scores,
        request.num_servers * ratios.len(),
        request.candidates.len(),
    )
}

/// Epsilon-greedy choice restricted to `feasible`; greedy ties go to the
/// lowest index.
pub fn select_action<R: Rng + ?Sized>(
    q: &[f64],
    epsilon: f64,
    feasible: &[usize],
    rng: &mut R,
) -> usize {
    assert!(!feasible.is_empty(), "feasible action set is empty");
    if epsilon > 0.0 && rng.random::<f64>() < epsilon {
        return *feasible.choose(rng).expect("non-empty");
    }
    greedy(q, feasible)
}

fn greedy(q: &[f64], feasible: &[usize]) -> usize {
    let mut best = feasible[0];
    for &a in feasible {
        if q[a] > q[best] || (q[a] == q[best] && a < best) {
            best = a;
        }
    }
    best
}

/// Double-DQN target: `q_current` with entry `action` replaced by
/// `reward + discount * q_target_next[a*]`, where `a*` maximises
/// `q_eval_next` over `next_feasible`.
pub fn td_update(
    q_current: &[f64],
    action: usize,
    reward: f64,
    q_eval_next: &[f64],
    q_target_next: &[f64],
    next_feasible: &[usize],
    discount: f64,
) -> Vec<f64> {
    let a_star = greedy(q_eval_next, next_feasible);
    let mut target = q_current.to_vec();
    target[action] = reward + discount * q_target_next[a_star];
    target
}

/// Ring buffer of `(state, target Q-vector)` pairs.
#[derive(Debug, Clone)]
pub struct ReplayMemory {
    capacity: usize,
    entries: Vec<(Vec<f64>, Vec<f64>)>,
    next: usize,
}

impl ReplayMemory {
    pub fn new(capacity: usize) -> Self {
        ReplayMemory {
            capacity,
            entries: Vec::with_capacity(capacity.min(1 << 16)),
            next: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn push(&mut self, state: Vec<f64>, target: Vec<f64>) {
        if self.entries.len() < self.capacity {
            self.entries.push((state, target));
        } else {
            self.entries[self.next] = (state, target);
        }
        self.next = (self.next + 1) % self.capacity;
    }

    pub fn entries(&self) -> &[(Vec<f64>, Vec<f64>)] {
        &self.entries
    }

    /// Uniform minibatch drawn with replacement.
    pub fn sample<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> (Array2<f64>, Array2<f64>) {
        let picks: Vec<usize> = (0..batch)
            .map(|_| rng.random_range(0..self.entries.len()))
            .collect();
        let (sd, td) = (self.entries[0].0.len(), self.entries[0].1.len());
        let x = Array2::from_shape_fn((batch, sd), |(i, j)| self.entries[picks[i]].0[j]);
        let y = Array2::from_shape_fn((batch, td), |(i, j)| self.entries[picks[i]].1[j]);
        (x, y)
    }
}

/// Evaluation and target networks of identical shape.
#[derive(Debug, Clone)]
pub struct QNetworkPair {
    pub eval: Mlp,
    pub target: Mlp,
    optimizer: Adam,
    sync_period: usize,
    steps: u64,
}

impl QNetworkPair {
    /// Output layer starts at zero weights and bias `initial_q`, so every
    /// action begins with the same value.
    pub fn new<R: Rng + ?Sized>(
        sizes: &[usize],
        learning_rate: f64,
        sync_period: usize,
        initial_q: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let mut eval = Mlp::new(sizes, rng)?;
        let last = eval.layers_mut().last_mut().expect("at least one layer");
        last.weights.fill(0.0);
        last.bias.fill(initial_q);
        Ok(QNetworkPair {
            target: eval.clone(),
            optimizer: Adam::new(&eval, learning_rate),
            eval,
            sync_period,
            steps: 0,
        })
    }

    /// One minibatch step on the evaluation network, then a sync when due.
    /// Returns the loss, or `None` while the memory is smaller than a batch.
    pub fn train_and_sync<R: Rng + ?Sized>(
        &mut self,
        memory: &ReplayMemory,
        batch: usize,
        rng: &mut R,
    ) -> Result<Option<f64>> {
        if memory.len() < batch {
            return Ok(None);
        }
        let (x, y) = memory.sample(batch, rng);
        let loss = train_step(&mut self.eval, &mut self.optimizer, x.view(), y.view())?;
        self.steps += 1;
        if self.steps.is_multiple_of(self.sync_period as u64) {
            self.target.copy_from(&self.eval);
        }
        Ok(Some(loss))
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }
}

#[derive(Debug, Clone)]
struct Transition {
    state: Vec<f64>,
    action: usize,
    reward: Option<f64>,
    next: Option<(Vec<f64>, Vec<usize>)>,
}

/// Online double-DQN learner shared by both learned policies.
///
/// A task's reward is only known when it departs, usually after several
/// later tasks were decided, so transitions wait until both their reward and
/// the next task's state are known.
#[derive(Debug, Clone)]
pub struct DqnLearner {
    config: AgentConfig,
    nets: QNetworkPair,
    memory: ReplayMemory,
    rng: ChaCha8Rng,
    schedule: EpsilonSchedule,
    decisions: u64,
    outputs: usize,
    history: VecDeque<usize>,
    pending: BTreeMap<u64, Transition>,
    last_task: Option<u64>,
    last_loss: Option<f64>,
}

impl DqnLearner {
    pub fn new(
        config: &AgentConfig,
        state_dim: usize,
        outputs: usize,
        total_tasks: usize,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut sizes = vec![state_dim + config.history];
        sizes.extend(&config.hidden);
        sizes.push(outputs);
        Ok(DqnLearner {
            nets: QNetworkPair::new(
                &sizes,
                config.learning_rate,
                config.sync_period,
                config.initial_q.unwrap_or(0.0),
                &mut rng,
            )?,
            memory: ReplayMemory::new(config.replay_capacity),
            rng,
            schedule: EpsilonSchedule::new(config, total_tasks),
            decisions: 0,
            outputs,
            history: VecDeque::from(vec![0; config.history]),
            pending: BTreeMap::new(),
            last_task: None,
            last_loss: None,
            config: config.clone(),
        })
    }

    pub fn set_schedule(&mut self, schedule: EpsilonSchedule) {
        self.schedule = schedule;
    }

    pub fn epsilon(&self) -> f64 {
        self.schedule.at(self.decisions)
    }

    pub fn networks(&self) -> &QNetworkPair {
        &self.nets
    }

    pub fn memory(&self) -> &ReplayMemory {
        &self.memory
    }

    pub fn last_loss(&self) -> Option<f64> {
        self.last_loss
    }

    /// Full network input: `core` followed by the recent actions, each
    /// divided by the number of outputs.
    pub fn state(&self, core: &[f64]) -> Vec<f64> {
        let mut s = core.to_vec();
        s.extend(self.history.iter().map(|&a| a as f64 / self.outputs as f64));
        s
    }

    /// Chooses an action among `feasible` for task `task_id`.
    pub fn act(&mut self, task_id: u64, core: &[f64], feasible: &[usize]) -> Result<usize> {
        let state = self.state(core);
        if let Some(prev) = self.last_task {
            if let Some(t) = self.pending.get_mut(&prev) {
                t.next = Some((state.clone(), feasible.to_vec()));
            }
            self.try_finalize(prev)?;
        }
        let eps = self.schedule.at(self.decisions);
        let q = self.nets.eval.forward(&state)?;
        let action = select_action(&q, eps, feasible, &mut self.rng);
        self.pending.insert(
            task_id,
            Transition {
                state,
                action,
                reward: None,
                next: None,
            },
        );
        self.last_task = Some(task_id);
        if self.config.history > 0 {
            self.history.pop_back();
            self.history.push_front(action);
        }
        self.decisions += 1;
        Ok(action)
    }

    pub fn reward(&mut self, task_id: u64, reward: f64) -> Result<()> {
        if let Some(t) = self.pending.get_mut(&task_id) {
            t.reward = Some(reward * self.config.reward_scale);
            self.try_finalize(task_id)?;
        }
        Ok(())
    }

    fn try_finalize(&mut self, task_id: u64) -> Result<()> {
        let ready = self
            .pending
            .get(&task_id)
            .is_some_and(|t| t.reward.is_some() && t.next.is_some());
        if !ready {
            return Ok(());
        }
        let t = self.pending.remove(&task_id).expect("present");
        let (next_state, next_feasible) = t.next.expect("ready");
        let q_current = self.nets.eval.forward(&t.state)?;
        let q_eval_next = self.nets.eval.forward(&next_state)?;
        let q_target_next = self.nets.target.forward(&next_state)?;
        let target = td_update(
            &q_current,
            t.action,
            t.reward.expect("ready"),
            &q_eval_next,
            &q_target_next,
            &next_feasible,
            self.config.discount,
        );
        self.memory.push(t.state, target);
        for _ in 0..self.config.train_steps {
            if let Some(loss) =
                self.nets
                    .train_and_sync(&self.memory, self.config.batch_size, &mut self.rng)?
            {
                self.last_loss = Some(loss);
            }
        }
        Ok(())
    }

    pub fn checkpoint(&self) -> AgentCheckpoint {
        AgentCheckpoint {
            eval: self.nets.eval.clone(),
            target: self.nets.target.clone(),
            schedule: self.schedule,
            decisions: self.decisions,
            history: self.history.iter().copied().collect(),
        }
    }
}

/// Saved agent: both networks, the exploration state and the action history.
/// The replay memory is not saved, so training cannot resume exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentCheckpoint {
    pub eval: Mlp,
    pub target: Mlp,
    pub schedule: EpsilonSchedule,
    pub decisions: u64,
    pub history: Vec<usize>,
}

impl AgentCheckpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self).map_err(|e| Error::Parse(e.to_string()))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Parse(e.to_string()))
    }
}

/// Maps an action index to a strategy. Action `0` is local, action `m + 1`
/// is server `m` (binary offloading); with `ratios` the action indexes the
/// (server, ratio) grid directly.
pub fn action_to_strategy(
    action: usize,
    request: &DecisionRequest,
    ratios: Option<&[f64]>,
) -> Result<Decision> {
    let (server, ratio) = match ratios {
        None if action == 0 => return Ok(Decision::Local),
        None => (action - 1, 1.0),
        Some(v) => (action / v.len(), v[action % v.len()]),
    };
    let channel = request
        .candidate(server)
        .and_then(|c| c.channel)
        .ok_or_else(|| {
            Error::Integrity(format!(
                "action {action} names server {server} without a free channel"
            ))
        })?;
    Ok(Decision::Offload {
        server,
        channel,
        ratio,
    })
}

/// What the ranked-state policy ranks by.
pub enum Ranking {
    Delay(Box<dyn Predictor>),
    General {
        delay: Box<dyn Predictor>,
        energy: Box<dyn Predictor>,
        weights: CostWeights,
    },
    Partial {
        delay: Box<dyn Predictor>,
        ratios: Vec<f64>,
    },
}

/// The proposed hybrid policy: estimated-delay rankings fed to a double-DQN.
pub struct ProposedPolicy {
    ranking: Ranking,
    learner: DqnLearner,
    name: String,
}

impl ProposedPolicy {
    pub fn new(
        ranking: Ranking,
        servers: usize,
        config: &AgentConfig,
        total_tasks: usize,
        seed: u64,
    ) -> Result<Self> {
        let (dim, outputs, name) = match &ranking {
            Ranking::Partial { ratios, .. } => {
                if ratios.is_empty() || ratios.iter().any(|v| !(*v > 0.0 && *v <= 1.0)) {
                    return Err(Error::config(
                        "decision.ratios",
                        "needs at least one ratio, each in (0, 1]",
                    ));
                }
                (
                    servers * ratios.len(),
                    servers * ratios.len(),
                    "proposed-partial",
                )
            }
            _ => (servers, servers + 1, "proposed"),
        };
        Ok(ProposedPolicy {
            learner: DqnLearner::new(config, dim, outputs, total_tasks, seed)?,
            ranking,
            name: name.to_string(),
        })
    }

    pub fn learner(&self) -> &DqnLearner {
        &self.learner
    }

    pub fn learner_mut(&mut self) -> &mut DqnLearner {
        &mut self.learner
    }

    pub fn ranking(&self, request: &DecisionRequest) -> Vec<f64> {
        match &self.ranking {
            Ranking::Delay(d) => build_state(request, d.as_ref()),
            Ranking::General {
                delay,
                energy,
                weights,
            } => build_state_general(request, delay.as_ref(), energy.as_ref(), *weights),
            Ranking::Partial { delay, ratios } => {
                build_state_partial(request, delay.as_ref(), ratios)
            }
        }
    }
}

impl Policy for ProposedPolicy {
    fn name(&self) -> &str {
        &self.name
    }

    fn decide(&mut self, request: &DecisionRequest) -> Result<Decision> {
        let omega = self.ranking(request);
        let feasible: Vec<usize> = match &self.ranking {
            Ranking::Partial { ratios, .. } => {
                let mut f: Vec<usize> = request
                    .feasible()
                    .flat_map(|c| (0..ratios.len()).map(move |i| c.server * ratios.len() + i))
                    .collect();
                f.sort_unstable();
                f
            }
            _ => {
                let mut f = vec![0];
                f.extend(request.feasible().map(|c| c.server + 1));
                f.sort_unstable();
                f
            }
        };
        if feasible.is_empty() {
            // every candidate is busy and the grid has no local action
            return Ok(Decision::Local);
        }
        let action = self.learner.act(request.task_id, &omega, &feasible)?;
        let ratios = match &self.ranking {
            Ranking::Partial { ratios, .. } => Some(ratios.as_slice()),
            _ => None,
        };
        action_to_strategy(action, request, ratios)
    }

    fn observe(&mut self, outcome: &TaskOutcome) {
        self.learner
            .reward(outcome.task_id, outcome.reward)
            .expect("training on finite data");
    }
}

/// Raw candidate features: capacity history, backlog and rate per candidate
/// in distance order, then the task size. Scaled to order one.
pub fn raw_state(request: &DecisionRequest, history_window: usize, candidates: usize) -> Vec<f64> {
    let mut s = Vec::with_capacity(candidates * (history_window + 2) + 2);
    for j in 0..candidates {
        match request.candidates.get(j) {
            Some(c) => {
                s.extend(c.capacity_history.iter().map(|f| f / 1e10));
                s.push(c.backlog / 1e10);
                s.push(c.rate / 1e8);
            }
            None => s.extend(std::iter::repeat_n(0.0, history_window + 2)),
        }
    }
    s.push(request.input_bits / 1e7);
    s.push(request.work_cycles / 1e10);
    s
}

/// Double-DQN on the raw observations; action `j + 1` is the `j`-th nearest
/// candidate.
pub struct DrlBenchmarkPolicy {
    learner: DqnLearner,
    history_window: usize,
    candidates: usize,
}

impl DrlBenchmarkPolicy {
    pub fn new(
        candidates: usize,
        history_window: usize,
        config: &AgentConfig,
        total_tasks: usize,
        seed: u64,
    ) -> Result<Self> {
        let dim = candidates * (history_window + 2) + 2;
        Ok(DrlBenchmarkPolicy {
            learner: DqnLearner::new(config, dim, candidates + 1, total_tasks, seed)?,
            history_window,
            candidates,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.candidates * (self.history_window + 2) + 2 + self.learner.config.history
    }

    pub fn learner_mut(&mut self) -> &mut DqnLearner {
        &mut self.learner
    }
}

impl Policy for DrlBenchmarkPolicy {
    fn name(&self) -> &str {
        "drl-benchmark"
    }

    fn decide(&mut self, request: &DecisionRequest) -> Result<Decision> {
        let core = raw_state(request, self.history_window, self.candidates);
        let mut feasible = vec![0];
        feasible.extend(
            request
                .candidates
                .iter()
                .enumerate()
                .filter(|(_, c)| c.is_feasible())
                .map(|(j, _)| j + 1),
        );
        let action = self.learner.act(request.task_id, &core, &feasible)?;
        if action == 0 {
            return Ok(Decision::Local);
        }
        let c = &request.candidates[action - 1];
        Ok(Decision::full(c.server, c.channel.expect("feasible")))
    }

    fn observe(&mut self, outcome: &TaskOutcome) {
        self.learner
            .reward(outcome.task_id, outcome.reward)
            .expect("training on finite data");
    }
}
