//! Experiment configuration, seeded scenario runs, sweeps and CSV output.
//!
//! A scenario has three phases: a bootstrap run that collects estimator
//! samples on the same server layout with independent traffic, offline
//! estimator training, and the evaluated policy's own run.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::agent::{AgentConfig, DrlBenchmarkPolicy, ProposedPolicy, Ranking};
use crate::capacity::SegmentModel;
use crate::cost::{CostModel, CostWeights, DelayCost, RewardMode};
use crate::error::{Error, Result};
use crate::estimator::{fit_offline, Estimator, FitConfig, FitReport, SamplePair, TargetTransform};
use crate::policy::{Decision, DecisionRequest, LocalOnly, MecOnly, Oracle, Policy, Probabilistic};
use crate::radio::{dbm_to_watts, RadioParams};
use crate::sim::{run, run_oracle, RunResult, SimConfig, Simulation, TaskOutcome};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyName {
    Proposed,
    ProposedPartial,
    Probabilistic,
    MecOnly,
    LocalOnly,
    DrlBenchmark,
    Oracle,
}

impl PolicyName {
    pub const ALL: [PolicyName; 7] = [
        PolicyName::Proposed,
        PolicyName::ProposedPartial,
        PolicyName::Probabilistic,
        PolicyName::MecOnly,
        PolicyName::LocalOnly,
        PolicyName::DrlBenchmark,
        PolicyName::Oracle,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PolicyName::Proposed => "proposed",
            PolicyName::ProposedPartial => "proposed-partial",
            PolicyName::Probabilistic => "probabilistic",
            PolicyName::MecOnly => "mec-only",
            PolicyName::LocalOnly => "local-only",
            PolicyName::DrlBenchmark => "drl-benchmark",
            PolicyName::Oracle => "oracle",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        PolicyName::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown policy `{s}`")))
    }

    fn needs_estimators(self) -> bool {
        matches!(self, PolicyName::Proposed | PolicyName::ProposedPartial)
    }

    fn needs_bootstrap(self) -> bool {
        self.needs_estimators() || self == PolicyName::DrlBenchmark
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkSection {
    pub servers: usize,
    pub area_half_width_km: f64,
    pub bandwidth_hz: f64,
    pub channels: usize,
    pub tx_power_dbm: f64,
    pub path_loss_exponent: f64,
    pub noise_dbm_per_hz: f64,
    pub min_distance_km: f64,
}

impl Default for NetworkSection {
    fn default() -> Self {
        NetworkSection {
            servers: 15,
            area_half_width_km: 5.0,
            bandwidth_hz: 20e6,
            channels: 10,
            tx_power_dbm: 23.0,
            path_loss_exponent: 3.8,
            noise_dbm_per_hz: -174.0,
            min_distance_km: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskSection {
    pub count: usize,
    pub arrival_rate: f64,
    pub input_bits: [f64; 2],
    pub work_cycles: [f64; 2],
    pub user_capability: f64,
    pub kappa: f64,
}

impl Default for TaskSection {
    fn default() -> Self {
        TaskSection {
            count: 20_000,
            arrival_rate: 15.0,
            input_bits: [8e6, 12e6],
            work_cycles: [7e9, 8e9],
            user_capability: 1e9,
            kappa: 1e-27,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CapacitySection {
    pub range: [f64; 2],
    pub segment: SegmentModel,
}

impl Default for CapacitySection {
    fn default() -> Self {
        CapacitySection {
            range: [5e9, 12e9],
            segment: SegmentModel::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecisionSection {
    /// Nearest servers asked per task (`L`).
    pub candidates: usize,
    /// Capacity history length (`U`).
    pub history_window: usize,
    /// Offloading ratios of the partial policy.
    pub ratios: Vec<f64>,
    /// Fixed offloading probability; swept over `probability_grid` if unset.
    pub probability: Option<f64>,
    pub probability_grid: Vec<f64>,
}

impl Default for DecisionSection {
    fn default() -> Self {
        DecisionSection {
            candidates: 3,
            history_window: 10,
            ratios: (1..=9).map(|i| i as f64 / 10.0).collect(),
            probability: None,
            probability_grid: (0..=10).map(|i| i as f64 / 10.0).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorSection {
    /// Edge samples collected in the bootstrap run.
    pub samples: usize,
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub validation_fraction: f64,
    pub target_transform: TargetTransform,
    pub log_inputs: bool,
}

impl Default for EstimatorSection {
    fn default() -> Self {
        let fit = FitConfig::default();
        EstimatorSection {
            samples: 10_000,
            hidden: fit.hidden,
            epochs: fit.epochs,
            batch_size: fit.batch_size,
            learning_rate: fit.learning_rate,
            validation_fraction: fit.validation_fraction,
            target_transform: fit.target_transform,
            log_inputs: fit.log_inputs,
        }
    }
}

impl EstimatorSection {
    pub fn fit_config(&self) -> FitConfig {
        FitConfig {
            hidden: self.hidden.clone(),
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            validation_fraction: self.validation_fraction,
            target_transform: self.target_transform,
            log_inputs: self.log_inputs,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostSection {
    pub w_delay: f64,
    pub w_energy: f64,
    pub delay: DelayCost,
}

impl Default for CostSection {
    fn default() -> Self {
        CostSection {
            w_delay: 1.0,
            w_energy: 0.0,
            delay: DelayCost::Identity,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    Lambda,
    Beta,
    #[serde(rename = "L")]
    Candidates,
}

impl Axis {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "lambda" => Ok(Axis::Lambda),
            "beta" => Ok(Axis::Beta),
            "L" | "l" => Ok(Axis::Candidates),
            _ => Err(Error::invalid(format!(
                "unknown sweep axis `{s}` (lambda, beta or L)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub axis: Option<Axis>,
    pub values: Vec<f64>,
    /// Policies compared in a sweep; the top-level policy alone if empty.
    pub policies: Vec<PolicyName>,
}

/// Parsed experiment file. Only `policy` is required.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub policy: PolicyName,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub network: NetworkSection,
    #[serde(default)]
    pub tasks: TaskSection,
    #[serde(default)]
    pub capacity: CapacitySection,
    #[serde(default)]
    pub decision: DecisionSection,
    #[serde(default)]
    pub agent: AgentConfig,
    #[serde(default)]
    pub estimator: EstimatorSection,
    #[serde(default)]
    pub cost: CostSection,
    #[serde(default)]
    pub sweep: SweepSection,
}

fn default_seeds() -> Vec<u64> {
    vec![1]
}

impl ExperimentConfig {
    /// Defaults everywhere, with the given policy.
    pub fn new(policy: PolicyName) -> Self {
        ExperimentConfig {
            policy,
            seeds: default_seeds(),
            network: NetworkSection::default(),
            tasks: TaskSection::default(),
            capacity: CapacitySection::default(),
            decision: DecisionSection::default(),
            agent: AgentConfig::default(),
            estimator: EstimatorSection::default(),
            cost: CostSection::default(),
            sweep: SweepSection::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn cost_model(&self) -> CostModel {
        CostModel {
            delay_cost: self.cost.delay,
            weights: CostWeights {
                delay: self.cost.w_delay,
                energy: self.cost.w_energy,
            },
        }
    }

    /// Simulator settings for one seed.
    pub fn sim_config(&self, seed: u64) -> SimConfig {
        let n = &self.network;
        SimConfig {
            servers: n.servers,
            area_half_width_km: n.area_half_width_km,
            radio: RadioParams {
                bandwidth_hz: n.bandwidth_hz,
                channels: n.channels,
                tx_power_w: dbm_to_watts(n.tx_power_dbm),
                noise_density: dbm_to_watts(n.noise_dbm_per_hz),
                path_loss_exponent: n.path_loss_exponent,
                min_distance_km: n.min_distance_km,
            },
            input_bits: (self.tasks.input_bits[0], self.tasks.input_bits[1]),
            work_cycles: (self.tasks.work_cycles[0], self.tasks.work_cycles[1]),
            user_capability: self.tasks.user_capability,
            kappa: self.tasks.kappa,
            arrival_rate: self.tasks.arrival_rate,
            tasks: self.tasks.count,
            capacity_range: (self.capacity.range[0], self.capacity.range[1]),
            segment_model: self.capacity.segment,
            candidates: self.decision.candidates,
            history_window: self.decision.history_window,
            cost: self.cost_model(),
            reward_mode: RewardMode::Delay,
            seed,
            ..SimConfig::default()
        }
    }

    /// Checks every section; errors name the offending field.
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::config("seeds", "needs at least one seed"));
        }
        self.sim_config(self.seeds[0]).validate()?;
        self.agent.validate()?;
        self.estimator.fit_config().validate()?;
        if self.estimator.samples < crate::estimator::MIN_TRAINING_SAMPLES {
            return Err(Error::config(
                "estimator.samples",
                format!("must be >= {}", crate::estimator::MIN_TRAINING_SAMPLES),
            ));
        }
        let d = &self.decision;
        if d.ratios.is_empty() || d.ratios.iter().any(|v| !(*v > 0.0 && *v <= 1.0)) {
            return Err(Error::config(
                "decision.ratios",
                "needs at least one ratio, each in (0, 1]",
            ));
        }
        if let Some(p) = d.probability {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::config("decision.probability", "must be in [0, 1]"));
            }
        }
        if d.probability_grid.is_empty()
            || d.probability_grid.iter().any(|p| !(0.0..=1.0).contains(p))
        {
            return Err(Error::config(
                "decision.probability_grid",
                "needs at least one probability, each in [0, 1]",
            ));
        }
        if let Some(axis) = self.sweep.axis {
            check_axis_values(axis, &self.sweep.values)?;
        }
        Ok(())
    }

    /// Short hex digest of the fully resolved configuration.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serialises");
        let digest = Sha256::digest(canonical.as_bytes());
        digest[..8].iter().fold(String::new(), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }

    /// Copy with one sweep axis set to `value`.
    pub fn with_axis(&self, axis: Axis, value: f64) -> Result<Self> {
        let mut c = self.clone();
        match axis {
            Axis::Lambda => c.tasks.arrival_rate = value,
            Axis::Beta => {
                let half = (c.tasks.work_cycles[1] - c.tasks.work_cycles[0]) / 2.0;
                c.tasks.work_cycles = [value - half, value + half];
            }
            Axis::Candidates => c.decision.candidates = value as usize,
        }
        c.validate()?;
        Ok(c)
    }
}

fn check_axis_values(axis: Axis, values: &[f64]) -> Result<()> {
    if values.is_empty() {
        return Err(Error::config("sweep.values", "needs at least one value"));
    }
    for &v in values {
        let ok = match axis {
            Axis::Lambda | Axis::Beta => v > 0.0 && v.is_finite(),
            Axis::Candidates => v >= 1.0 && v.fract() == 0.0,
        };
        if !ok {
            return Err(Error::config(
                "sweep.values",
                format!("invalid value {v} for this axis"),
            ));
        }
    }
    Ok(())
}

/// Uniform choice over local execution and every free candidate, the
/// agent's behaviour at full exploration.
pub struct Bootstrap {
    rng: ChaCha8Rng,
}

impl Bootstrap {
    pub fn new(seed: u64) -> Self {
        Bootstrap {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl Policy for Bootstrap {
    fn name(&self) -> &str {
        "bootstrap"
    }

    fn decide(&mut self, request: &DecisionRequest) -> Result<Decision> {
        let mut options = vec![Decision::Local];
        options.extend(
            request
                .feasible()
                .map(|c| Decision::full(c.server, c.channel.expect("feasible"))),
        );
        Ok(*options
            .choose(&mut self.rng)
            .expect("local is always there"))
    }
}

/// Runs the bootstrap policy on an independent episode of the seed's
/// network until `count` edge samples exist.
pub fn collect_samples(sim: &SimConfig, count: usize) -> Result<Vec<SamplePair>> {
    let config = SimConfig {
        episode: 1,
        tasks: usize::MAX,
        ..sim.clone()
    };
    let mut s = Simulation::new(&config)?;
    let mut policy = Bootstrap::new(sim.seed);
    while s.sample_count() < count {
        let decision = match s.next_request()? {
            Some(req) => policy.decide(req)?,
            None => break,
        };
        s.apply(decision)?;
    }
    let mut samples = s.finish()?.samples;
    samples.truncate(count);
    Ok(samples)
}

/// Delay estimator and, when energy matters, energy estimator.
#[derive(Debug, Clone)]
pub struct Estimators {
    pub delay: Estimator,
    pub delay_report: FitReport,
    pub energy: Option<Estimator>,
    pub energy_report: Option<FitReport>,
}

/// Outputs of the first two phases for one seed.
#[derive(Debug, Clone)]
pub struct Bootstrapped {
    pub samples: Vec<SamplePair>,
    /// Only fitted for policies that rank with them.
    pub estimators: Option<Estimators>,
}

impl Bootstrapped {
    /// Median reward of the bootstrap's edge tasks. Learned policies start
    /// every Q-value at its discounted sum: the idle-server level is far too
    /// optimistic under load, and the mean is dominated by overloaded
    /// servers.
    pub fn typical_reward(&self, cost: &CostModel, mode: RewardMode) -> Result<f64> {
        let mut r: Vec<f64> = self
            .samples
            .iter()
            .map(|s| crate::cost::reward(mode, s.delay, cost.cost(s.delay, s.energy)))
            .collect();
        if r.is_empty() {
            return Err(Error::Training(
                "bootstrap run produced no edge samples".into(),
            ));
        }
        r.sort_by(f64::total_cmp);
        Ok(r[r.len() / 2])
    }
}

fn fit_estimators(cfg: &ExperimentConfig, samples: &[SamplePair], seed: u64) -> Result<Estimators> {
    let fit = cfg.estimator.fit_config();
    let delay: Vec<_> = samples.iter().map(SamplePair::delay_sample).collect();
    let (delay, delay_report) = fit_offline(&delay, &fit, seed)?;
    let (energy, energy_report) = if cfg.cost.w_energy > 0.0 {
        let e: Vec<_> = samples.iter().map(SamplePair::energy_sample).collect();
        let (est, rep) = fit_offline(&e, &fit, seed.wrapping_add(1))?;
        (Some(est), Some(rep))
    } else {
        (None, None)
    };
    Ok(Estimators {
        delay,
        delay_report,
        energy,
        energy_report,
    })
}

/// Collects bootstrap samples for `seed` and, if `fit`, trains the estimators.
pub fn bootstrap(cfg: &ExperimentConfig, seed: u64, fit: bool) -> Result<Bootstrapped> {
    let samples = collect_samples(&cfg.sim_config(seed), cfg.estimator.samples)?;
    let estimators = if fit {
        Some(fit_estimators(cfg, &samples, seed)?)
    } else {
        None
    };
    Ok(Bootstrapped {
        samples,
        estimators,
    })
}

pub fn train_estimators(cfg: &ExperimentConfig, seed: u64) -> Result<Estimators> {
    Ok(bootstrap(cfg, seed, true)?.estimators.expect("fitted"))
}

fn reward_mode(cfg: &ExperimentConfig, policy: PolicyName) -> RewardMode {
    match (cfg.cost_model().is_pure_delay(), policy) {
        (true, PolicyName::ProposedPartial) => RewardMode::Partial,
        (true, _) => RewardMode::Delay,
        (false, _) => RewardMode::Cost,
    }
}

/// Probability with the lowest mean cost over `seeds`, and that cost.
pub fn sweep_p(cfg: &ExperimentConfig, grid: &[f64], seeds: &[u64]) -> Result<(f64, f64)> {
    if grid.is_empty() || seeds.is_empty() {
        return Err(Error::invalid("probability sweep needs a grid and seeds"));
    }
    let mut best = (f64::NAN, f64::INFINITY);
    for &p in grid {
        let mut total = 0.0;
        for &seed in seeds {
            total += run(&cfg.sim_config(seed), &mut Probabilistic::new(p, seed)?)?
                .metrics
                .avg_cost;
        }
        let mean = total / seeds.len() as f64;
        if mean < best.1 {
            best = (p, mean);
        }
    }
    Ok(best)
}

/// Runs one policy on one seed. Learned policies need the seed's
/// bootstrap output, with estimators for the proposed ones; the
/// probabilistic policy needs `probability`.
pub fn run_policy(
    cfg: &ExperimentConfig,
    policy: PolicyName,
    seed: u64,
    boot: Option<&Bootstrapped>,
    probability: Option<f64>,
) -> Result<RunResult> {
    let mode = reward_mode(cfg, policy);
    let sim = SimConfig {
        reward_mode: mode,
        ..cfg.sim_config(seed)
    };
    let boot =
        || boot.ok_or_else(|| Error::invalid(format!("{} needs a bootstrap run", policy.as_str())));
    let agent = |b: &Bootstrapped| -> Result<AgentConfig> {
        Ok(cfg
            .agent
            .clone()
            .start_at(b.typical_reward(&sim.cost, mode)?))
    };
    let result = match policy {
        PolicyName::LocalOnly => run(&sim, &mut LocalOnly)?,
        PolicyName::MecOnly => run(&sim, &mut MecOnly)?,
        PolicyName::Probabilistic => {
            let p = probability
                .ok_or_else(|| Error::invalid("probabilistic policy needs a probability"))?;
            run(&sim, &mut Probabilistic::new(p, seed)?)?
        }
        PolicyName::Oracle => run_oracle(&sim, &mut Oracle::new(sim.cost, sim.kappa, None))?,
        PolicyName::DrlBenchmark => {
            let b = boot()?;
            let mut p = DrlBenchmarkPolicy::new(
                sim.candidates,
                sim.history_window,
                &agent(b)?,
                sim.tasks,
                seed,
            )?;
            run(&sim, &mut p)?
        }
        PolicyName::Proposed | PolicyName::ProposedPartial => {
            let b = boot()?;
            let est = b.estimators.as_ref().ok_or_else(|| {
                Error::invalid(format!("{} needs trained estimators", policy.as_str()))
            })?;
            let ranking = if policy == PolicyName::ProposedPartial {
                Ranking::Partial {
                    delay: Box::new(est.delay.clone()),
                    ratios: cfg.decision.ratios.clone(),
                }
            } else if let Some(energy) = &est.energy {
                Ranking::General {
                    delay: Box::new(est.delay.clone()),
                    energy: Box::new(energy.clone()),
                    weights: sim.cost.weights,
                }
            } else {
                Ranking::Delay(Box::new(est.delay.clone()))
            };
            let mut p =
                ProposedPolicy::new(ranking, sim.num_servers(), &agent(b)?, sim.tasks, seed)?;
            run(&sim, &mut p)?
        }
    };
    check_finite(&result)?;
    Ok(result)
}

fn check_finite(result: &RunResult) -> Result<()> {
    let m = &result.metrics;
    if [m.avg_delay, m.avg_energy, m.avg_cost, m.mec_fraction]
        .iter()
        .all(|v| v.is_finite())
    {
        Ok(())
    } else {
        Err(Error::Integrity("run produced non-finite metrics".into()))
    }
}

/// One row of the aggregate CSV.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregateRow {
    pub policy: String,
    pub lambda: f64,
    pub beta_mean: f64,
    pub candidates: usize,
    pub seed: u64,
    pub avg_delay: f64,
    pub avg_energy: f64,
    pub avg_cost: f64,
    pub mec_fraction: f64,
}

impl AggregateRow {
    pub fn new(cfg: &ExperimentConfig, policy: PolicyName, seed: u64, result: &RunResult) -> Self {
        AggregateRow {
            policy: policy.as_str().to_string(),
            lambda: cfg.tasks.arrival_rate,
            beta_mean: (cfg.tasks.work_cycles[0] + cfg.tasks.work_cycles[1]) / 2.0,
            candidates: cfg.decision.candidates,
            seed,
            avg_delay: result.metrics.avg_delay,
            avg_energy: result.metrics.avg_energy,
            avg_cost: result.metrics.avg_cost,
            mec_fraction: result.metrics.mec_fraction,
        }
    }
}

pub const OUTCOME_HEADER: &str =
    "task_id,t_arr,action,v_ratio,server_id,channel,tau_trans,tau_queue,tau_comp,delay,energy,cost,reward";
pub const AGGREGATE_HEADER: &str =
    "policy,lambda,beta_mean,L,seed,avg_delay,avg_energy,avg_cost,mec_fraction";

fn opt(v: Option<usize>) -> String {
    v.map_or(String::new(), |x| x.to_string())
}

/// Per-task CSV; the first line records the configuration hash.
pub fn outcomes_csv(hash: &str, outcomes: &[TaskOutcome]) -> String {
    let mut s = format!("# config_hash={hash}\n{OUTCOME_HEADER}\n");
    for o in outcomes {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            o.task_id,
            o.arrival_time,
            o.action,
            o.ratio,
            opt(o.server),
            opt(o.channel),
            o.tau_trans,
            o.tau_queue,
            o.tau_comp,
            o.delay,
            o.energy,
            o.cost,
            o.reward
        );
    }
    s
}

pub fn aggregate_csv(hash: &str, rows: &[AggregateRow]) -> String {
    let mut s = format!("# config_hash={hash}\n{AGGREGATE_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{}",
            r.policy,
            r.lambda,
            r.beta_mean,
            r.candidates,
            r.seed,
            r.avg_delay,
            r.avg_energy,
            r.avg_cost,
            r.mec_fraction
        );
    }
    s
}

/// Result of running one policy over every configured seed.
#[derive(Debug, Clone)]
pub struct ScenarioOutput {
    pub rows: Vec<AggregateRow>,
    /// Per-seed outcomes, in seed order.
    pub outcomes: Vec<(u64, Vec<TaskOutcome>)>,
    /// The probability used by the probabilistic policy.
    pub probability: Option<f64>,
}

/// Runs the bootstrap phases per seed when needed, sweeps the offloading
/// probability when unset, then runs `policy` on every seed.
pub fn run_scenario(
    cfg: &ExperimentConfig,
    policy: PolicyName,
    boots: &mut BTreeMap<u64, Bootstrapped>,
) -> Result<ScenarioOutput> {
    let probability = if policy == PolicyName::Probabilistic {
        Some(match cfg.decision.probability {
            Some(p) => p,
            None => sweep_p(cfg, &cfg.decision.probability_grid, &cfg.seeds)?.0,
        })
    } else {
        None
    };
    let mut rows = Vec::new();
    let mut outcomes = Vec::new();
    for &seed in &cfg.seeds {
        if policy.needs_bootstrap() {
            let fit = policy.needs_estimators();
            let stale = boots
                .get(&seed)
                .is_none_or(|b| fit && b.estimators.is_none());
            if stale {
                boots.insert(seed, bootstrap(cfg, seed, fit)?);
            }
        }
        let result = run_policy(cfg, policy, seed, boots.get(&seed), probability)?;
        rows.push(AggregateRow::new(cfg, policy, seed, &result));
        outcomes.push((seed, result.outcomes));
    }
    Ok(ScenarioOutput {
        rows,
        outcomes,
        probability,
    })
}

/// One aggregate row per (axis value, policy, seed).
pub fn sweep(
    cfg: &ExperimentConfig,
    axis: Axis,
    values: &[f64],
    policies: &[PolicyName],
) -> Result<Vec<AggregateRow>> {
    check_axis_values(axis, values)?;
    if policies.is_empty() {
        return Err(Error::config("sweep.policies", "needs at least one policy"));
    }
    let mut rows = Vec::new();
    for &v in values {
        let point = cfg.with_axis(axis, v)?;
        let mut boots = BTreeMap::new();
        for &policy in policies {
            rows.extend(run_scenario(&point, policy, &mut boots)?.rows);
        }
    }
    Ok(rows)
}

/// Writes `text` to `dir/name`, creating `dir` when needed.
pub fn write_output(dir: &Path, name: &str, text: &str) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(name), text)?;
    Ok(())
}
