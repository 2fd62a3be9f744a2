//! Event-driven simulation of task arrivals, uploads, FIFO edge queues,
//! computation and departures.
//!
//! The simulation advances from one task arrival to the next. At each arrival
//! it builds the [`DecisionRequest`] for the task, a policy answers with a
//! [`Decision`], and [`Simulation::apply`] schedules the resulting upload,
//! queueing and computation events. Edge delays follow exactly from the
//! servers' capacity traces.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::capacity::{
    generate_trace, local_energy, CapacityTrace, GrowingTrace, SegmentModel, WorkAmount,
};
use crate::cost::{reward, CostModel, RewardMode};
use crate::error::{Error, Result};
use crate::estimator::SamplePair;
use crate::policy::{CandidateInfo, Decision, DecisionRequest, Oracle, Policy};
use crate::radio::{
    best_free_channel, nearest_servers, rate_matrix, ChannelOccupancy, Position, RadioParams,
    RateMatrix,
};

/// Independent RNG stream for one purpose within a seeded run.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

const STREAM_PLACEMENT: u64 = 1;
const STREAM_ARRIVALS: u64 = 2;
const STREAM_FADING: u64 = 3;
const STREAM_TRACES: u64 = 1000;
const STREAMS_PER_EPISODE: u64 = 1 << 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub id: u64,
    pub arrival_time: f64,
    pub input_bits: f64,
    pub work_cycles: f64,
    pub position: Position,
    pub user_capability: f64,
}

/// Where tasks come from.
#[derive(Debug, Clone, PartialEq)]
pub enum Workload {
    /// Poisson arrivals, uniform positions, uniform sizes.
    Poisson,
    /// A fixed list of tasks, in arrival order.
    Fixed(Vec<TaskSpec>),
}

/// Where servers are and how fast they run.
#[derive(Debug, Clone, PartialEq)]
pub enum ServerLayout {
    /// Uniform positions and generated capacity traces.
    Random,
    Fixed(Vec<(Position, CapacityTrace)>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub servers: usize,
    pub area_half_width_km: f64,
    pub radio: RadioParams,
    pub input_bits: (f64, f64),
    pub work_cycles: (f64, f64),
    pub user_capability: f64,
    pub kappa: f64,
    pub arrival_rate: f64,
    pub tasks: usize,
    pub capacity_range: (f64, f64),
    pub segment_model: SegmentModel,
    pub candidates: usize,
    pub history_window: usize,
    pub cost: CostModel,
    pub reward_mode: RewardMode,
    pub seed: u64,
    /// Selects independent task, fading and capacity streams on the same
    /// server layout.
    pub episode: u64,
    pub workload: Workload,
    pub layout: ServerLayout,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            servers: 15,
            area_half_width_km: 5.0,
            radio: RadioParams::default(),
            input_bits: (8e6, 12e6),
            work_cycles: (7e9, 8e9),
            user_capability: 1e9,
            kappa: 1e-27,
            arrival_rate: 15.0,
            tasks: 20_000,
            capacity_range: (5e9, 12e9),
            segment_model: SegmentModel::default(),
            candidates: 3,
            history_window: 10,
            cost: CostModel::default(),
            reward_mode: RewardMode::Delay,
            seed: 1,
            episode: 0,
            workload: Workload::Poisson,
            layout: ServerLayout::Random,
        }
    }
}

fn check_range(field: &str, (lo, hi): (f64, f64)) -> Result<()> {
    if !(lo > 0.0) || !(hi >= lo) || !hi.is_finite() {
        return Err(Error::config(
            field,
            format!("need 0 < min <= max, got [{lo}, {hi}]"),
        ));
    }
    Ok(())
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        self.radio.validate()?;
        self.cost.validate()?;
        self.segment_model
            .validate()
            .map_err(|e| Error::config("capacity.segment", e.to_string()))?;
        check_range("tasks.input_bits", self.input_bits)?;
        check_range("tasks.work_cycles", self.work_cycles)?;
        check_range("capacity.range", self.capacity_range)?;
        let servers = match &self.layout {
            ServerLayout::Random => self.servers,
            ServerLayout::Fixed(s) => s.len(),
        };
        if servers == 0 {
            return Err(Error::config("network.servers", "must be >= 1"));
        }
        if self.candidates == 0 || self.candidates > servers {
            return Err(Error::config(
                "decision.candidates",
                format!("must be in [1, {servers}], got {}", self.candidates),
            ));
        }
        if self.history_window == 0 {
            return Err(Error::config("decision.history_window", "must be >= 1"));
        }
        if !(self.arrival_rate > 0.0) || !self.arrival_rate.is_finite() {
            return Err(Error::config(
                "tasks.arrival_rate",
                "must be finite and > 0",
            ));
        }
        if !(self.user_capability > 0.0) {
            return Err(Error::config("tasks.user_capability", "must be > 0"));
        }
        if !(self.kappa >= 0.0) {
            return Err(Error::config("tasks.kappa", "must be >= 0"));
        }
        if !(self.area_half_width_km > 0.0) {
            return Err(Error::config("network.area_half_width_km", "must be > 0"));
        }
        if self.tasks == 0 && matches!(self.workload, Workload::Poisson) {
            return Err(Error::config("tasks.count", "must be >= 1"));
        }
        Ok(())
    }

    pub fn num_servers(&self) -> usize {
        match &self.layout {
            ServerLayout::Random => self.servers,
            ServerLayout::Fixed(s) => s.len(),
        }
    }
}

/// Poisson task stream: exponential inter-arrivals, uniform positions and sizes.
#[derive(Debug, Clone)]
pub struct ArrivalProcess {
    rng: ChaCha8Rng,
    inter_arrival: Exp<f64>,
    half_width: f64,
    input_bits: (f64, f64),
    work_cycles: (f64, f64),
    user_capability: f64,
    clock: f64,
    next_id: u64,
}

fn uniform<R: Rng>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

impl ArrivalProcess {
    pub fn new(config: &SimConfig, rng: ChaCha8Rng) -> Result<Self> {
        let inter_arrival = Exp::new(config.arrival_rate)
            .map_err(|e| Error::config("tasks.arrival_rate", e.to_string()))?;
        Ok(ArrivalProcess {
            rng,
            inter_arrival,
            half_width: config.area_half_width_km,
            input_bits: config.input_bits,
            work_cycles: config.work_cycles,
            user_capability: config.user_capability,
            clock: 0.0,
            next_id: 0,
        })
    }
}

impl Iterator for ArrivalProcess {
    type Item = TaskSpec;

    fn next(&mut self) -> Option<TaskSpec> {
        self.clock += self.inter_arrival.sample(&mut self.rng);
        let position = Position::random(self.half_width, &mut self.rng);
        let input_bits = uniform(&mut self.rng, self.input_bits);
        let work_cycles = uniform(&mut self.rng, self.work_cycles);
        let id = self.next_id;
        self.next_id += 1;
        Some(TaskSpec {
            id,
            arrival_time: self.clock,
            input_bits,
            work_cycles,
            position,
            user_capability: self.user_capability,
        })
    }
}

/// Realised result of one task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskOutcome {
    pub task_id: u64,
    pub arrival_time: f64,
    /// `0` for local, `m + 1` for server `m`.
    pub action: usize,
    pub ratio: f64,
    pub server: Option<usize>,
    pub channel: Option<usize>,
    pub tau_trans: f64,
    pub tau_queue: f64,
    pub tau_comp: f64,
    /// Edge timestamps; all equal to the arrival time for local tasks.
    pub t_queue: f64,
    pub t_comp: f64,
    pub t_dep: f64,
    pub local_delay: f64,
    pub edge_delay: f64,
    pub delay: f64,
    pub energy: f64,
    pub cost: f64,
    pub reward: f64,
}

impl TaskOutcome {
    pub fn is_edge(&self) -> bool {
        self.server.is_some()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UploadRecord {
    pub task_id: u64,
    pub server: usize,
    pub channel: usize,
    pub start: f64,
    pub end: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ServiceRecord {
    pub task_id: u64,
    pub server: usize,
    /// Position in the server's queue arrival order.
    pub enqueue_order: u64,
    pub work: f64,
    pub t_queue: f64,
    pub t_comp: f64,
    pub t_dep: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RunMetrics {
    pub tasks: usize,
    pub avg_delay: f64,
    pub avg_energy: f64,
    pub avg_cost: f64,
    pub mec_fraction: f64,
}

impl RunMetrics {
    pub fn from_outcomes(outcomes: &[TaskOutcome]) -> Self {
        let n = outcomes.len().max(1) as f64;
        RunMetrics {
            tasks: outcomes.len(),
            avg_delay: outcomes.iter().map(|o| o.delay).sum::<f64>() / n,
            avg_energy: outcomes.iter().map(|o| o.energy).sum::<f64>() / n,
            avg_cost: outcomes.iter().map(|o| o.cost).sum::<f64>() / n,
            mec_fraction: outcomes.iter().filter(|o| o.is_edge()).count() as f64 / n,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub outcomes: Vec<TaskOutcome>,
    pub samples: Vec<SamplePair>,
    pub uploads: Vec<UploadRecord>,
    pub services: Vec<ServiceRecord>,
    pub traces: Vec<CapacityTrace>,
    pub arrivals: usize,
    pub departures: usize,
    pub metrics: RunMetrics,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[allow(clippy::enum_variant_names)]
enum EventKind {
    UploadDone {
        task: usize,
        server: usize,
        channel: usize,
    },
    ComputeDone {
        server: usize,
    },
    LocalDone {
        task: usize,
    },
}

#[derive(Debug, Clone, Copy)]
struct Event {
    time: f64,
    seq: u64,
    kind: EventKind,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Event {}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Event {
    // min-heap on (time, seq)
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .time
            .total_cmp(&self.time)
            .then(other.seq.cmp(&self.seq))
    }
}

#[derive(Debug, Clone, Copy)]
struct Job {
    task: usize,
    work: f64,
    t_queue: f64,
    order: u64,
}

#[derive(Debug, Clone, Copy)]
struct Active {
    job: Job,
    t_comp: f64,
    t_dep: f64,
}

#[derive(Debug, Clone, Copy)]
struct Inbound {
    work: f64,
    t_queue: f64,
    seq: u64,
}

#[derive(Debug, Clone)]
struct Server {
    position: Position,
    trace: GrowingTrace,
    queue: VecDeque<Job>,
    active: Option<Active>,
    inbound: Vec<Inbound>,
    enqueued: u64,
}

impl Server {
    /// Remaining cycles of queued work plus the unfinished part of the task
    /// in service.
    fn backlog(&mut self, t: f64) -> f64 {
        let queued: f64 = self.queue.iter().map(|j| j.work).sum();
        let in_service = match self.active {
            Some(a) => {
                let done = self
                    .trace
                    .cycles_between(a.t_comp, t.max(a.t_comp))
                    .expect("ordered interval")
                    .cycles();
                (a.job.work - done).max(0.0)
            }
            None => 0.0,
        };
        queued + in_service
    }
}

#[derive(Debug, Clone)]
struct EdgePart {
    server: usize,
    channel: usize,
    features: Vec<f64>,
    t_queue: f64,
    t_comp: Option<f64>,
    t_dep: Option<f64>,
    energy: f64,
}

#[derive(Debug, Clone)]
struct TaskRecord {
    spec: TaskSpec,
    decision: Decision,
    local_delay: f64,
    local_energy: f64,
    edge: Option<EdgePart>,
    open_parts: u8,
}

#[derive(Debug, Clone)]
struct Pending {
    spec: TaskSpec,
    rates: RateMatrix,
    request: DecisionRequest,
}

/// A running simulation. Cloning it forks an independent copy with an
/// identical future (traces and task stream included).
#[derive(Debug, Clone)]
pub struct Simulation {
    config: SimConfig,
    servers: Vec<Server>,
    server_positions: Vec<Position>,
    occupancy: ChannelOccupancy,
    events: BinaryHeap<Event>,
    seq: u64,
    now: f64,
    arrivals: ArrivalSource,
    fading: ChaCha8Rng,
    decided: usize,
    pending: Option<Pending>,
    tasks: Vec<TaskRecord>,
    completed: Vec<TaskOutcome>,
    all_outcomes: Vec<TaskOutcome>,
    samples: Vec<SamplePair>,
    uploads: Vec<UploadRecord>,
    services: Vec<ServiceRecord>,
    departures: usize,
}

/// One per simulation, so the size gap between variants does not matter.
#[derive(Debug, Clone)]
#[allow(clippy::large_enum_variant)]
enum ArrivalSource {
    Poisson(ArrivalProcess),
    Fixed(std::vec::IntoIter<TaskSpec>),
}

impl ArrivalSource {
    fn next(&mut self) -> Option<TaskSpec> {
        match self {
            ArrivalSource::Poisson(p) => p.next(),
            ArrivalSource::Fixed(it) => it.next(),
        }
    }
}

impl Simulation {
    pub fn new(config: &SimConfig) -> Result<Self> {
        config.validate()?;
        let seed = config.seed;
        let ep = config.episode * STREAMS_PER_EPISODE;
        let servers: Vec<Server> = match &config.layout {
            ServerLayout::Random => {
                let mut placement = stream_rng(seed, STREAM_PLACEMENT);
                (0..config.servers)
                    .map(|m| {
                        let position = Position::random(config.area_half_width_km, &mut placement);
                        let trace = generate_trace(
                            config.capacity_range.0,
                            config.capacity_range.1,
                            config.segment_model,
                            stream_rng(seed, ep + STREAM_TRACES + m as u64),
                        )?;
                        Ok(Server::new(position, trace))
                    })
                    .collect::<Result<_>>()?
            }
            ServerLayout::Fixed(list) => list
                .iter()
                .map(|(p, t)| Server::new(*p, t.clone().into()))
                .collect(),
        };
        let arrivals = match &config.workload {
            Workload::Poisson => ArrivalSource::Poisson(ArrivalProcess::new(
                config,
                stream_rng(seed, ep + STREAM_ARRIVALS),
            )?),
            Workload::Fixed(list) => {
                if list
                    .windows(2)
                    .any(|w| w[1].arrival_time < w[0].arrival_time)
                {
                    return Err(Error::invalid(
                        "fixed workload must be sorted by arrival time",
                    ));
                }
                ArrivalSource::Fixed(list.clone().into_iter())
            }
        };
        let server_positions = servers.iter().map(|s| s.position).collect();
        Ok(Simulation {
            occupancy: ChannelOccupancy::new(servers.len(), config.radio.channels),
            servers,
            server_positions,
            config: config.clone(),
            events: BinaryHeap::new(),
            seq: 0,
            now: 0.0,
            arrivals,
            fading: stream_rng(seed, ep + STREAM_FADING),
            decided: 0,
            pending: None,
            tasks: Vec::new(),
            completed: Vec::new(),
            all_outcomes: Vec::new(),
            samples: Vec::new(),
            uploads: Vec::new(),
            services: Vec::new(),
            departures: 0,
        })
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    pub fn server_positions(&self) -> &[Position] {
        &self.server_positions
    }

    /// Estimator samples emitted so far.
    pub fn sample_count(&self) -> usize {
        self.samples.len()
    }

    pub fn pending_request(&self) -> Option<&DecisionRequest> {
        self.pending.as_ref().map(|p| &p.request)
    }

    fn task_limit(&self) -> usize {
        match self.config.workload {
            Workload::Poisson => self.config.tasks,
            Workload::Fixed(ref l) => l.len(),
        }
    }

    fn schedule(&mut self, time: f64, kind: EventKind) -> u64 {
        let seq = self.seq;
        self.seq += 1;
        self.events.push(Event { time, seq, kind });
        seq
    }

    /// Processes events up to the next arrival and returns its request, or
    /// `None` once every task has been decided.
    pub fn next_request(&mut self) -> Result<Option<&DecisionRequest>> {
        if self.pending.is_some() {
            return Err(Error::Integrity("previous task has no decision yet".into()));
        }
        if self.decided >= self.task_limit() {
            return Ok(None);
        }
        let Some(spec) = self.arrivals.next() else {
            return Ok(None);
        };
        while self
            .events
            .peek()
            .is_some_and(|e| e.time <= spec.arrival_time)
        {
            self.step()?;
        }
        self.now = spec.arrival_time;

        let rates = rate_matrix(
            spec.position,
            &self.server_positions,
            &self.config.radio,
            &mut self.fading,
        );
        let nearest = nearest_servers(
            spec.position,
            &self.server_positions,
            self.config.candidates,
            self.config.radio.min_distance_km,
        )?;
        let t = spec.arrival_time;
        let window = self.config.history_window;
        let candidates = nearest
            .into_iter()
            .map(|m| {
                let channel = best_free_channel(self.occupancy.flags(m), rates.row(m));
                let server = &mut self.servers[m];
                CandidateInfo {
                    server: m,
                    distance_km: server.position.distance(&spec.position),
                    capacity_history: server.trace.history(t, window),
                    backlog: server.backlog(t),
                    channel,
                    rate: channel.map_or(0.0, |n| rates.get(m, n)),
                }
            })
            .collect();
        let request = DecisionRequest {
            task_id: spec.id,
            arrival_time: t,
            position: spec.position,
            input_bits: spec.input_bits,
            work_cycles: spec.work_cycles,
            user_capability: spec.user_capability,
            candidates,
            num_servers: self.servers.len(),
        };
        self.pending = Some(Pending {
            spec,
            rates,
            request,
        });
        Ok(self.pending.as_ref().map(|p| &p.request))
    }

    fn check_decision(&self, pending: &Pending, decision: &Decision) -> Result<()> {
        if let Decision::Offload {
            server,
            channel,
            ratio,
        } = *decision
        {
            if !(ratio > 0.0 && ratio <= 1.0) {
                return Err(Error::invalid(format!(
                    "offload ratio must be in (0, 1], got {ratio}"
                )));
            }
            if pending.request.candidate(server).is_none() {
                return Err(Error::invalid(format!(
                    "server {server} is not a candidate for this task"
                )));
            }
            if channel >= self.config.radio.channels {
                return Err(Error::invalid(format!("channel {channel} out of range")));
            }
            if self.occupancy.is_busy(server, channel) {
                return Err(Error::Integrity(format!(
                    "channel {channel} of server {server} is busy at decision time"
                )));
            }
        }
        Ok(())
    }

    /// Applies `decision` to the pending task.
    pub fn apply(&mut self, decision: Decision) -> Result<()> {
        let pending = self
            .pending
            .take()
            .ok_or_else(|| Error::Integrity("no pending task".into()))?;
        if let Err(e) = self.check_decision(&pending, &decision) {
            self.pending = Some(pending);
            return Err(e);
        }
        let spec = pending.spec;
        let idx = self.tasks.len();
        let t = spec.arrival_time;
        let ratio = decision.ratio();
        let local_work = (1.0 - ratio) * spec.work_cycles;
        let local_delay = local_work / spec.user_capability;
        let mut record = TaskRecord {
            local_energy: local_energy(
                spec.user_capability,
                WorkAmount::saturating(local_work),
                self.config.kappa,
            )?,
            local_delay,
            spec,
            decision,
            edge: None,
            open_parts: 0,
        };
        if local_work > 0.0 {
            record.open_parts += 1;
            self.schedule(t + local_delay, EventKind::LocalDone { task: idx });
        }
        if let Decision::Offload {
            server,
            channel,
            ratio,
        } = decision
        {
            let rate = pending.rates.get(server, channel);
            let bits = ratio * record.spec.input_bits;
            let work = ratio * record.spec.work_cycles;
            let t_queue = t + bits / rate;
            let candidate = pending.request.candidate(server).expect("checked");
            self.occupancy.occupy(server, channel)?;
            let seq = self.schedule(
                t_queue,
                EventKind::UploadDone {
                    task: idx,
                    server,
                    channel,
                },
            );
            self.servers[server]
                .inbound
                .push(Inbound { work, t_queue, seq });
            self.uploads.push(UploadRecord {
                task_id: record.spec.id,
                server,
                channel,
                start: t,
                end: t_queue,
            });
            record.edge = Some(EdgePart {
                server,
                channel,
                features: candidate.features(
                    record.spec.input_bits,
                    record.spec.work_cycles,
                    ratio,
                ),
                t_queue,
                t_comp: None,
                t_dep: None,
                energy: 0.0,
            });
            record.open_parts += 1;
        }
        let no_parts = record.open_parts == 0;
        self.tasks.push(record);
        self.decided += 1;
        if no_parts {
            // zero-work local task finishes on arrival
            self.finish_task(idx);
        }
        Ok(())
    }

    fn start_service(&mut self, m: usize) {
        let now = self.now;
        let kappa = self.config.kappa;
        let server = &mut self.servers[m];
        if server.active.is_some() {
            return;
        }
        let Some(job) = server.queue.pop_front() else {
            return;
        };
        let work = WorkAmount::saturating(job.work);
        let duration = server.trace.time_to_complete(now, work);
        let energy = server
            .trace
            .computation_energy(now, work, kappa)
            .expect("kappa validated");
        let t_dep = now + duration;
        server.active = Some(Active {
            job,
            t_comp: now,
            t_dep,
        });
        let edge = self.tasks[job.task].edge.as_mut().expect("edge task");
        edge.t_comp = Some(now);
        edge.energy = energy;
        self.schedule(t_dep, EventKind::ComputeDone { server: m });
    }

    fn step(&mut self) -> Result<bool> {
        let Some(event) = self.events.pop() else {
            return Ok(false);
        };
        self.now = event.time;
        match event.kind {
            EventKind::UploadDone {
                task,
                server,
                channel,
            } => {
                self.occupancy.release(server, channel);
                let s = &mut self.servers[server];
                let pos = s
                    .inbound
                    .iter()
                    .position(|i| i.seq == event.seq)
                    .ok_or_else(|| {
                        Error::Integrity("upload completion without inbound record".into())
                    })?;
                let inbound = s.inbound.remove(pos);
                let order = s.enqueued;
                s.enqueued += 1;
                s.queue.push_back(Job {
                    task,
                    work: inbound.work,
                    t_queue: inbound.t_queue,
                    order,
                });
                self.start_service(server);
            }
            EventKind::ComputeDone { server } => {
                let active = self.servers[server]
                    .active
                    .take()
                    .ok_or_else(|| Error::Integrity("completion on idle server".into()))?;
                let task = active.job.task;
                let edge = self.tasks[task].edge.as_mut().expect("edge task");
                edge.t_dep = Some(active.t_dep);
                self.services.push(ServiceRecord {
                    task_id: self.tasks[task].spec.id,
                    server,
                    enqueue_order: active.job.order,
                    work: active.job.work,
                    t_queue: active.job.t_queue,
                    t_comp: active.t_comp,
                    t_dep: active.t_dep,
                });
                self.close_part(task);
                self.start_service(server);
            }
            EventKind::LocalDone { task } => self.close_part(task),
        }
        Ok(true)
    }

    fn close_part(&mut self, task: usize) {
        let record = &mut self.tasks[task];
        record.open_parts -= 1;
        if record.open_parts == 0 {
            self.finish_task(task);
        }
    }

    fn finish_task(&mut self, task: usize) {
        let r = &self.tasks[task];
        let t_arr = r.spec.arrival_time;
        let (outcome_edge, sample) = match &r.edge {
            Some(e) => {
                let t_comp = e.t_comp.expect("started");
                let t_dep = e.t_dep.expect("finished");
                let edge_delay = t_dep - t_arr;
                (
                    Some((
                        e.server, e.channel, e.t_queue, t_comp, t_dep, edge_delay, e.energy,
                    )),
                    Some(SamplePair {
                        features: e.features.clone(),
                        delay: edge_delay,
                        energy: e.energy,
                    }),
                )
            }
            None => (None, None),
        };
        let (server, channel, t_queue, t_comp, t_dep, edge_delay, edge_energy) =
            outcome_edge.unwrap_or((usize::MAX, usize::MAX, t_arr, t_arr, t_arr, 0.0, 0.0));
        let is_edge = r.edge.is_some();
        let delay = edge_delay.max(r.local_delay);
        let energy = edge_energy + r.local_energy;
        let cost = self.config.cost.cost(delay, energy);
        let (tau_trans, tau_queue, tau_comp) = if is_edge {
            (t_queue - t_arr, t_comp - t_queue, t_dep - t_comp)
        } else {
            (0.0, 0.0, r.local_delay)
        };
        let outcome = TaskOutcome {
            task_id: r.spec.id,
            arrival_time: t_arr,
            action: r.decision.action(),
            ratio: r.decision.ratio(),
            server: is_edge.then_some(server),
            channel: is_edge.then_some(channel),
            tau_trans,
            tau_queue,
            tau_comp,
            t_queue,
            t_comp,
            t_dep,
            local_delay: r.local_delay,
            edge_delay,
            delay,
            energy,
            cost,
            reward: reward(self.config.reward_mode, delay, cost),
        };
        if let Some(s) = sample {
            self.samples.push(s);
        }
        self.departures += 1;
        self.completed.push(outcome.clone());
        self.all_outcomes.push(outcome);
    }

    /// Outcomes finished since the last call.
    pub fn take_completed(&mut self) -> Vec<TaskOutcome> {
        std::mem::take(&mut self.completed)
    }

    /// Runs every scheduled event.
    pub fn drain(&mut self) -> Result<()> {
        while self.step()? {}
        Ok(())
    }

    /// Runs events until the task with `task_id` has departed and returns its
    /// outcome. Later arrivals are not generated.
    pub fn run_until_departed(&mut self, task_id: u64) -> Result<TaskOutcome> {
        loop {
            if let Some(o) = self
                .all_outcomes
                .iter()
                .rev()
                .find(|o| o.task_id == task_id)
            {
                return Ok(o.clone());
            }
            if !self.step()? {
                return Err(Error::Integrity(format!("task {task_id} never departed")));
            }
        }
    }

    /// Exact edge delay (measured from arrival) and computation energy the
    /// pending task would see under `decision`, computed on a private copy
    /// of the chosen server. Privileged: uses the true traces and queues.
    pub fn project_edge(&self, decision: Decision) -> Result<(f64, f64)> {
        let pending = self
            .pending
            .as_ref()
            .ok_or_else(|| Error::Integrity("no pending task".into()))?;
        self.check_decision(pending, &decision)?;
        let Decision::Offload {
            server,
            channel,
            ratio,
        } = decision
        else {
            return Err(Error::invalid("project_edge needs an offloading decision"));
        };
        let spec = &pending.spec;
        let t_arr = spec.arrival_time;
        let t_queue = t_arr + ratio * spec.input_bits / pending.rates.get(server, channel);
        let work = ratio * spec.work_cycles;

        let mut s = self.servers[server].clone();
        let mut free_at = s.active.map_or(t_arr, |a| a.t_dep);
        // queued jobs first (FIFO), then uploads in completion order; the
        // new upload's event would be scheduled after all existing ones
        let mut order: Vec<(f64, u64, f64, bool)> = s
            .queue
            .iter()
            .map(|j| (j.t_queue, 0, j.work, false))
            .collect();
        let mut inbound: Vec<(f64, u64, f64, bool)> = s
            .inbound
            .iter()
            .map(|i| (i.t_queue, i.seq, i.work, false))
            .collect();
        inbound.push((t_queue, u64::MAX, work, true));
        inbound.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        order.extend(inbound);
        for (tq, _, w, is_new) in order {
            let start = free_at.max(tq);
            let w = WorkAmount::saturating(w);
            let end = start + s.trace.time_to_complete(start, w);
            if is_new {
                let energy = s.trace.computation_energy(start, w, self.config.kappa)?;
                return Ok((end - t_arr, energy));
            }
            free_at = end;
        }
        unreachable!("new job is always in the order")
    }

    pub fn finish(mut self) -> Result<RunResult> {
        if self.pending.is_some() {
            return Err(Error::Integrity("finished with an undecided task".into()));
        }
        self.drain()?;
        let mut outcomes = std::mem::take(&mut self.all_outcomes);
        outcomes.sort_by_key(|o| o.task_id);
        let metrics = RunMetrics::from_outcomes(&outcomes);
        Ok(RunResult {
            metrics,
            arrivals: self.decided,
            departures: self.departures,
            traces: self
                .servers
                .into_iter()
                .map(|s| s.trace.into_trace())
                .collect(),
            outcomes,
            samples: self.samples,
            uploads: self.uploads,
            services: self.services,
        })
    }
}

impl Server {
    fn new(position: Position, trace: GrowingTrace) -> Self {
        Server {
            position,
            trace,
            queue: VecDeque::new(),
            active: None,
            inbound: Vec::new(),
            enqueued: 0,
        }
    }
}

/// Runs a whole episode under a causal policy.
pub fn run(config: &SimConfig, policy: &mut dyn Policy) -> Result<RunResult> {
    let mut sim = Simulation::new(config)?;
    while let Some(req) = sim.next_request()? {
        let decision = policy.decide(req)?;
        for o in sim.take_completed() {
            policy.observe(&o);
        }
        sim.apply(decision)?;
    }
    sim.drain()?;
    for o in sim.take_completed() {
        policy.observe(&o);
    }
    sim.finish()
}

/// Runs a whole episode under the privileged oracle.
pub fn run_oracle(config: &SimConfig, oracle: &mut Oracle) -> Result<RunResult> {
    let mut sim = Simulation::new(config)?;
    while sim.next_request()?.is_some() {
        let decision = oracle.decide(&sim)?;
        sim.apply(decision)?;
    }
    sim.finish()
}

/// Checks the timestamp chain, FIFO service, work conservation, channel
/// exclusivity and arrival/departure conservation of a finished run.
/// Returns one message per violation.
pub fn audit(result: &RunResult, rel_tol: f64) -> Vec<String> {
    let mut bad = Vec::new();
    if result.arrivals != result.departures || result.outcomes.len() != result.arrivals {
        bad.push(format!(
            "conservation: {} arrivals, {} departures, {} outcomes",
            result.arrivals,
            result.departures,
            result.outcomes.len()
        ));
    }
    for o in result.outcomes.iter().filter(|o| o.is_edge()) {
        let chain = [
            (o.t_queue, o.arrival_time + o.tau_trans, "t_queue"),
            (o.t_comp, o.t_queue + o.tau_queue, "t_comp"),
            (o.t_dep, o.t_comp + o.tau_comp, "t_dep"),
        ];
        for (lhs, rhs, name) in chain {
            if (lhs - rhs).abs() > 1e-9 {
                bad.push(format!(
                    "task {}: {name} chain off by {}",
                    o.task_id,
                    lhs - rhs
                ));
            }
        }
        if o.tau_trans < 0.0 || o.tau_queue < 0.0 || o.tau_comp < 0.0 {
            bad.push(format!("task {}: negative delay component", o.task_id));
        }
        let total = o.tau_trans + o.tau_queue + o.tau_comp;
        if (total - o.edge_delay).abs() > 1e-9 {
            bad.push(format!(
                "task {}: edge delay is not the sum of its parts",
                o.task_id
            ));
        }
    }
    for o in result.outcomes.iter().filter(|o| !o.is_edge()) {
        if o.delay != o.local_delay {
            bad.push(format!("task {}: local delay mismatch", o.task_id));
        }
    }

    let servers = result.traces.len();
    let mut per_server: Vec<Vec<&ServiceRecord>> = vec![Vec::new(); servers];
    for s in &result.services {
        per_server[s.server].push(s);
    }
    for (m, list) in per_server.iter_mut().enumerate() {
        list.sort_by_key(|s| s.enqueue_order);
        for w in list.windows(2) {
            if w[1].t_queue < w[0].t_queue || w[1].t_comp < w[0].t_comp || w[1].t_comp < w[0].t_dep
            {
                bad.push(format!(
                    "server {m}: FIFO violated between tasks {} and {}",
                    w[0].task_id, w[1].task_id
                ));
            }
        }
        for s in list.iter() {
            match result.traces[m].cycles_between(s.t_comp, s.t_dep) {
                Ok(served) => {
                    let err = (served.cycles() - s.work).abs();
                    if err > rel_tol * s.work.max(1.0) {
                        bad.push(format!(
                            "server {m} task {}: served {} of {} cycles",
                            s.task_id,
                            served.cycles(),
                            s.work
                        ));
                    }
                }
                Err(e) => bad.push(format!("server {m} task {}: {e}", s.task_id)),
            }
        }
    }

    let mut channels: std::collections::BTreeMap<(usize, usize), Vec<&UploadRecord>> =
        Default::default();
    for u in &result.uploads {
        channels.entry((u.server, u.channel)).or_default().push(u);
    }
    for ((m, n), mut list) in channels {
        list.sort_by(|a, b| a.start.total_cmp(&b.start));
        for w in list.windows(2) {
            if w[1].start < w[0].end {
                bad.push(format!(
                    "server {m} channel {n}: uploads of tasks {} and {} overlap",
                    w[0].task_id, w[1].task_id
                ));
            }
        }
    }
    bad
}
