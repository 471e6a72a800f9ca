//! Primary/replica orchestration over a virtual clock.
//!
//! Every replica loops through the same cycle: take a snapshot of the
//! history, top up the candidate buffer with morphed children of the best
//! architecture, pull the most promising candidate, pick hyperparameters,
//! train epoch by epoch until early stopping, the epoch limit or the run
//! budget ends the trial, then append the result to the history.
//!
//! Time is simulated. Each replica owns a clock that advances by the wall
//! seconds the executor reports, so a ten-hour run replays in well under a
//! second. The default [`Schedule::Deterministic`] always steps the replica
//! with the smallest clock (lowest id on ties) and applies an epoch's result
//! only once that replica is chosen again at the epoch's end time. History
//! appends therefore happen in virtual-time order and a run is a pure
//! function of its configuration. [`Schedule::Threaded`] runs one OS thread
//! per replica around a mutex-guarded history and buffer instead.

pub mod early_stop;
pub mod executor;
pub mod runlog;

use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use early_stop::{early_stop_decision, StopDecision};
pub use executor::{CommandExecutor, EpochOutcome, Executor, ExecutorError, SimulatedExecutor, TrialContext};
pub use runlog::{EventKind, LogEvent, MalformedLog, RunLog};

use crate::graph::{ArchitectureGraph, GraphError, Layer};
use crate::history::{HistoryRecord, HistoryStore};
use crate::hpo::{self, HpoObservation, HyperParams};
use crate::morph::{self, MorphError, DEFAULT_MAX_ATTEMPTS};
use crate::opcount::{self, DatasetDescriptor, OpCount};
use crate::seed;

/// Candidates kept waiting in the buffer.
pub const BUFFER_CAPACITY: usize = 4;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid cluster config: {0}")]
    Config(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Morph(#[from] MorphError),
    #[error("candidate buffer I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("replica {replica}, trial {digest}: {source}")]
    ExecutorFailure {
        replica: u32,
        digest: String,
        source: ExecutorError,
        /// Everything logged up to the failure; the failed trial ends with a
        /// `stopped` event.
        log: Box<RunLog>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterConfig {
    pub replica_count: u32,
    pub accelerators_per_replica: u32,
    /// Peak operations per second of one accelerator.
    pub peak_ops_per_accelerator: f64,
    /// Fraction of peak reached while training, in (0, 1].
    pub efficiency: f64,
    /// Fixed per-epoch cost: data loading, graph compilation, checkpointing.
    pub epoch_overhead_seconds: f64,
    pub run_budget_seconds: f64,
    pub max_epoch: u32,
    pub patience: u32,
    pub rng_seed: u64,
    /// One history for all replicas (the default) or one per replica.
    pub shared_history: bool,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        ClusterConfig {
            replica_count: 1,
            accelerators_per_replica: 8,
            peak_ops_per_accelerator: 1.25e14,
            efficiency: 0.5,
            epoch_overhead_seconds: 10.0,
            run_budget_seconds: 36_000.0,
            max_epoch: 60,
            patience: 5,
            rng_seed: 42,
            shared_history: true,
        }
    }
}

impl ClusterConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        let fail = |m: &str| Err(HarnessError::Config(m.to_string()));
        if self.replica_count == 0 {
            return fail("replica_count must be at least 1");
        }
        if self.accelerators_per_replica == 0 {
            return fail("accelerators_per_replica must be at least 1");
        }
        if !(self.peak_ops_per_accelerator.is_finite() && self.peak_ops_per_accelerator > 0.0) {
            return fail("peak_ops_per_accelerator must be positive");
        }
        if !(self.efficiency > 0.0 && self.efficiency <= 1.0) {
            return fail("efficiency must be in (0, 1]");
        }
        if !(self.epoch_overhead_seconds.is_finite() && self.epoch_overhead_seconds >= 0.0) {
            return fail("epoch_overhead_seconds must be non-negative");
        }
        if !(self.run_budget_seconds.is_finite() && self.run_budget_seconds > 0.0) {
            return fail("run_budget_seconds must be positive");
        }
        if self.max_epoch == 0 {
            return fail("max_epoch must be at least 1");
        }
        if self.patience == 0 {
            return fail("patience must be at least 1");
        }
        Ok(())
    }

    /// Sustained operations per second of one replica.
    pub fn replica_throughput(&self) -> f64 {
        self.accelerators_per_replica as f64 * self.peak_ops_per_accelerator * self.efficiency
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrialStatus {
    Pending,
    Running,
    EarlyStopped,
    MaxEpochReached,
    BudgetCut,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: u32,
    pub error: f64,
    pub end_seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trial {
    pub digest: String,
    pub architecture_ref: PathBuf,
    pub hyperparams: HyperParams,
    pub replica: u32,
    pub start_seconds: f64,
    pub epoch_trace: Vec<EpochRecord>,
    /// Training plus validation count of one epoch.
    pub epoch_count: OpCount,
    /// `epoch_count` times the number of finished epochs.
    pub completed_ops: OpCount,
    pub status: TrialStatus,
}

impl Trial {
    pub fn best_error(&self) -> Option<f64> {
        self.epoch_trace.iter().map(|e| e.error).min_by(f64::total_cmp)
    }

    pub fn epoch_ops(&self) -> u128 {
        self.epoch_count.weighted_total()
    }
}

#[derive(Debug, Clone)]
pub struct Candidate {
    pub digest: String,
    pub graph: Arc<ArchitectureGraph>,
    pub path: PathBuf,
}

/// Bounded FIFO of proposed architectures, optionally mirrored to a
/// directory as `<digest>.arch` files.
#[derive(Debug, Clone)]
pub struct CandidateBuffer {
    capacity: usize,
    dir: Option<PathBuf>,
    items: Vec<Candidate>,
}

impl CandidateBuffer {
    pub fn new(capacity: usize, dir: Option<PathBuf>) -> Self {
        CandidateBuffer { capacity, dir, items: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn free(&self) -> usize {
        self.capacity.saturating_sub(self.items.len())
    }

    pub fn candidates(&self) -> &[Candidate] {
        &self.items
    }

    pub fn contains(&self, digest: &str) -> bool {
        self.items.iter().any(|c| c.digest == digest)
    }

    /// Stores a candidate; returns false when full or already present.
    pub fn push(&mut self, graph: ArchitectureGraph) -> Result<bool, HarnessError> {
        let digest = graph.digest();
        if self.free() == 0 || self.contains(&digest) {
            return Ok(false);
        }
        let file = format!("{digest}.arch");
        let path = match &self.dir {
            Some(dir) => {
                std::fs::create_dir_all(dir)?;
                let path = dir.join(&file);
                std::fs::write(&path, graph.to_string())?;
                path
            }
            None => PathBuf::from(file),
        };
        self.items.push(Candidate { digest, graph: Arc::new(graph), path });
        Ok(true)
    }

    pub fn take(&mut self, index: usize) -> Candidate {
        self.items.remove(index)
    }
}

/// Sets the kernel of every morph-inserted, shape-preserving convolution
/// (id at or above `seed_nodes`, stride 1, as many outputs as inputs) to the
/// tuned kernel size. Seed layers and 1×1 projections are left alone.
pub fn apply_hyperparams(
    graph: &ArchitectureGraph,
    params: HyperParams,
    seed_nodes: usize,
) -> Result<ArchitectureGraph, GraphError> {
    let shapes = graph.infer_shapes()?;
    let mut out = graph.clone();
    for node in out.nodes_mut() {
        if (node.id.0 as usize) < seed_nodes {
            continue;
        }
        if let Layer::Convolution { kernel, stride: 1, out_channels } = &mut node.layer {
            if shapes[&node.id].input.channels == *out_channels {
                *kernel = params.kernel_size();
            }
        }
    }
    out.validate()?;
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Schedule {
    #[default]
    Deterministic,
    Threaded,
}

#[derive(Debug, Clone, Default)]
pub struct HarnessOptions {
    /// Where candidate and trial architecture files go; nothing is written
    /// when unset.
    pub buffer_dir: Option<PathBuf>,
    pub schedule: Schedule,
    /// Extra provenance lines for the log header.
    pub header: Vec<String>,
    /// Classes of the seed network's softmax.
    pub num_classes: u32,
    /// Hyperparameters of the seed architecture's trial.
    pub default_hyperparams: HyperParams,
}

impl HarnessOptions {
    pub fn new() -> Self {
        HarnessOptions { num_classes: 1000, ..Default::default() }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub log: RunLog,
    pub trials: Vec<Trial>,
    /// All history records, in completion order.
    pub history: Vec<HistoryRecord>,
}

struct Env<'a> {
    config: &'a ClusterConfig,
    dataset: &'a DatasetDescriptor,
    seed_graph: &'a ArchitectureGraph,
    seed_digest: String,
    executor: &'a dyn Executor,
    trial_dir: Option<PathBuf>,
    default_hyperparams: HyperParams,
}

/// History and buffer state shared by the replicas.
struct Shared {
    stores: Vec<HistoryStore>,
    buffers: Vec<CandidateBuffer>,
    in_flight: HashSet<String>,
}

impl Shared {
    fn new(config: &ClusterConfig, buffer_dir: Option<&Path>) -> Self {
        let pools = if config.shared_history { 1 } else { config.replica_count as usize };
        let buffers = (0..pools)
            .map(|i| {
                let dir = buffer_dir.map(|d| if pools == 1 { d.to_path_buf() } else { d.join(format!("replica-{i}")) });
                CandidateBuffer::new(BUFFER_CAPACITY, dir)
            })
            .collect();
        Shared { stores: vec![HistoryStore::default(); pools], buffers, in_flight: HashSet::new() }
    }

    fn pool(&self, replica: u32) -> usize {
        if self.stores.len() == 1 { 0 } else { replica as usize }
    }

    fn known(&self, digest: &str) -> bool {
        self.in_flight.contains(digest)
            || self.stores.iter().any(|s| s.contains(digest))
            || self.buffers.iter().any(|b| b.contains(digest))
    }

    fn all_records(&self) -> Vec<HistoryRecord> {
        let mut all: Vec<HistoryRecord> = self.stores.iter().flat_map(|s| s.snapshot().as_ref().clone()).collect();
        all.sort_by(|a, b| a.completed_at.total_cmp(&b.completed_at).then(a.replica.cmp(&b.replica)));
        all
    }
}

struct Active {
    trial: Trial,
    candidate: Arc<ArchitectureGraph>,
    graph: ArchitectureGraph,
    arch_file: PathBuf,
    parameters: u64,
    per_image: OpCount,
    /// Error recorded for the HPO during warm-up rounds.
    predicted_error: Option<f64>,
    pending: Option<(EpochOutcome, f64)>,
}

struct Worker {
    id: u32,
    clock: f64,
    observations: Vec<HpoObservation>,
    proposals: u64,
    active: Option<Active>,
    events: Vec<LogEvent>,
    trials: Vec<Trial>,
    done: bool,
}

enum Step {
    /// Needs the shared state: start a trial or finish a pending epoch.
    Shared,
    /// Runs the executor for the next epoch.
    Train,
}

impl Worker {
    fn new(id: u32) -> Self {
        Worker {
            id,
            clock: 0.0,
            observations: Vec::new(),
            proposals: 0,
            active: None,
            events: Vec::new(),
            trials: Vec::new(),
            done: false,
        }
    }

    fn next_step(&self) -> Step {
        match &self.active {
            Some(a) if a.pending.is_none() => Step::Train,
            _ => Step::Shared,
        }
    }

    fn log(&mut self, ts: f64, event: EventKind, epoch: u32, error: Option<f64>, wall: f64) {
        let (digest, ops) = match &self.active {
            Some(a) => (a.trial.digest.clone(), a.trial.epoch_ops()),
            None => (String::new(), 0),
        };
        self.events.push(LogEvent {
            ts_seconds: ts,
            replica_id: self.id,
            trial_digest: digest,
            event,
            epoch_index: epoch,
            error,
            epoch_ops: ops,
            wall_seconds: wall,
        });
    }

    fn shared_step(&mut self, shared: &mut Shared, env: &Env<'_>) -> Result<(), HarnessError> {
        match self.active.as_ref().map(|a| a.pending.is_some()) {
            Some(true) => self.finish_epoch(shared, env),
            Some(false) => unreachable!("training does not touch shared state"),
            None => self.start_trial(shared, env),
        }
    }

    fn start_trial(&mut self, shared: &mut Shared, env: &Env<'_>) -> Result<(), HarnessError> {
        if self.clock >= env.config.run_budget_seconds {
            self.done = true;
            return Ok(());
        }
        let pool = shared.pool(self.id);
        let snapshot = shared.stores[pool].snapshot();

        if snapshot.is_empty() && !shared.known(&env.seed_digest) {
            shared.buffers[pool].push(env.seed_graph.clone())?;
        }
        let free = shared.buffers[pool].free();
        if free > 0 {
            let mut exclude: HashSet<String> = shared.in_flight.clone();
            exclude.extend(shared.buffers.iter().flat_map(|b| b.candidates().iter().map(|c| c.digest.clone())));
            for store in &shared.stores {
                exclude.extend(store.snapshot().iter().map(|r| r.digest.clone()));
            }
            let proposal_seed = seed::derive(env.config.rng_seed, &[u64::from(self.id), self.proposals]);
            self.proposals += 1;
            for graph in propose(&snapshot, env.seed_graph, free, proposal_seed, &exclude)? {
                shared.buffers[pool].push(graph)?;
            }
        }
        if shared.buffers[pool].is_empty() {
            self.done = true;
            return Ok(());
        }

        let mut best = (0, f64::NEG_INFINITY);
        for (i, c) in shared.buffers[pool].candidates().iter().enumerate() {
            let score = morph::acquisition_score(&snapshot, &c.graph)?;
            if score > best.1 {
                best = (i, score);
            }
        }
        let candidate = shared.buffers[pool].take(best.0);
        shared.in_flight.insert(candidate.digest.clone());

        let round_seed = seed::derive(env.config.rng_seed, &[u64::from(self.id), self.observations.len() as u64]);
        let hyperparams = if candidate.digest == env.seed_digest {
            env.default_hyperparams
        } else {
            hpo::suggest(&self.observations, round_seed)
        };
        let graph = apply_hyperparams(&candidate.graph, hyperparams, env.seed_graph.len())?;
        let arch_file = match &env.trial_dir {
            Some(dir) => {
                std::fs::create_dir_all(dir)?;
                let path = dir.join(format!("{}.arch", candidate.digest));
                std::fs::write(&path, graph.to_string())?;
                path
            }
            None => candidate.path.clone(),
        };
        let epoch = opcount::count_epoch(&graph, env.dataset)?;
        let parameters = graph.parameter_count()?;
        let per_image = opcount::count_image_fp(&graph)? + opcount::count_image_bp(&graph)?;
        let predicted_error = (self.observations.len() < hpo::WARMUP_ROUNDS)
            .then(|| hpo::predict_warmup_error(&snapshot, parameters));

        self.active = Some(Active {
            trial: Trial {
                digest: candidate.digest,
                architecture_ref: candidate.path,
                hyperparams,
                replica: self.id,
                start_seconds: self.clock,
                epoch_trace: Vec::new(),
                epoch_count: epoch.total(),
                completed_ops: OpCount::ZERO,
                status: TrialStatus::Running,
            },
            candidate: candidate.graph,
            graph,
            arch_file,
            parameters,
            per_image,
            predicted_error,
            pending: None,
        });
        self.log(self.clock, EventKind::Proposed, 0, None, 0.0);
        Ok(())
    }

    /// Runs the next epoch. Returns the executor error, if any, after
    /// closing the trial as budget-cut.
    fn train(&mut self, env: &Env<'_>) -> Result<(), ExecutorError> {
        let budget = env.config.run_budget_seconds;
        let active = self.active.as_mut().expect("training requires a trial");
        let epoch = active.trial.epoch_trace.len() as u32 + 1;
        let outcome = if self.clock >= budget {
            None
        } else {
            let ctx = TrialContext {
                replica: self.id,
                digest: &active.trial.digest,
                graph: &active.graph,
                arch_file: &active.arch_file,
                hyperparams: active.trial.hyperparams,
                epoch_ops: active.trial.epoch_ops(),
            };
            match env.executor.run_epoch(&ctx, epoch).and_then(EpochOutcome::check) {
                Ok(o) => Some(o),
                Err(e) => {
                    self.cut(budget.min(self.clock));
                    return Err(e);
                }
            }
        };
        match outcome {
            Some(o) if self.clock + o.wall_seconds <= budget => {
                let end = self.clock + o.wall_seconds;
                self.active.as_mut().unwrap().pending = Some((o, end));
                self.clock = end;
            }
            _ => {
                self.cut(budget.max(self.clock));
                self.done = true;
            }
        }
        Ok(())
    }

    /// Ends the current trial without recording it.
    fn cut(&mut self, ts: f64) {
        let (epochs, best, wall) = {
            let a = self.active.as_mut().unwrap();
            a.trial.status = TrialStatus::BudgetCut;
            (a.trial.epoch_trace.len() as u32, a.trial.best_error(), ts - a.trial.start_seconds)
        };
        self.clock = ts;
        self.log(ts, EventKind::Stopped, epochs, best, wall);
        let a = self.active.take().unwrap();
        self.trials.push(a.trial);
    }

    fn finish_epoch(&mut self, shared: &mut Shared, env: &Env<'_>) -> Result<(), HarnessError> {
        let a = self.active.as_mut().unwrap();
        let (outcome, end) = a.pending.take().unwrap();
        let epoch = a.trial.epoch_trace.len() as u32 + 1;
        a.trial.epoch_trace.push(EpochRecord { epoch, error: outcome.error, end_seconds: end });
        a.trial.completed_ops = a.trial.epoch_count * u128::from(epoch);
        let errors: Vec<f64> = a.trial.epoch_trace.iter().map(|e| e.error).collect();
        let decision = early_stop_decision(&errors, env.config.patience, env.config.max_epoch);
        self.log(end, EventKind::Epoch, epoch, Some(outcome.error), outcome.wall_seconds);

        let status = match decision {
            StopDecision::Continue => return Ok(()),
            StopDecision::EarlyStopped => TrialStatus::EarlyStopped,
            StopDecision::MaxEpochReached => TrialStatus::MaxEpochReached,
        };
        let a = self.active.as_mut().unwrap();
        a.trial.status = status;
        let best = a.trial.best_error().expect("at least one epoch");
        let wall = end - a.trial.start_seconds;
        self.log(end, EventKind::Stopped, epoch, Some(best), wall);

        self.log(end, EventKind::Recorded, epoch, Some(best), wall);
        let a = self.active.take().unwrap();
        let record = HistoryRecord {
            digest: a.trial.digest.clone(),
            architecture_ref: a.trial.architecture_ref.clone(),
            architecture: a.candidate,
            hyperparams: a.trial.hyperparams,
            best_error: best,
            per_image_ops: a.per_image,
            parameters: a.parameters,
            epochs_run: epoch,
            wall_seconds: wall,
            completed_at: end,
            replica: self.id,
        };
        let pool = shared.pool(self.id);
        shared.stores[pool].append(record);
        shared.in_flight.remove(&a.trial.digest);
        let (error, predicted) = match a.predicted_error {
            Some(p) => (p, true),
            None => (best, false),
        };
        if let Ok(obs) = HpoObservation::new(a.trial.hyperparams, error, predicted) {
            self.observations.push(obs);
        }
        self.trials.push(a.trial);
        Ok(())
    }
}

/// Up to `n` fresh children; fewer when the morph search runs dry.
fn propose(
    history: &[HistoryRecord],
    base: &ArchitectureGraph,
    n: usize,
    rng_seed: u64,
    exclude: &HashSet<String>,
) -> Result<Vec<ArchitectureGraph>, HarnessError> {
    match morph::propose_candidates_excluding(history, base, n, rng_seed, exclude, DEFAULT_MAX_ATTEMPTS) {
        Ok(found) => Ok(found),
        Err(MorphError::ExhaustedSearch { found: 0, .. }) => Ok(Vec::new()),
        Err(MorphError::ExhaustedSearch { found, .. }) => {
            Ok(morph::propose_candidates_excluding(history, base, found, rng_seed, exclude, DEFAULT_MAX_ATTEMPTS)?)
        }
        Err(e) => Err(e.into()),
    }
}

fn assemble(config: &ClusterConfig, header: &[String], workers: Vec<Worker>, shared: &Shared) -> RunOutcome {
    let mut log = RunLog { header: Vec::new(), events: Vec::new() };
    log.header.push(format!("seed={}", config.rng_seed));
    log.header.extend(header.iter().cloned());
    let mut trials = Vec::new();
    for w in workers {
        log.events.extend(w.events);
        trials.extend(w.trials);
        if let Some(a) = w.active {
            trials.push(a.trial);
        }
    }
    log.events.sort_by(|a, b| a.ts_seconds.total_cmp(&b.ts_seconds).then(a.replica_id.cmp(&b.replica_id)));
    trials.sort_by(|a, b| a.start_seconds.total_cmp(&b.start_seconds).then(a.replica.cmp(&b.replica)));
    RunOutcome { log, trials, history: shared.all_records() }
}

/// Runs the benchmark until every replica has used up the budget.
pub fn run_benchmark(
    config: &ClusterConfig,
    dataset: &DatasetDescriptor,
    executor: &dyn Executor,
    options: &HarnessOptions,
) -> Result<RunOutcome, HarnessError> {
    config.validate()?;
    let num_classes = if options.num_classes == 0 { 1000 } else { options.num_classes };
    let seed_graph = crate::resnet::build_resnet50(dataset.image_shape(), num_classes)?;
    let env = Env {
        config,
        dataset,
        seed_digest: seed_graph.digest(),
        seed_graph: &seed_graph,
        executor,
        trial_dir: options.buffer_dir.as_ref().map(|d| d.join("trials")),
        default_hyperparams: options.default_hyperparams,
    };
    let shared = Shared::new(config, options.buffer_dir.as_deref());
    let workers: Vec<Worker> = (0..config.replica_count).map(Worker::new).collect();
    match options.schedule {
        Schedule::Deterministic => run_deterministic(&env, shared, workers, &options.header),
        Schedule::Threaded => run_threaded(&env, shared, workers, &options.header),
    }
}

fn failure(
    env: &Env<'_>,
    header: &[String],
    workers: Vec<Worker>,
    shared: &Shared,
    replica: u32,
    source: ExecutorError,
) -> HarnessError {
    let digest = workers[replica as usize].trials.last().map(|t| t.digest.clone()).unwrap_or_default();
    let outcome = assemble(env.config, header, workers, shared);
    HarnessError::ExecutorFailure { replica, digest, source, log: Box::new(outcome.log) }
}

fn run_deterministic(
    env: &Env<'_>,
    mut shared: Shared,
    mut workers: Vec<Worker>,
    header: &[String],
) -> Result<RunOutcome, HarnessError> {
    loop {
        let next = workers
            .iter()
            .filter(|w| !w.done)
            .min_by(|a, b| a.clock.total_cmp(&b.clock).then(a.id.cmp(&b.id)))
            .map(|w| w.id as usize);
        let Some(i) = next else { break };
        match workers[i].next_step() {
            Step::Shared => workers[i].shared_step(&mut shared, env)?,
            Step::Train => {
                if let Err(e) = workers[i].train(env) {
                    let id = workers[i].id;
                    return Err(failure(env, header, workers, &shared, id, e));
                }
            }
        }
    }
    Ok(assemble(env.config, header, workers, &shared))
}

fn run_threaded(
    env: &Env<'_>,
    shared: Shared,
    workers: Vec<Worker>,
    header: &[String],
) -> Result<RunOutcome, HarnessError> {
    let shared = Mutex::new(shared);
    let results: Vec<(Worker, Result<(), HarnessError>, Option<ExecutorError>)> = std::thread::scope(|scope| {
        let handles: Vec<_> = workers
            .into_iter()
            .map(|mut w| {
                let shared = &shared;
                scope.spawn(move || {
                    while !w.done {
                        match w.next_step() {
                            Step::Shared => {
                                let mut guard = shared.lock().unwrap_or_else(|p| p.into_inner());
                                if let Err(e) = w.shared_step(&mut guard, env) {
                                    return (w, Err(e), None);
                                }
                            }
                            Step::Train => {
                                if let Err(e) = w.train(env) {
                                    return (w, Ok(()), Some(e));
                                }
                            }
                        }
                    }
                    (w, Ok(()), None)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("replica thread panicked")).collect()
    });
    let shared = shared.into_inner().unwrap_or_else(|p| p.into_inner());
    let mut workers = Vec::with_capacity(results.len());
    let mut first_error = None;
    let mut failed = None;
    for (w, result, exec) in results {
        if let Err(e) = result {
            first_error.get_or_insert(e);
        }
        if let Some(e) = exec {
            failed.get_or_insert((w.id, e));
        }
        workers.push(w);
    }
    if let Some(e) = first_error {
        return Err(e);
    }
    if let Some((id, e)) = failed {
        return Err(failure(env, header, workers, &shared, id, e));
    }
    Ok(assemble(env.config, header, workers, &shared))
}
