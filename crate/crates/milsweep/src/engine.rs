//! Study engine: benchmark and optimize modes, resume, pruning callbacks and
//! journal persistence.
//!
//! Every state change goes through one journal appender guarded by the study
//! mutex; the in-memory [`StudyState`] is updated by applying the appended
//! record, so it always equals a replay of the journal. Sampling happens
//! under the same mutex.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Mutex, MutexGuard};
use std::thread;

use milsweep_core::mil::Signal;
use milsweep_core::pruner::{PeerCurve, Pruner, PrunerKind};
use milsweep_core::sampler::{sample_random, sample_tpe, ObservationHistory, ObservationState, SamplerKind};
use milsweep_core::space::{enumerate_grid, DEFAULT_GRID_CAP};
use milsweep_core::results::Aggregate;
use milsweep_core::trial::{Event, StudyMeta, StudyMode, StudyState, TrialRecord, TrialState};
use milsweep_core::{Configuration, Direction, PipelineSpace, Stage};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::cache::{ArtifactCache, ArtifactKey, CacheError};
use crate::config::LoadedConfig;
use crate::error::{Error, Result};
use crate::evaluator::{CacheAccess, Completion, EvalError, Evaluator};
use crate::export::{export_csv, result_set, RESULTS_FILE};
use crate::journal::{JournalWriter, Recovery, JOURNAL_FILE};
use crate::lock::{LockSettings, StudyLock};

/// Per-trial inspection artifacts under the study directory.
pub const TRIALS_DIR: &str = "trials";

/// Everything that defines a study apart from the evaluator.
#[derive(Clone, Debug, PartialEq)]
pub struct StudyPlan {
    pub study_id: String,
    pub mode: StudyMode,
    pub space: PipelineSpace,
    pub direction: Direction,
    pub seed: u64,
    /// Trial count `T`; required in optimize mode.
    pub budget: Option<u64>,
    pub repeats: u32,
    pub grid_points: usize,
    pub grid_cap: u64,
    pub sampler: SamplerKind,
    pub pruner: PrunerKind,
    pub concurrency: usize,
    pub max_failure_rate: Option<f64>,
    pub config_fingerprint: String,
}

impl StudyPlan {
    pub fn new(study_id: impl Into<String>, mode: StudyMode, space: PipelineSpace) -> Self {
        StudyPlan {
            study_id: study_id.into(),
            mode,
            space,
            direction: Direction::Minimize,
            seed: 0,
            budget: None,
            repeats: 1,
            grid_points: 3,
            grid_cap: DEFAULT_GRID_CAP,
            sampler: SamplerKind::Random,
            pruner: PrunerKind::None,
            concurrency: 1,
            max_failure_rate: None,
            config_fingerprint: String::new(),
        }
    }

    pub fn from_config(loaded: &LoadedConfig) -> Self {
        let c = &loaded.config;
        StudyPlan {
            study_id: loaded.study_id.clone(),
            mode: c.mode,
            space: loaded.space.clone(),
            direction: c.direction,
            seed: c.seed,
            budget: c.budget,
            repeats: c.repeats,
            grid_points: c.space.grid_points,
            grid_cap: DEFAULT_GRID_CAP,
            sampler: c.sampler.clone(),
            pruner: c.pruner.clone(),
            concurrency: c.concurrency,
            max_failure_rate: c.max_failure_rate,
            config_fingerprint: loaded.fingerprint.clone(),
        }
    }

    fn label(&self) -> String {
        match (self.mode, &self.sampler) {
            (StudyMode::Benchmark, _) => "grid".into(),
            (_, SamplerKind::Random) => "random".into(),
            (_, SamplerKind::Tpe(_)) => "tpe".into(),
            (_, SamplerKind::Grid) => "grid".into(),
        }
    }
}

/// Crash injection for recovery testing: the process aborts at the given point.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fault {
    /// Right after the n-th trial reaches a terminal state.
    AfterTrials(usize),
    /// Right after `trial` has persisted its report for `step`.
    AtReport { trial: u64, step: u32 },
}

impl Fault {
    /// `after-trial:<n>` or `at-report:<trial>:<step>`.
    pub fn parse(s: &str) -> Option<Fault> {
        let mut parts = s.split(':');
        let fault = match (parts.next()?, parts.next(), parts.next()) {
            ("after-trial", Some(n), None) => Fault::AfterTrials(n.parse().ok()?),
            ("at-report", Some(t), Some(step)) => Fault::AtReport {
                trial: t.parse().ok()?,
                step: step.parse().ok()?,
            },
            _ => return None,
        };
        parts.next().is_none().then_some(fault)
    }
}

#[derive(Clone, Debug)]
pub struct RunOptions {
    /// Artifact cache root; `None` disables caching.
    pub cache_root: Option<PathBuf>,
    /// Root for per-trial inspection artifacts, `<root>/<trial id>/<name>`;
    /// `None` discards them.
    pub trial_artifacts: Option<PathBuf>,
    pub lock: LockSettings,
    /// fsync after every journal append.
    pub durable: bool,
    pub fault: Option<Fault>,
}

impl RunOptions {
    pub fn for_dir(dir: &Path) -> Self {
        RunOptions {
            cache_root: Some(dir.join("cache")),
            trial_artifacts: Some(dir.join(TRIALS_DIR)),
            lock: LockSettings::default(),
            durable: false,
            fault: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BestTrial {
    pub trial_id: u64,
    pub config: Configuration,
    pub value: f64,
}

/// Per-configuration aggregate in benchmark mode.
#[derive(Clone, Debug, PartialEq)]
pub struct ConfigSummary {
    pub config: Configuration,
    pub trials: Vec<u64>,
    pub complete: usize,
    pub mean: Option<f64>,
    /// Sample standard deviation; 0 for a single value.
    pub std: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StudyOutcome {
    pub state: StudyState,
    pub best: BestTrial,
    /// No trial completed; `best` comes from intermediate values.
    pub degraded: bool,
    pub summary: Vec<ConfigSummary>,
    pub recovery: Option<Recovery>,
}

impl StudyOutcome {
    /// Benchmark configuration with the best mean value, ties to grid order.
    pub fn best_config(&self, direction: Direction) -> Option<&ConfigSummary> {
        self.summary
            .iter()
            .filter(|s| s.mean.is_some())
            .min_by(|a, b| direction.cmp_best_first(a.mean.unwrap(), b.mean.unwrap()))
    }
}

pub fn run_benchmark(plan: &StudyPlan, evaluator: &dyn Evaluator, dir: &Path, opts: &RunOptions) -> Result<StudyOutcome> {
    let mut plan = plan.clone();
    plan.mode = StudyMode::Benchmark;
    start_study(&plan, evaluator, dir, opts)
}

pub fn run_optimize(plan: &StudyPlan, evaluator: &dyn Evaluator, dir: &Path, opts: &RunOptions) -> Result<StudyOutcome> {
    let mut plan = plan.clone();
    plan.mode = StudyMode::Optimize;
    start_study(&plan, evaluator, dir, opts)
}

/// Creates the study directory and journal, then runs every trial.
pub fn start_study(plan: &StudyPlan, evaluator: &dyn Evaluator, dir: &Path, opts: &RunOptions) -> Result<StudyOutcome> {
    let work = plan_work(plan)?;
    fs::create_dir_all(dir).map_err(Error::io(dir))?;
    let lock = StudyLock::acquire(dir, opts.lock)?;
    let journal_path = dir.join(JOURNAL_FILE);
    if journal_path.exists() {
        return Err(Error::StudyExists(dir.to_path_buf()));
    }
    let meta = StudyMeta {
        study_id: plan.study_id.clone(),
        mode: plan.mode,
        direction: plan.direction,
        space: plan.space.clone(),
        space_fingerprint: plan.space.fingerprint(),
        config_fingerprint: plan.config_fingerprint.clone(),
        seed: plan.seed,
        budget: work.budget(),
        label: plan.label(),
        pruner: Some(plan.pruner.clone()),
    };
    let mut journal = JournalWriter::create(&journal_path, &meta)?;
    journal.set_durable(opts.durable);
    let mut state = StudyState::default();
    state.meta = Some(meta);
    state.last_seq = Some(1);
    let outcome = drive(plan, evaluator, dir, opts, journal, state, work, None);
    drop(lock);
    outcome
}

/// Continues a study from its journal. Unfinished trials restart from scratch
/// with their original id, seed and configuration.
pub fn resume_study(plan: &StudyPlan, evaluator: &dyn Evaluator, dir: &Path, opts: &RunOptions) -> Result<StudyOutcome> {
    let work = plan_work(plan)?;
    let lock = StudyLock::acquire(dir, opts.lock)?;
    let (mut journal, state, recovery) = JournalWriter::recover(&dir.join(JOURNAL_FILE))?;
    journal.set_durable(opts.durable);
    let meta = state.meta.as_ref().expect("recover checks the header");
    let space_fp = plan.space.fingerprint();
    if meta.space_fingerprint != space_fp {
        return Err(Error::FingerprintMismatch {
            what: "space",
            expected: meta.space_fingerprint.clone(),
            found: space_fp,
        });
    }
    if meta.config_fingerprint != plan.config_fingerprint {
        return Err(Error::FingerprintMismatch {
            what: "config",
            expected: meta.config_fingerprint.clone(),
            found: plan.config_fingerprint.clone(),
        });
    }
    if meta.mode != plan.mode {
        return Err(Error::FingerprintMismatch {
            what: "mode",
            expected: format!("{:?}", meta.mode).to_lowercase(),
            found: format!("{:?}", plan.mode).to_lowercase(),
        });
    }
    let outcome = drive(plan, evaluator, dir, opts, journal, state, work, Some(recovery));
    drop(lock);
    outcome
}

enum Work {
    /// Enumerated grid × repeats; trial id = config index · repeats + repeat.
    Grid { grid: Vec<Configuration>, repeats: u32 },
    Optimize { trials: u64, grid: Option<Vec<Configuration>> },
}

impl Work {
    fn budget(&self) -> u64 {
        match self {
            Work::Grid { grid, repeats } => grid.len() as u64 * u64::from(*repeats),
            Work::Optimize { trials, .. } => *trials,
        }
    }
}

fn plan_work(plan: &StudyPlan) -> Result<Work> {
    let report = plan.space.validate();
    if !report.is_ok() {
        return Err(milsweep_core::SpaceError::Invalid(report.violations).into());
    }
    Ok(match plan.mode {
        StudyMode::Benchmark => Work::Grid {
            grid: enumerate_grid(&plan.space, plan.grid_points, plan.grid_cap)?,
            repeats: plan.repeats.max(1),
        },
        StudyMode::Optimize => {
            let trials = plan.budget.ok_or(Error::ZeroBudget)?;
            if trials == 0 {
                return Err(Error::ZeroBudget);
            }
            let grid = match plan.sampler {
                SamplerKind::Grid => Some(enumerate_grid(&plan.space, plan.grid_points, plan.grid_cap)?),
                _ => None,
            };
            Work::Optimize { trials, grid }
        }
    })
}

struct Inner {
    journal: JournalWriter,
    state: StudyState,
    next_id: u64,
    finished_here: usize,
    stop: Option<Error>,
}

struct Shared<'a> {
    plan: &'a StudyPlan,
    work: &'a Work,
    evaluator: &'a dyn Evaluator,
    cache: Option<ArtifactCache>,
    trial_artifacts: Option<PathBuf>,
    pruner: Pruner,
    fault: Option<Fault>,
    inner: Mutex<Inner>,
}

impl Inner {
    fn append(&mut self, event: Event) -> Result<()> {
        let record = self.journal.append(event)?;
        self.state.apply(&record)?;
        Ok(())
    }
}

/// A unit of work handed to a worker.
struct Assignment {
    id: u64,
    config: Configuration,
    seed: u64,
}

impl<'a> Shared<'a> {
    fn lock(&self) -> MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|p| p.into_inner())
    }

    /// Next trial to run: an unfinished trial from the journal, or a new one.
    fn next_assignment(&self) -> Result<Option<Assignment>> {
        let mut inner = self.lock();
        loop {
            if inner.stop.is_some() {
                return Ok(None);
            }
            let id = inner.next_id;
            if id >= self.work.budget() {
                return Ok(None);
            }
            inner.next_id += 1;
            match inner.state.trials.get(&id) {
                Some(t) if t.state.is_terminal() => continue,
                Some(t) => {
                    return Ok(Some(Assignment {
                        id,
                        config: t.config.clone(),
                        seed: t.seed,
                    }))
                }
                None => {}
            }
            let (config, seed) = match self.work {
                Work::Grid { grid, repeats } => {
                    let r = id % u64::from(*repeats);
                    (grid[(id / u64::from(*repeats)) as usize].clone(), self.plan.seed.wrapping_add(r))
                }
                Work::Optimize { grid, .. } => {
                    let config = match grid {
                        Some(g) => g[(id % g.len() as u64) as usize].clone(),
                        None => self.sample(&inner.state, id)?,
                    };
                    (config, self.plan.seed.wrapping_add(id))
                }
            };
            let bracket = match self.plan.mode {
                StudyMode::Optimize => self.pruner.bracket_for(id),
                StudyMode::Benchmark => None,
            };
            inner.append(Event::TrialCreated {
                id,
                config: config.clone(),
                seed,
                bracket,
            })?;
            return Ok(Some(Assignment { id, config, seed }));
        }
    }

    fn sample(&self, state: &StudyState, id: u64) -> Result<Configuration> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.plan.seed);
        rng.set_stream(id + 1);
        Ok(match &self.plan.sampler {
            SamplerKind::Tpe(params) => {
                let history = history_of(state, self.plan.direction);
                sample_tpe(&self.plan.space, &history, params, &mut rng)?
            }
            _ => sample_random(&self.plan.space, &mut rng),
        })
    }

    /// Persists a report and answers with the pruning decision.
    fn on_report(&self, id: u64, step: u32, value: f64) -> Result<Signal, ReportProblem> {
        let mut inner = self.lock();
        if !value.is_finite() {
            return Err(ReportProblem::Contract(format!("non-finite value reported at step {step}")));
        }
        let trial = &inner.state.trials[&id];
        if trial.intermediates.last_step().is_some_and(|last| step <= last) {
            return Err(ReportProblem::Contract(format!("step {step} reported out of order")));
        }
        inner
            .append(Event::ValueReported { id, step, value })
            .map_err(ReportProblem::Fatal)?;
        if self.fault == Some(Fault::AtReport { trial: id, step }) {
            std::process::abort();
        }
        if self.plan.mode == StudyMode::Benchmark {
            return Ok(Signal::Continue);
        }
        let trial = &inner.state.trials[&id];
        let peers: Vec<PeerCurve> = inner
            .state
            .trials
            .values()
            .filter(|t| t.id != id && !t.intermediates.points.is_empty())
            .map(|t| PeerCurve {
                curve: t.intermediates.clone(),
                bracket: t.bracket,
            })
            .collect();
        let completed = inner.state.count(TrialState::Complete);
        let prune = self
            .pruner
            .should_prune(&trial.intermediates, trial.bracket, step, &peers, completed, self.plan.direction)
            .map_err(|e| ReportProblem::Fatal(e.into()))?;
        Ok(if prune { Signal::Prune } else { Signal::Continue })
    }

    fn run_trial(&self, a: &Assignment) -> Result<()> {
        self.lock().append(Event::StateChanged {
            id: a.id,
            state: TrialState::Running,
            final_value: None,
            reason: None,
        })?;
        let mut fatal: Option<Error> = None;
        let mut violation: Option<String> = None;
        let mut prune_signalled = false;
        let result = {
            let mut report = |step: u32, value: f64| match self.on_report(a.id, step, value) {
                Ok(signal) => {
                    prune_signalled |= signal == Signal::Prune;
                    signal
                }
                Err(ReportProblem::Contract(msg)) => {
                    violation.get_or_insert(msg);
                    Signal::Prune
                }
                Err(ReportProblem::Fatal(e)) => {
                    fatal.get_or_insert(e);
                    Signal::Prune
                }
            };
            let mut cache = TrialCache {
                shared: self,
                id: a.id,
                config: &a.config,
                fatal: None,
            };
            let r = self.evaluator.evaluate(&a.config, a.seed, &mut report, &mut cache);
            if let Some(e) = cache.fatal {
                fatal.get_or_insert(e);
            }
            r
        };
        if let Some(e) = fatal {
            return Err(e);
        }
        let (state, final_value, reason) = match (result, violation) {
            (_, Some(msg)) => (TrialState::Failed, None, Some(msg)),
            (Err(e), None) => (TrialState::Failed, None, Some(e.to_string())),
            (Ok(_), None) if prune_signalled => (TrialState::Pruned, None, None),
            (Ok(Completion::Finished(v)), None) if v.is_finite() => (TrialState::Complete, Some(v), None),
            (Ok(Completion::Finished(_)), None) => (TrialState::Failed, None, Some("non-finite final value".into())),
            (Ok(Completion::Stopped), None) => (
                TrialState::Failed,
                None,
                Some("evaluator stopped without a prune signal".into()),
            ),
        };
        let mut inner = self.lock();
        inner.append(Event::StateChanged {
            id: a.id,
            state,
            final_value,
            reason,
        })?;
        inner.finished_here += 1;
        let terminal = inner.state.trials.values().filter(|t| t.state.is_terminal()).count();
        if self.fault == Some(Fault::AfterTrials(terminal)) {
            std::process::abort();
        }
        if let (StudyMode::Benchmark, Some(limit)) = (self.plan.mode, self.plan.max_failure_rate) {
            let failed = inner.state.count(TrialState::Failed);
            if failed as f64 > limit * terminal as f64 && inner.stop.is_none() {
                inner.stop = Some(Error::FailureRate {
                    failed,
                    finished: terminal,
                    limit,
                });
            }
        }
        Ok(())
    }

    fn worker(&self) {
        loop {
            let next = match self.next_assignment() {
                Ok(Some(a)) => a,
                Ok(None) => return,
                Err(e) => {
                    self.lock().stop.get_or_insert(e);
                    return;
                }
            };
            if let Err(e) = self.run_trial(&next) {
                self.lock().stop.get_or_insert(e);
                return;
            }
        }
    }
}

enum ReportProblem {
    /// The evaluator broke its contract; the trial fails.
    Contract(String),
    /// Persistence failed; the study stops.
    Fatal(Error),
}

struct TrialCache<'s, 'a> {
    shared: &'s Shared<'a>,
    id: u64,
    config: &'s Configuration,
    fatal: Option<Error>,
}

impl CacheAccess for TrialCache<'_, '_> {
    fn get_or_compute(
        &mut self,
        stages: &[Stage],
        producer: &mut dyn FnMut() -> std::result::Result<Vec<u8>, String>,
    ) -> std::result::Result<Vec<u8>, EvalError> {
        let Some(cache) = &self.shared.cache else {
            return producer().map_err(EvalError::Failed);
        };
        let key = ArtifactKey::new(&self.shared.plan.space, self.config, stages)
            .map_err(|e| EvalError::Failed(e.to_string()))?;
        let (bytes, lookup) = match cache.get_or_compute(&key, producer) {
            Ok(v) => v,
            Err(CacheError::Producer(msg)) => return Err(EvalError::Failed(msg)),
            Err(CacheError::Store(e)) => {
                let msg = e.to_string();
                self.fatal.get_or_insert(e);
                return Err(EvalError::Failed(msg));
            }
        };
        let event = Event::CacheEvent {
            id: self.id,
            stage_set: key.stage_set,
            digest: key.digest,
            hit: lookup.is_hit(),
        };
        if let Err(e) = self.shared.lock().append(event) {
            let msg = e.to_string();
            self.fatal.get_or_insert(e);
            return Err(EvalError::Failed(msg));
        }
        Ok(bytes)
    }

    fn record(&mut self, name: &str, payload: &[u8]) -> std::result::Result<(), EvalError> {
        let Some(root) = &self.shared.trial_artifacts else {
            return Ok(());
        };
        let dir = root.join(self.id.to_string());
        let write = || -> std::io::Result<()> {
            fs::create_dir_all(&dir)?;
            let mut tmp = tempfile::NamedTempFile::new_in(&dir)?;
            tmp.write_all(payload)?;
            tmp.persist(dir.join(name)).map_err(|e| e.error)?;
            Ok(())
        };
        write().map_err(|e| EvalError::Failed(format!("writing {}: {e}", dir.join(name).display())))
    }
}

/// Observation history for the sampler: complete trials with their final
/// value and pruned trials with their last reported value.
pub fn history_of(state: &StudyState, direction: Direction) -> ObservationHistory {
    let mut history = ObservationHistory::new(direction);
    for t in state.trials.values() {
        match (t.state, t.final_value, t.best_known_value()) {
            (TrialState::Complete, Some(v), _) => history.push(t.id, t.config.clone(), v, ObservationState::Complete),
            (TrialState::Pruned, _, Some(v)) => history.push(t.id, t.config.clone(), v, ObservationState::Pruned),
            _ => {}
        }
    }
    history
}

#[allow(clippy::too_many_arguments)]
fn drive(
    plan: &StudyPlan,
    evaluator: &dyn Evaluator,
    dir: &Path,
    opts: &RunOptions,
    journal: JournalWriter,
    state: StudyState,
    work: Work,
    recovery: Option<Recovery>,
) -> Result<StudyOutcome> {
    let shared = Shared {
        plan,
        work: &work,
        evaluator,
        cache: opts.cache_root.as_ref().map(ArtifactCache::new),
        trial_artifacts: opts.trial_artifacts.clone(),
        pruner: match plan.mode {
            StudyMode::Benchmark => Pruner::None,
            StudyMode::Optimize => Pruner::from_kind(&plan.pruner)?,
        },
        fault: opts.fault,
        inner: Mutex::new(Inner {
            journal,
            state,
            next_id: 0,
            finished_here: 0,
            stop: None,
        }),
    };
    let workers = plan.concurrency.max(1);
    if workers == 1 {
        shared.worker();
    } else {
        thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(|| shared.worker());
            }
        });
    }
    let inner = shared.inner.into_inner().unwrap_or_else(|p| p.into_inner());
    let set = result_set(&inner.state)?;
    export_csv(&set, &dir.join(RESULTS_FILE))?;
    if let Some(e) = inner.stop {
        return Err(e);
    }
    summarize(inner.state, &work, plan.direction, recovery)
}

fn summarize(state: StudyState, work: &Work, direction: Direction, recovery: Option<Recovery>) -> Result<StudyOutcome> {
    let pick = |value: fn(&TrialRecord) -> Option<f64>| {
        state
            .trials
            .values()
            .filter_map(|t| value(t).map(|v| (t, v)))
            .min_by(|a, b| direction.cmp_best_first(a.1, b.1).then(a.0.id.cmp(&b.0.id)))
            .map(|(t, v)| BestTrial {
                trial_id: t.id,
                config: t.config.clone(),
                value: v,
            })
    };
    let (best, degraded) = match pick(|t| t.final_value) {
        Some(b) => (b, false),
        None => (pick(TrialRecord::best_known_value).ok_or(Error::NoValues)?, true),
    };
    let summary = match work {
        Work::Grid { grid, repeats } => grid
            .iter()
            .enumerate()
            .map(|(i, config)| {
                let ids: Vec<u64> = (0..u64::from(*repeats)).map(|r| i as u64 * u64::from(*repeats) + r).collect();
                let values: Vec<f64> = ids
                    .iter()
                    .filter_map(|id| state.trials.get(id).and_then(|t| t.final_value))
                    .collect();
                ConfigSummary {
                    config: config.clone(),
                    complete: values.len(),
                    mean: Aggregate::Mean.apply(&values, direction),
                    std: Aggregate::Std.apply(&values, direction),
                    trials: ids,
                }
            })
            .collect(),
        Work::Optimize { .. } => Vec::new(),
    };
    Ok(StudyOutcome {
        best,
        degraded,
        state,
        summary,
        recovery,
    })
}
