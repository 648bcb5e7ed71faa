mod common;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use common::{bowl_space, optimize_plan, Bowl};
use milsweep::core::mil::Signal;
use milsweep::core::pruner::PrunerKind;
use milsweep::core::sampler::{SamplerKind, TpeParams};
use milsweep::core::trial::{Event, JournalRecord, StudyMode, TrialState};
use milsweep::core::{Configuration, Direction, Domain, ParamSpec, Stage};
use milsweep::engine::{resume_study, start_study, RunOptions, StudyOutcome, StudyPlan, TRIALS_DIR};
use milsweep::evaluator::{CacheAccess, Completion, EvalError, Evaluator, MilEvaluator, Report, MODEL_SUMMARY};
use milsweep::export::RESULTS_FILE;
use milsweep::journal::{encode_line, read_journal, JOURNAL_FILE};
use milsweep::Error;
use proptest::prelude::*;

fn run(dir: &Path, plan: &StudyPlan, evaluator: &dyn Evaluator) -> Result<StudyOutcome, Error> {
    start_study(plan, evaluator, dir, &RunOptions::for_dir(dir))
}

fn benchmark_plan(repeats: u32) -> StudyPlan {
    let mut plan = StudyPlan::new("bench", StudyMode::Benchmark, bowl_space());
    plan.repeats = repeats;
    plan.seed = 100;
    plan
}

fn created(records: &[JournalRecord]) -> usize {
    records.iter().filter(|r| matches!(r.event, Event::TrialCreated { .. })).count()
}

#[test]
fn benchmark_evaluates_every_grid_configuration() {
    let tmp = tempfile::tempdir().unwrap();
    // 2 normalizations x 3 grid points of x
    let out = run(tmp.path(), &benchmark_plan(2), &Bowl::new(3)).unwrap();
    assert_eq!(out.state.trials.len(), 12);
    assert_eq!(out.state.count(TrialState::Complete), 12);
    assert_eq!(out.summary.len(), 6);
    for (i, s) in out.summary.iter().enumerate() {
        assert_eq!(s.trials, vec![2 * i as u64, 2 * i as u64 + 1]);
        for (r, id) in s.trials.iter().enumerate() {
            let t = &out.state.trials[id];
            assert_eq!(t.config, s.config);
            assert_eq!(t.seed, 100 + r as u64);
            assert_eq!(t.intermediates.points.len(), 3);
        }
    }
    let records = read_journal(&tmp.path().join(JOURNAL_FILE)).unwrap().records;
    assert_eq!(created(&records), 12);
}

#[test]
fn repeats_of_a_seedless_evaluator_have_zero_spread() {
    let tmp = tempfile::tempdir().unwrap();
    let bowl = Bowl { jitter: 0.0, ..Bowl::new(2) };
    let out = run(tmp.path(), &benchmark_plan(3), &bowl).unwrap();
    assert!(out.summary.iter().all(|s| s.std == Some(0.0) && s.complete == 3));
    let best = out.best_config(Direction::Minimize).unwrap();
    assert_eq!(best.config.get("x").unwrap().as_f64(), Some(0.5));
}

#[test]
fn failed_trials_do_not_stop_a_benchmark() {
    let tmp = tempfile::tempdir().unwrap();
    let bowl = Bowl { fail_at: Some(0.0), ..Bowl::new(2) };
    let out = run(tmp.path(), &benchmark_plan(1), &bowl).unwrap();
    assert_eq!(out.state.count(TrialState::Failed), 2);
    assert_eq!(out.state.count(TrialState::Complete), 4);
    let failed = out.state.trials.values().find(|t| t.state == TrialState::Failed).unwrap();
    assert!(failed.reason.as_deref().unwrap().contains("failure point"));
    assert_eq!(failed.final_value, None);
}

#[test]
fn failure_rate_limit_aborts_with_partial_results() {
    let tmp = tempfile::tempdir().unwrap();
    let bowl = Bowl { fail_at: Some(0.0), ..Bowl::new(2) };
    let mut plan = benchmark_plan(1);
    plan.max_failure_rate = Some(0.1);
    match run(tmp.path(), &plan, &bowl) {
        Err(Error::FailureRate { failed: 1, finished: 1, .. }) => {}
        other => panic!("{other:?}"),
    }
    let csv = fs::read_to_string(tmp.path().join(RESULTS_FILE)).unwrap();
    assert_eq!(csv.lines().count(), 2);
}

#[test]
fn single_trial_optimize_returns_its_value() {
    let tmp = tempfile::tempdir().unwrap();
    let plan = optimize_plan(bowl_space(), SamplerKind::Random, PrunerKind::None, 1, 4);
    let out = run(tmp.path(), &plan, &Bowl::new(3)).unwrap();
    let t = &out.state.trials[&0];
    assert_eq!(out.best.trial_id, 0);
    assert_eq!(Some(out.best.value), t.final_value);
    assert!(!out.degraded);
    assert_eq!(t.seed, 4);
}

#[test]
fn shared_preprocessing_hits_the_cache() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(tmp.path(), &benchmark_plan(1), &Bowl::new(1)).unwrap();
    let key = "tiling+normalization";
    let hits: Vec<bool> = out.state.trials.values().map(|t| t.cache_hits[key]).collect();
    // configs are ordered normalization-major: none x3, then A x3
    assert_eq!(hits, vec![false, true, true, false, true, true]);
    assert!(tmp.path().join("cache").join(key).is_dir());
}

#[test]
fn model_summaries_land_under_the_study_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let space = common::planted_space();
    let mut plan = optimize_plan(space, SamplerKind::Random, PrunerKind::None, 3, 5);
    plan.study_id = "summaries".into();
    let mut evaluator = MilEvaluator::default();
    evaluator.effect.default_epochs = 2;
    let out = run(tmp.path(), &plan, &evaluator).unwrap();
    for t in out.state.trials.values() {
        let path = tmp.path().join(TRIALS_DIR).join(t.id.to_string()).join(MODEL_SUMMARY);
        let summary: serde_json::Value = serde_json::from_slice(&fs::read(&path).unwrap()).unwrap();
        assert_eq!(summary["epochs_run"], 2);
        assert_eq!(summary["final_metric"].as_f64(), t.final_value);
        assert!(summary["model"]["bias"].is_number());
    }

    let other = tmp.path().join("quiet");
    let mut opts = RunOptions::for_dir(&other);
    opts.trial_artifacts = None;
    start_study(&plan, &evaluator, &other, &opts).unwrap();
    assert!(!other.join(TRIALS_DIR).exists());
}

/// Wraps an evaluator and reports `1 - value`, for the direction symmetry.
struct Complement<E>(E);

impl<E: Evaluator> Evaluator for Complement<E> {
    fn evaluate(
        &self,
        config: &Configuration,
        seed: u64,
        report: &mut Report<'_>,
        cache: &mut dyn CacheAccess,
    ) -> Result<Completion, EvalError> {
        let mut flipped = |step: u32, v: f64| -> Signal { report(step, 1.0 - v) };
        Ok(match self.0.evaluate(config, seed, &mut flipped, cache)? {
            Completion::Finished(v) => Completion::Finished(1.0 - v),
            Completion::Stopped => Completion::Stopped,
        })
    }

    fn fingerprint(&self) -> String {
        format!("complement-{}", self.0.fingerprint())
    }
}

#[test]
fn maximizing_the_complement_picks_the_same_trials() {
    for seed in 0..5 {
        let tmp = tempfile::tempdir().unwrap();
        let sampler = SamplerKind::Tpe(TpeParams { n_startup: 4, ..TpeParams::default() });
        let pruner = PrunerKind::Median { warmup_trials: 2, warmup_steps: 1 };
        let min_plan = optimize_plan(bowl_space(), sampler.clone(), pruner.clone(), 16, seed);
        let mut max_plan = optimize_plan(bowl_space(), sampler, pruner, 16, seed);
        max_plan.direction = Direction::Maximize;
        let a = run(&tmp.path().join("min"), &min_plan, &Bowl::new(4)).unwrap();
        let b = run(&tmp.path().join("max"), &max_plan, &Complement(Bowl::new(4))).unwrap();
        assert_eq!(a.best.config, b.best.config, "seed {seed}");
        for (ta, tb) in a.state.trials.values().zip(b.state.trials.values()) {
            assert_eq!(ta.config, tb.config);
            assert_eq!(ta.state, tb.state);
        }
    }
}

fn golden_plan() -> StudyPlan {
    let sampler = SamplerKind::Tpe(TpeParams { n_startup: 3, ..TpeParams::default() });
    let pruner = PrunerKind::Median { warmup_trials: 2, warmup_steps: 1 };
    let mut plan = optimize_plan(bowl_space(), sampler, pruner, 10, 11);
    plan.config_fingerprint = "golden".into();
    plan
}

/// Journal prefix ending right after the k-th terminal event, followed by the
/// creation and start of the next trial and a torn line, as a kill would leave
/// it.
fn crashed_journal(records: &[JournalRecord], k: usize) -> Vec<JournalRecord> {
    let mut terminal = 0;
    let end = records
        .iter()
        .position(|r| {
            if let Event::StateChanged { state, .. } = r.event {
                terminal += usize::from(state.is_terminal());
            }
            terminal == k
        })
        .unwrap();
    records[..(end + 3).min(records.len())].to_vec()
}

/// Recreates the study directory a crash would leave: the journal prefix and
/// the artifacts its cache events refer to.
fn stage_crash(golden: &Path, dir: &Path, prefix: &[JournalRecord]) {
    let mut text: String = prefix.iter().map(|r| encode_line(r).unwrap()).collect();
    text += "deadbeef {\"seq\"";
    fs::create_dir_all(dir).unwrap();
    fs::write(dir.join(JOURNAL_FILE), text).unwrap();
    for r in prefix {
        if let Event::CacheEvent { stage_set, digest, .. } = &r.event {
            let rel = Path::new("cache").join(stage_set).join(digest);
            fs::create_dir_all(dir.join(&rel).parent().unwrap()).unwrap();
            fs::copy(golden.join(&rel), dir.join(&rel)).unwrap();
        }
    }
}

#[test]
fn resume_after_a_crash_matches_the_uninterrupted_run() {
    let tmp = tempfile::tempdir().unwrap();
    let plan = golden_plan();
    let golden_dir = tmp.path().join("golden");
    let golden = run(&golden_dir, &plan, &Bowl::new(4)).unwrap();
    let golden_csv = fs::read_to_string(golden_dir.join(RESULTS_FILE)).unwrap();
    let records = read_journal(&golden_dir.join(JOURNAL_FILE)).unwrap().records;
    for k in [1, 5, 9] {
        let dir = tmp.path().join(format!("crash{k}"));
        stage_crash(&golden_dir, &dir, &crashed_journal(&records, k));
        let resumed = resume_study(&plan, &Bowl::new(4), &dir, &RunOptions::for_dir(&dir)).unwrap();
        let recovery = resumed.recovery.unwrap();
        assert!(recovery.dropped_tail);
        assert_eq!(resumed.best, golden.best, "k={k}");
        assert_eq!(fs::read_to_string(dir.join(RESULTS_FILE)).unwrap(), golden_csv, "k={k}");
        let ids: Vec<u64> = resumed.state.trials.keys().copied().collect();
        assert_eq!(ids, (0..10).collect::<Vec<_>>());
        let seqs: Vec<u64> = read_journal(&dir.join(JOURNAL_FILE)).unwrap().records.iter().map(|r| r.seq).collect();
        assert!(seqs.windows(2).all(|w| w[1] == w[0] + 1), "gap in seq after resume, k={k}");
    }
}

#[test]
fn resume_refuses_a_changed_space_or_config() {
    let tmp = tempfile::tempdir().unwrap();
    let plan = golden_plan();
    run(tmp.path(), &plan, &Bowl::new(2)).unwrap();
    let mut altered = plan.clone();
    altered.space.params.push(ParamSpec::new("y", Stage::Training, Domain::ContinuousLinear { low: 0.0, high: 1.0 }));
    match resume_study(&altered, &Bowl::new(2), tmp.path(), &RunOptions::for_dir(tmp.path())) {
        Err(Error::FingerprintMismatch { what: "space", .. }) => {}
        other => panic!("{other:?}"),
    }
    let mut recfg = plan.clone();
    recfg.config_fingerprint = "other".into();
    assert!(matches!(
        resume_study(&recfg, &Bowl::new(2), tmp.path(), &RunOptions::for_dir(tmp.path())),
        Err(Error::FingerprintMismatch { what: "config", .. })
    ));
}

#[test]
fn starting_over_an_existing_study_is_refused() {
    let tmp = tempfile::tempdir().unwrap();
    run(tmp.path(), &benchmark_plan(1), &Bowl::new(1)).unwrap();
    assert!(matches!(run(tmp.path(), &benchmark_plan(1), &Bowl::new(1)), Err(Error::StudyExists(_))));
}

/// Checks the per-trial event order against the lifecycle state machine.
fn check_lifecycle(records: &[JournalRecord]) -> Result<(), String> {
    #[derive(PartialEq, Debug)]
    enum Phase {
        Created,
        Running(Option<u32>),
        Done,
    }
    let mut phase: BTreeMap<u64, Phase> = BTreeMap::new();
    for w in records.windows(2) {
        if w[1].seq != w[0].seq + 1 {
            return Err(format!("seq jumps from {} to {}", w[0].seq, w[1].seq));
        }
    }
    for r in records {
        match &r.event {
            Event::StudyOpened { .. } => {}
            Event::TrialCreated { id, .. } => {
                if phase.insert(*id, Phase::Created).is_some() {
                    return Err(format!("trial {id} created twice"));
                }
            }
            Event::StateChanged { id, state, final_value, .. } => {
                let p = phase.get_mut(id).ok_or(format!("trial {id} changed before creation"))?;
                match (&*p, state) {
                    (Phase::Created, TrialState::Running) => *p = Phase::Running(None),
                    (Phase::Running(_), s) if s.is_terminal() => {
                        if final_value.is_some() != (*s == TrialState::Complete) {
                            return Err(format!("trial {id}: final value with state {s:?}"));
                        }
                        *p = Phase::Done;
                    }
                    (from, to) => return Err(format!("trial {id}: illegal {from:?} -> {to:?}")),
                }
            }
            Event::ValueReported { id, step, .. } => match phase.get_mut(id) {
                Some(Phase::Running(last)) => {
                    if last.is_some_and(|l| *step <= l) {
                        return Err(format!("trial {id}: step {step} out of order"));
                    }
                    *last = Some(*step);
                }
                other => return Err(format!("trial {id}: report while {other:?}")),
            },
            Event::CacheEvent { id, .. } => {
                if !matches!(phase.get(id), Some(Phase::Running(_))) {
                    return Err(format!("trial {id}: cache event outside running"));
                }
            }
        }
    }
    match phase.iter().find(|(_, p)| **p != Phase::Done) {
        Some((id, p)) => Err(format!("trial {id} left in {p:?}")),
        None => Ok(()),
    }
}

fn pruner_strategy() -> impl Strategy<Value = PrunerKind> {
    prop_oneof![
        Just(PrunerKind::None),
        (0usize..4, 1u32..3).prop_map(|(t, s)| PrunerKind::Median { warmup_trials: t, warmup_steps: s }),
        (0usize..4).prop_map(|t| PrunerKind::Hyperband {
            r_min: 1,
            max_budget: 9,
            eta: 3,
            warmup_trials: t,
            warmup_steps: 1
        }),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]
    #[test]
    fn journals_obey_the_lifecycle(
        seed in 0u64..1000,
        tpe in any::<bool>(),
        pruner in pruner_strategy(),
        concurrency in 1usize..4,
        trials in 1u64..20,
        fail in any::<bool>(),
    ) {
        let tmp = tempfile::tempdir().unwrap();
        let sampler = if tpe { SamplerKind::Tpe(TpeParams { n_startup: 3, ..TpeParams::default() }) } else { SamplerKind::Random };
        let mut plan = optimize_plan(bowl_space(), sampler, pruner, trials, seed);
        plan.concurrency = concurrency;
        // Random x never hits 0.0 exactly, so fail through a grid point instead.
        let bowl = Bowl { fail_at: fail.then_some(1.0), ..Bowl::new(9) };
        let out = run(tmp.path(), &plan, &bowl);
        let records = read_journal(&tmp.path().join(JOURNAL_FILE)).unwrap().records;
        prop_assert_eq!(created(&records) as u64, trials);
        if let Err(e) = check_lifecycle(&records) {
            return Err(TestCaseError::fail(e));
        }
        let out = out.unwrap();
        prop_assert_eq!(milsweep::core::trial::replay(&records).unwrap(), out.state);
    }
}
