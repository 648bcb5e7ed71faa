//! Trial lifecycle, journal events and replay.
//!
//! The journal is the single source of truth for a study: every
//! [`TrialRecord`] field is reconstructed by folding [`JournalRecord`]s in
//! sequence order. The fold rejects any event that would break the lifecycle
//! `created → running → {pruned | complete | failed}`.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::direction::Direction;
use crate::error::JournalError;
use crate::pruner::{IntermediateCurve, PrunerKind};
use crate::space::{Configuration, PipelineSpace};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrialState {
    Created,
    Running,
    Pruned,
    Complete,
    Failed,
}

impl TrialState {
    pub fn is_terminal(self) -> bool {
        matches!(self, TrialState::Pruned | TrialState::Complete | TrialState::Failed)
    }

    pub fn can_become(self, next: TrialState) -> bool {
        matches!(
            (self, next),
            (TrialState::Created, TrialState::Running)
                | (TrialState::Running, TrialState::Pruned)
                | (TrialState::Running, TrialState::Complete)
                | (TrialState::Running, TrialState::Failed)
        )
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TrialState::Created => "created",
            TrialState::Running => "running",
            TrialState::Pruned => "pruned",
            TrialState::Complete => "complete",
            TrialState::Failed => "failed",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [
            TrialState::Created,
            TrialState::Running,
            TrialState::Pruned,
            TrialState::Complete,
            TrialState::Failed,
        ]
        .into_iter()
        .find(|t| t.as_str() == s)
    }
}

impl fmt::Display for TrialState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StudyMode {
    Benchmark,
    Optimize,
}

/// Study-level header, written as the first journal event.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyMeta {
    pub study_id: String,
    pub mode: StudyMode,
    pub direction: Direction,
    pub space: PipelineSpace,
    pub space_fingerprint: String,
    pub config_fingerprint: String,
    pub seed: u64,
    /// Trial budget: `T` in optimize mode, grid size × repeats in benchmark mode.
    pub budget: u64,
    /// Free-form label (sampler name) used for grouping across studies.
    #[serde(default)]
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pruner: Option<PrunerKind>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Event {
    StudyOpened {
        meta: StudyMeta,
    },
    TrialCreated {
        id: u64,
        config: Configuration,
        seed: u64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        bracket: Option<u32>,
    },
    StateChanged {
        id: u64,
        state: TrialState,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        final_value: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        reason: Option<String>,
    },
    ValueReported {
        id: u64,
        step: u32,
        value: f64,
    },
    CacheEvent {
        id: u64,
        stage_set: String,
        digest: String,
        hit: bool,
    },
}

impl Event {
    pub fn trial_id(&self) -> Option<u64> {
        match self {
            Event::StudyOpened { .. } => None,
            Event::TrialCreated { id, .. }
            | Event::StateChanged { id, .. }
            | Event::ValueReported { id, .. }
            | Event::CacheEvent { id, .. } => Some(*id),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JournalRecord {
    pub seq: u64,
    /// Milliseconds since the Unix epoch.
    pub ts: u64,
    pub event: Event,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub id: u64,
    pub config: Configuration,
    pub state: TrialState,
    pub intermediates: IntermediateCurve,
    pub final_value: Option<f64>,
    pub bracket: Option<u32>,
    pub seed: u64,
    pub started_at: Option<u64>,
    pub ended_at: Option<u64>,
    /// Stage set → whether its artifact came from the cache.
    pub cache_hits: BTreeMap<String, bool>,
    pub reason: Option<String>,
}

impl TrialRecord {
    /// Final value for complete trials, else the last reported value.
    pub fn best_known_value(&self) -> Option<f64> {
        self.final_value
            .or_else(|| self.intermediates.points.last().map(|(_, v)| *v))
    }

    pub fn steps_used(&self) -> u32 {
        self.intermediates.last_step().unwrap_or(0)
    }
}

/// Study state reconstructed from the journal.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct StudyState {
    pub meta: Option<StudyMeta>,
    pub trials: BTreeMap<u64, TrialRecord>,
    pub last_seq: Option<u64>,
}

impl StudyState {
    pub fn apply(&mut self, record: &JournalRecord) -> Result<(), JournalError> {
        if let Some(prev) = self.last_seq {
            if record.seq <= prev {
                return Err(JournalError::NonMonotoneSequence {
                    previous: prev,
                    found: record.seq,
                });
            }
        }
        match &record.event {
            Event::StudyOpened { meta } => self.meta = Some(meta.clone()),
            Event::TrialCreated {
                id,
                config,
                seed,
                bracket,
            } => {
                if self.trials.contains_key(id) {
                    return Err(JournalError::DuplicateTrial(*id));
                }
                self.trials.insert(
                    *id,
                    TrialRecord {
                        id: *id,
                        config: config.clone(),
                        state: TrialState::Created,
                        intermediates: IntermediateCurve::new(*id),
                        final_value: None,
                        bracket: *bracket,
                        seed: *seed,
                        started_at: None,
                        ended_at: None,
                        cache_hits: BTreeMap::new(),
                        reason: None,
                    },
                );
            }
            Event::StateChanged {
                id,
                state,
                final_value,
                reason,
            } => {
                let trial = self.trials.get_mut(id).ok_or(JournalError::UnknownTrial(*id))?;
                if !trial.state.can_become(*state) {
                    return Err(JournalError::IllegalTransition {
                        id: *id,
                        from: trial.state,
                        to: *state,
                    });
                }
                if final_value.is_some() != (*state == TrialState::Complete) {
                    return Err(JournalError::FinalValueMismatch(*id));
                }
                trial.state = *state;
                trial.final_value = *final_value;
                trial.reason = reason.clone();
                if *state == TrialState::Running {
                    trial.started_at = Some(record.ts);
                } else {
                    trial.ended_at = Some(record.ts);
                }
            }
            Event::ValueReported { id, step, value } => {
                let trial = self.trials.get_mut(id).ok_or(JournalError::UnknownTrial(*id))?;
                if trial.state != TrialState::Running {
                    return Err(JournalError::IllegalTransition {
                        id: *id,
                        from: trial.state,
                        to: TrialState::Running,
                    });
                }
                if trial.intermediates.last_step().is_some_and(|s| s >= *step) {
                    return Err(JournalError::NonMonotoneStep { id: *id, step: *step });
                }
                trial.intermediates.points.push((*step, *value));
            }
            Event::CacheEvent { id, stage_set, hit, .. } => {
                let trial = self.trials.get_mut(id).ok_or(JournalError::UnknownTrial(*id))?;
                trial.cache_hits.insert(stage_set.clone(), *hit);
            }
        }
        self.last_seq = Some(record.seq);
        Ok(())
    }

    pub fn count(&self, state: TrialState) -> usize {
        self.trials.values().filter(|t| t.state == state).count()
    }

    pub fn next_trial_id(&self) -> u64 {
        self.trials.keys().next_back().map_or(0, |id| id + 1)
    }
}

pub fn replay<'a, I>(records: I) -> Result<StudyState, JournalError>
where
    I: IntoIterator<Item = &'a JournalRecord>,
{
    let mut state = StudyState::default();
    for r in records {
        state.apply(r)?;
    }
    Ok(state)
}

/// Drops every event of non-terminal trials except their creation and
/// renumbers sequence numbers contiguously from 1. Such trials restart from
/// scratch with their original id, seed and configuration.
pub fn compact_for_resume(records: &[JournalRecord], state: &StudyState) -> Vec<JournalRecord> {
    let unfinished: Vec<u64> = state
        .trials
        .values()
        .filter(|t| !t.state.is_terminal())
        .map(|t| t.id)
        .collect();
    records
        .iter()
        .filter(|r| match (&r.event, r.event.trial_id()) {
            (Event::TrialCreated { .. }, _) | (_, None) => true,
            (_, Some(id)) => !unfinished.contains(&id),
        })
        .enumerate()
        .map(|(i, r)| JournalRecord {
            seq: i as u64 + 1,
            ts: r.ts,
            event: r.event.clone(),
        })
        .collect()
}
