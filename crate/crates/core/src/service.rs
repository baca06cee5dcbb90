//! Transport-independent service core behind the HTTP API.
//!
//! Cycles start on a worker thread and are observed by polling. Every
//! operation on one cycle is serialized by taking its machine out of the
//! table while it runs, so a concurrent or repeated submission for a round
//! sees a conflict instead of a second effect. Durable state lives only in
//! the log: after a restart, terminal statuses are answered from it.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::time::{Duration, Instant};

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::bandit::{cycle_regret, preference_scores, FeatureInputs, PreferenceState};
use crate::contracts::{
    check_value, CategoryScores, ClinicianFeedback, CycleRecord, CycleStatus, PatientState, ValidationContext,
    ValidationErrors,
};
use crate::memory::{Envelope, LongTermLog};
use crate::replay::study::ROLLING_WINDOW;
use crate::replay::{read_records, resolve_waveform, SkippedRow, TrajectoryRecord};
use crate::workflow::{CycleInput, CycleMachine, Engine, EngineConfig, EngineError, PendingReview};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ServiceError {
    #[error("{what} `{id}` not found")]
    NotFound { what: &'static str, id: String },
    #[error("{0}")]
    Conflict(String),
    #[error("{message}")]
    BadRequest { message: String, path: Option<String> },
    #[error("{0}")]
    Internal(String),
}

impl ServiceError {
    pub fn code(&self) -> &'static str {
        match self {
            ServiceError::NotFound { .. } => "not_found",
            ServiceError::Conflict(_) => "conflict",
            ServiceError::BadRequest { .. } => "invalid_request",
            ServiceError::Internal(_) => "internal",
        }
    }

    pub fn path(&self) -> Option<&str> {
        match self {
            ServiceError::BadRequest { path, .. } => path.as_deref(),
            _ => None,
        }
    }

    fn invalid(errors: &ValidationErrors, prefix: &str) -> Self {
        let path = errors.paths().first().map(|p| if p.is_empty() { prefix.to_string() } else { format!("{prefix}.{p}") });
        ServiceError::BadRequest {
            message: errors.to_string(),
            path,
        }
    }
}

impl From<EngineError> for ServiceError {
    fn from(e: EngineError) -> Self {
        match e {
            EngineError::InvalidFeedback(v) => ServiceError::invalid(&v, "feedback"),
            EngineError::InvalidInput(v) => ServiceError::invalid(&v, "input"),
            EngineError::NotPending(id) | EngineError::NotResolved(id) => {
                ServiceError::Conflict(format!("cycle `{id}` is not waiting for review"))
            }
            other => ServiceError::Internal(other.to_string()),
        }
    }
}

/// Decode a request body, reporting the path of the first offending field.
pub fn parse_body<T: serde::de::DeserializeOwned>(bytes: &[u8]) -> Result<T, ServiceError> {
    let de = &mut serde_json::Deserializer::from_slice(bytes);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        ServiceError::BadRequest {
            message: e.inner().to_string(),
            path: (path != ".").then_some(path),
        }
    })
}

/// Uniform error payload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
    pub path: Option<String>,
}

impl From<&ServiceError> for ErrorBody {
    fn from(e: &ServiceError) -> Self {
        ErrorBody {
            code: e.code().to_string(),
            message: e.to_string(),
            path: e.path().map(str::to_string),
        }
    }
}

/// Inclusive timestamp range; the latest record inside it is the current one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct TimeWindow {
    pub start: f64,
    pub end: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct StartCycleRequest {
    pub clinician_id: String,
    #[serde(default)]
    pub window: Option<TimeWindow>,
    #[serde(default = "default_true")]
    pub waveform_enabled: bool,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum CyclePhase {
    Running,
    Review,
    Accepted,
    Hold,
    Exhausted,
    Failed,
}

impl From<CycleStatus> for CyclePhase {
    fn from(s: CycleStatus) -> Self {
        match s {
            CycleStatus::Accepted => CyclePhase::Accepted,
            CycleStatus::Hold => CyclePhase::Hold,
            CycleStatus::Exhausted => CyclePhase::Exhausted,
            CycleStatus::Failed => CyclePhase::Failed,
        }
    }
}

impl CyclePhase {
    pub fn is_terminal(self) -> bool {
        !matches!(self, CyclePhase::Running | CyclePhase::Review)
    }
}

/// Status of a cycle, with the pending review while one is open.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct CycleView {
    pub cycle_id: String,
    pub encounter_id: String,
    pub status: CyclePhase,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub review: Option<PendingReview>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

/// Feedback for one review round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct FeedbackSubmission {
    pub round: u32,
    pub feedback: ClinicianFeedback,
}

/// Everything known about one cycle: the reviews served while it was open
/// (since the service started) and its log entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct CycleTrail {
    pub cycle: CycleView,
    pub served_reviews: Vec<PendingReview>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub record: Option<CycleRecord>,
    pub entries: Vec<Envelope>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct PreferenceView {
    pub clinician_id: String,
    /// Scores in the context of the clinician's latest cycle, or a nominal
    /// context when there is none.
    pub scores: CategoryScores,
    pub state: PreferenceState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct RegretPoint {
    pub cycle_index: usize,
    pub cycle_id: String,
    pub status: CycleStatus,
    pub regret: Option<u32>,
    pub rolling_mean_10: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct RegretView {
    pub clinician_id: String,
    pub k_max: u32,
    pub cycles: Vec<RegretPoint>,
}

/// Either a server-side file or inline records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct DatasetLoadRequest {
    #[serde(default)]
    pub path: Option<PathBuf>,
    #[serde(default)]
    pub records: Option<Vec<TrajectoryRecord>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct EncounterSummary {
    pub encounter_id: String,
    pub records: usize,
    pub first_timestamp: f64,
    pub last_timestamp: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct DatasetLoadResponse {
    pub encounters: Vec<EncounterSummary>,
    pub skipped: Vec<SkippedRow>,
}

enum Slot {
    /// A worker or a request holds the machine.
    Busy,
    Reviewing(Box<CycleMachine>),
    Done {
        status: CycleStatus,
        note: Option<String>,
        failure: Option<String>,
    },
}

struct LiveCycle {
    encounter_id: String,
    slot: Slot,
    served: Vec<PendingReview>,
}

#[derive(Default)]
struct Tables {
    encounters: BTreeMap<String, Vec<TrajectoryRecord>>,
    cycles: BTreeMap<String, LiveCycle>,
    /// encounter -> open cycle
    active: BTreeMap<String, String>,
}

struct Shared {
    engine: Engine,
    tables: Mutex<Tables>,
    changed: Condvar,
}

#[derive(Clone)]
pub struct Service {
    shared: Arc<Shared>,
}

impl Service {
    pub fn new(engine: Engine) -> Self {
        Service {
            shared: Arc::new(Shared {
                engine,
                tables: Mutex::new(Tables::default()),
                changed: Condvar::new(),
            }),
        }
    }

    /// Scripted agents over an in-memory log.
    pub fn scripted(config: EngineConfig) -> Result<Self, ServiceError> {
        Ok(Service::new(Engine::scripted(config)?))
    }

    pub fn engine(&self) -> &Engine {
        &self.shared.engine
    }

    fn tables(&self) -> MutexGuard<'_, Tables> {
        self.shared.tables.lock().expect("service lock")
    }

    fn log(&self) -> MutexGuard<'_, LongTermLog> {
        self.shared.engine.log().lock().expect("log lock")
    }

    // Datasets -----------------------------------------------------------

    pub fn load_dataset(&self, req: DatasetLoadRequest) -> Result<DatasetLoadResponse, ServiceError> {
        let registry = self.engine().runtime().registry();
        let (records, skipped) = match (req.path, req.records) {
            (Some(path), None) => read_records(&path, registry).map_err(|e| ServiceError::BadRequest {
                message: e.to_string(),
                path: Some("path".into()),
            })?,
            (None, Some(records)) => {
                let ctx = ValidationContext::with_registry(registry);
                for (i, r) in records.iter().enumerate() {
                    check_value(&r.state, ctx).map_err(|e| ServiceError::invalid(&e, &format!("records[{i}].state")))?;
                    check_value(&r.settings, ctx)
                        .map_err(|e| ServiceError::invalid(&e, &format!("records[{i}].settings")))?;
                }
                (records, Vec::new())
            }
            _ => {
                return Err(ServiceError::BadRequest {
                    message: "exactly one of `path` and `records` is required".into(),
                    path: None,
                })
            }
        };
        let mut grouped: BTreeMap<String, Vec<TrajectoryRecord>> = BTreeMap::new();
        for r in records {
            grouped.entry(r.encounter_id.clone()).or_default().push(r);
        }
        let mut t = self.tables();
        let mut encounters = Vec::new();
        for (id, mut recs) in grouped {
            recs.sort_by(|a, b| a.state.timestamp.total_cmp(&b.state.timestamp));
            encounters.push(EncounterSummary {
                encounter_id: id.clone(),
                records: recs.len(),
                first_timestamp: recs[0].state.timestamp,
                last_timestamp: recs[recs.len() - 1].state.timestamp,
            });
            t.encounters.insert(id, recs);
        }
        Ok(DatasetLoadResponse { encounters, skipped })
    }

    // Cycle lifecycle ----------------------------------------------------

    /// Reserve a cycle id and begin the cycle on a worker thread.
    pub fn start_cycle(&self, encounter_id: &str, req: StartCycleRequest) -> Result<CycleView, ServiceError> {
        if req.clinician_id.trim().is_empty() {
            return Err(ServiceError::BadRequest {
                message: "clinician_id must be non-empty".into(),
                path: Some("clinician_id".into()),
            });
        }
        let mut t = self.tables();
        let records = t.encounters.get(encounter_id).ok_or_else(|| ServiceError::NotFound {
            what: "encounter",
            id: encounter_id.to_string(),
        })?;
        if let Some(open) = t.active.get(encounter_id) {
            return Err(ServiceError::Conflict(format!("encounter `{encounter_id}` already has open cycle `{open}`")));
        }
        let current = match req.window {
            None => records.last(),
            Some(w) => records
                .iter()
                .rev()
                .find(|r| r.state.timestamp >= w.start && r.state.timestamp <= w.end),
        }
        .cloned()
        .ok_or_else(|| ServiceError::BadRequest {
            message: "no record inside the requested window".into(),
            path: Some("window".into()),
        })?;
        let cycle_id = self.engine().next_cycle_id(encounter_id);
        if t.cycles.contains_key(&cycle_id) {
            return Err(ServiceError::Conflict(format!("cycle `{cycle_id}` exists but was never logged")));
        }
        let waveform = if req.waveform_enabled {
            current.state.waveform_ref.as_deref().and_then(resolve_waveform)
        } else {
            None
        };
        let input = CycleInput {
            encounter_id: encounter_id.to_string(),
            clinician_id: req.clinician_id,
            state: current.state,
            settings: current.settings,
            waveform,
        };
        t.active.insert(encounter_id.to_string(), cycle_id.clone());
        t.cycles.insert(
            cycle_id.clone(),
            LiveCycle {
                encounter_id: encounter_id.to_string(),
                slot: Slot::Busy,
                served: Vec::new(),
            },
        );
        drop(t);

        let svc = self.clone();
        let id = cycle_id.clone();
        std::thread::spawn(move || {
            let outcome = svc.engine().begin(input);
            svc.settle(&id, outcome);
        });
        Ok(CycleView {
            cycle_id,
            encounter_id: encounter_id.to_string(),
            status: CyclePhase::Running,
            review: None,
            note: None,
            failure: None,
        })
    }

    /// Store a machine that finished a step: publish its review, or close it.
    fn settle(&self, cycle_id: &str, outcome: Result<CycleMachine, EngineError>) {
        let slot = match outcome {
            Ok(m) if m.pending().is_some() => Slot::Reviewing(Box::new(m)),
            Ok(m) => match self.engine().close(m) {
                Ok(closed) => Slot::Done {
                    status: closed.record.status,
                    note: Some(closed.record.note),
                    failure: closed.record.failure,
                },
                Err(e) => Slot::Done {
                    status: CycleStatus::Failed,
                    note: None,
                    failure: Some(format!("closure: {e}")),
                },
            },
            Err(e) => Slot::Done {
                status: CycleStatus::Failed,
                note: None,
                failure: Some(e.to_string()),
            },
        };
        let mut t = self.tables();
        if let Some(live) = t.cycles.get_mut(cycle_id) {
            if let Slot::Reviewing(m) = &slot {
                live.served.extend(m.pending().cloned());
            }
            let done = matches!(slot, Slot::Done { .. });
            live.slot = slot;
            if done {
                let enc = live.encounter_id.clone();
                t.active.remove(&enc);
            }
        }
        drop(t);
        self.shared.changed.notify_all();
    }

    fn view(cycle_id: &str, live: &LiveCycle) -> CycleView {
        let mut v = CycleView {
            cycle_id: cycle_id.to_string(),
            encounter_id: live.encounter_id.clone(),
            status: CyclePhase::Running,
            review: None,
            note: None,
            failure: None,
        };
        match &live.slot {
            Slot::Busy => {}
            Slot::Reviewing(m) => {
                v.status = CyclePhase::Review;
                v.review = m.pending().cloned();
            }
            Slot::Done { status, note, failure } => {
                v.status = (*status).into();
                v.note = note.clone();
                v.failure = failure.clone();
            }
        }
        v
    }

    fn logged_view(&self, cycle_id: &str) -> Result<Option<(CycleView, CycleRecord)>, ServiceError> {
        let rec = self.log().cycle_record(cycle_id).map_err(|e| ServiceError::Internal(e.to_string()))?;
        Ok(rec.map(|r| {
            (
                CycleView {
                    cycle_id: cycle_id.to_string(),
                    encounter_id: r.encounter_id.clone(),
                    status: r.status.into(),
                    review: None,
                    note: Some(r.note.clone()),
                    failure: r.failure.clone(),
                },
                r,
            )
        }))
    }

    /// Current status of a cycle; the pending review while one is open.
    /// Polling has no side effects.
    pub fn get_pending_review(&self, cycle_id: &str) -> Result<CycleView, ServiceError> {
        if let Some(live) = self.tables().cycles.get(cycle_id) {
            return Ok(Self::view(cycle_id, live));
        }
        self.logged_view(cycle_id)?
            .map(|(v, _)| v)
            .ok_or_else(|| ServiceError::NotFound {
                what: "cycle",
                id: cycle_id.to_string(),
            })
    }

    /// Block until the cycle is at a review or resolved.
    pub fn wait_settled(&self, cycle_id: &str, timeout: Duration) -> Result<CycleView, ServiceError> {
        let deadline = Instant::now() + timeout;
        let mut t = self.tables();
        loop {
            match t.cycles.get(cycle_id) {
                Some(live) if matches!(live.slot, Slot::Busy) => {}
                Some(live) => return Ok(Self::view(cycle_id, live)),
                None => {
                    drop(t);
                    return self.get_pending_review(cycle_id);
                }
            }
            let left = deadline.saturating_duration_since(Instant::now());
            if left.is_zero() {
                return Err(ServiceError::Internal(format!("cycle `{cycle_id}` did not settle in time")));
            }
            t = self.shared.changed.wait_timeout(t, left).expect("service lock").0;
        }
    }

    /// Deliver feedback for the open round. The first submission for a round
    /// wins; any other gets a conflict.
    pub fn submit_feedback(&self, cycle_id: &str, sub: FeedbackSubmission) -> Result<CycleView, ServiceError> {
        let ctx = ValidationContext::with_registry(self.engine().runtime().registry());
        check_value(&sub.feedback, ctx).map_err(|e| ServiceError::invalid(&e, "feedback"))?;
        let mut machine = {
            let mut t = self.tables();
            let Some(live) = t.cycles.get_mut(cycle_id) else {
                drop(t);
                return match self.logged_view(cycle_id)? {
                    Some(_) => Err(ServiceError::Conflict(format!("cycle `{cycle_id}` is already resolved"))),
                    None => Err(ServiceError::NotFound {
                        what: "cycle",
                        id: cycle_id.to_string(),
                    }),
                };
            };
            match std::mem::replace(&mut live.slot, Slot::Busy) {
                Slot::Reviewing(m) if m.pending().is_some_and(|p| p.round == sub.round) => m,
                Slot::Reviewing(m) => {
                    let open = m.pending().map_or(0, |p| p.round);
                    live.slot = Slot::Reviewing(m);
                    return Err(ServiceError::Conflict(format!(
                        "round {} is not open for cycle `{cycle_id}` (open round {open})",
                        sub.round
                    )));
                }
                other => {
                    live.slot = other;
                    return Err(ServiceError::Conflict(format!("cycle `{cycle_id}` is not waiting for review")));
                }
            }
        };
        let outcome = self.engine().submit(&mut machine, sub.feedback).map(|_| *machine);
        self.settle(cycle_id, outcome);
        self.get_pending_review(cycle_id)
    }

    /// Served reviews plus the log entries of one cycle.
    pub fn trail(&self, cycle_id: &str) -> Result<CycleTrail, ServiceError> {
        let (cycle, served) = match self.tables().cycles.get(cycle_id) {
            Some(live) => (Some(Self::view(cycle_id, live)), live.served.clone()),
            None => (None, Vec::new()),
        };
        let logged = self.logged_view(cycle_id)?;
        let cycle = match (cycle, &logged) {
            (Some(c), _) => c,
            (None, Some((c, _))) => c.clone(),
            (None, None) => {
                return Err(ServiceError::NotFound {
                    what: "cycle",
                    id: cycle_id.to_string(),
                })
            }
        };
        let entries = self
            .log()
            .audit_trail(&cycle.encounter_id)
            .map_err(|e| ServiceError::Internal(e.to_string()))?
            .entries
            .into_iter()
            .filter(|e| e.payload.get("cycle_id").and_then(|v| v.as_str()) == Some(cycle_id))
            .collect();
        Ok(CycleTrail {
            cycle,
            served_reviews: served,
            record: logged.map(|(_, r)| r),
            entries,
        })
    }

    // Clinician views ----------------------------------------------------

    fn clinician_records(&self, clinician_id: &str) -> Result<Vec<CycleRecord>, ServiceError> {
        Ok(self
            .log()
            .cycle_records()
            .map_err(|e| ServiceError::Internal(e.to_string()))?
            .into_iter()
            .filter(|r| r.clinician_id == clinician_id)
            .collect())
    }

    pub fn preferences(&self, clinician_id: &str) -> Result<PreferenceView, ServiceError> {
        let config = self.engine().config();
        let state = self
            .log()
            .load_preference_state(clinician_id, config.bandit.params())
            .map_err(|e| ServiceError::Internal(e.to_string()))?;
        let x = match self.clinician_records(clinician_id)?.last() {
            Some(r) => r.context.feature_vector.clone(),
            None => {
                let nominal = PatientState::nominal(0.0);
                let settings = crate::contracts::VentilatorSettings::new("VC");
                config.bandit.featurizer().featurize(FeatureInputs {
                    state: &nominal,
                    settings: &settings,
                    phase: None,
                    asynchrony: false,
                    evidence_sufficient: true,
                })
            }
        };
        let scores = preference_scores(&state, &x).map_err(|e| ServiceError::Internal(e.to_string()))?;
        Ok(PreferenceView {
            clinician_id: clinician_id.to_string(),
            scores,
            state,
        })
    }

    /// Regret of the clinician's logged cycles, in log order.
    pub fn regret(&self, clinician_id: &str) -> Result<RegretView, ServiceError> {
        let k_max = self.engine().config().k_max;
        let records = self.clinician_records(clinician_id)?;
        let regrets: Vec<Option<u32>> = records.iter().map(|r| cycle_regret(r, k_max)).collect();
        let cycles = records
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let window: Vec<f64> = regrets[(i + 1).saturating_sub(ROLLING_WINDOW)..=i]
                    .iter()
                    .flatten()
                    .map(|&x| x as f64)
                    .collect();
                RegretPoint {
                    cycle_index: i + 1,
                    cycle_id: r.cycle_id.clone(),
                    status: r.status,
                    regret: regrets[i],
                    rolling_mean_10: (!window.is_empty()).then(|| window.iter().sum::<f64>() / window.len() as f64),
                }
            })
            .collect();
        Ok(RegretView {
            clinician_id: clinician_id.to_string(),
            k_max,
            cycles,
        })
    }
}

#[cfg(test)]
mod tests;
