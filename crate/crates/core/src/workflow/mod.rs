//! The adjustment-cycle state machine.
//!
//! A cycle runs detection, phase goals and the hold/adjust gate once, then
//! loops strategy, mode selection, parameter planning, safety and clinician
//! review until a proposal is accepted or the round budget runs out. A
//! rejection is routed by the reflect agent to the earliest implicated
//! stage; outputs of stages upstream of it are reused from the
//! [`StageCache`].
//!
//! [`CycleMachine`] suspends at every review checkpoint, so a caller can
//! hold many cycles open at once and resume each when feedback arrives.
//! [`Engine::close`] runs the note generator, applies the single bandit
//! update of an accepted cycle and appends everything to the log in one
//! atomic batch.

pub mod rules;

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::agents::{AgentError, AgentRuntime};
use crate::bandit::{apply_signal, bandit_update, preference_scores, BanditConfig, BanditError, FeatureInputs, PreferenceState};
use crate::contracts::{
    check_value, ArmScore, Branch, BranchDecision, CategoryScores, ClinicianFeedback, Constraint, ContractError,
    CycleContext, CycleEvidence, CycleRecord, CycleStatus, DetectionRequest, GateRequest, ModeDecision, ModeRequest,
    NoteOutput, NoteRequest, PatientState, PhaseGoals, PhaseRequest, PlanRequest, PreferenceSignal, Proposal,
    ReflectRequest, ResumeStage, SafetyReport, StateSummary, StrategyChoice, StrategyRequest, ValidationContext,
    ValidationErrors, VentilatorSettings, WaveformCues, WaveformSegment,
};
use crate::memory::{LongTermLog, MemoryError, NoteEntry, PendingEntry, PreferenceSnapshot, DEFAULT_CONTEXT_NOTES};
use crate::safety::{check_proposal, constraints_for};

/// Number of top arms shown with each proposal.
pub const PREFERENCE_CONTEXT_ARMS: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EngineConfig {
    pub k_max: u32,
    pub enable_waveform: bool,
    /// When false, candidates are ranked with uniform scores. The
    /// clinician's state is still updated and persisted.
    pub enable_preference: bool,
    /// Seeds the stochastic pieces around the engine (fault injection,
    /// simulated clinicians). The engine itself is deterministic.
    pub seed: u64,
    /// Replans allowed when every candidate of a round fails safety.
    pub max_safety_replans: u32,
    pub context_notes: usize,
    pub bandit: BanditConfig,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            k_max: 5,
            enable_waveform: true,
            enable_preference: true,
            seed: 0,
            max_safety_replans: 3,
            context_notes: DEFAULT_CONTEXT_NOTES,
            bandit: BanditConfig::default(),
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<(), EngineError> {
        if self.k_max == 0 {
            return Err(EngineError::Config("k_max must be >= 1".into()));
        }
        Ok(())
    }
}

/// What a cycle starts from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct CycleInput {
    pub encounter_id: String,
    pub clinician_id: String,
    pub state: PatientState,
    pub settings: VentilatorSettings,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub waveform: Option<WaveformSegment>,
}

/// Evidence shown next to a proposal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct EvidenceSummary {
    pub summary: StateSummary,
    pub goals: PhaseGoals,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cues: Option<WaveformCues>,
    pub strategy: StrategyChoice,
    pub mode: ModeDecision,
}

/// A proposal waiting for the clinician.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct PendingReview {
    pub cycle_id: String,
    pub round: u32,
    pub k_max: u32,
    pub current_settings: VentilatorSettings,
    pub proposal: Proposal,
    pub resulting_settings: VentilatorSettings,
    pub safety: SafetyReport,
    pub preference_context: Vec<ArmScore>,
    pub evidence: EvidenceSummary,
}

#[derive(Debug, thiserror::Error)]
pub enum EngineError {
    #[error("cycle {0} is not waiting for review")]
    NotPending(String),
    #[error("cycle {0} is not resolved")]
    NotResolved(String),
    #[error("invalid feedback: {0}")]
    InvalidFeedback(ValidationErrors),
    #[error("invalid input: {0}")]
    InvalidInput(ValidationErrors),
    #[error(transparent)]
    Memory(#[from] MemoryError),
    #[error(transparent)]
    Bandit(#[from] BanditError),
    #[error(transparent)]
    Contract(#[from] ContractError),
    #[error("invalid engine configuration: {0}")]
    Config(String),
}

/// Validated stage outputs of the current cycle.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StageCache {
    pub cues: Option<WaveformCues>,
    pub summary: Option<StateSummary>,
    pub goals: Option<PhaseGoals>,
    pub branch: Option<BranchDecision>,
    pub strategy: Option<StrategyChoice>,
    pub mode: Option<ModeDecision>,
}

impl StageCache {
    /// Drop `stage` and everything downstream of it.
    pub fn invalidate_from(&mut self, stage: ResumeStage) {
        match stage {
            ResumeStage::Strategy => {
                self.strategy = None;
                self.mode = None;
            }
            ResumeStage::ModeSelect => self.mode = None,
            ResumeStage::ParameterPlan => {}
        }
    }
}

/// Where a cycle stands.
#[derive(Debug, Clone, PartialEq)]
pub enum MachineState {
    Reviewing(Box<PendingReview>),
    Resolved { status: CycleStatus, failure: Option<String> },
}

/// One cycle, suspended at review or resolved and waiting for closure.
#[derive(Debug, Clone)]
pub struct CycleMachine {
    cycle_id: String,
    input: CycleInput,
    k_max: u32,
    enable_waveform: bool,
    max_safety_replans: u32,
    context: CycleContext,
    scores: CategoryScores,
    cache: StageCache,
    constraints: Vec<Constraint>,
    trace: Vec<TraceItem>,
    evidence: CycleEvidence,
    state: MachineState,
}

type TraceItem = crate::contracts::TraceEntry;

enum Halt {
    Infeasible(String),
    Failed(String),
}

impl From<AgentError> for Halt {
    fn from(e: AgentError) -> Self {
        match e {
            AgentError::Infeasible { role, message } => Halt::Infeasible(format!("{role}: {message}")),
            other => Halt::Failed(other.to_string()),
        }
    }
}

impl CycleMachine {
    pub fn cycle_id(&self) -> &str {
        &self.cycle_id
    }

    pub fn encounter_id(&self) -> &str {
        &self.input.encounter_id
    }

    pub fn clinician_id(&self) -> &str {
        &self.input.clinician_id
    }

    pub fn state(&self) -> &MachineState {
        &self.state
    }

    pub fn pending(&self) -> Option<&PendingReview> {
        match &self.state {
            MachineState::Reviewing(p) => Some(p),
            MachineState::Resolved { .. } => None,
        }
    }

    pub fn status(&self) -> Option<CycleStatus> {
        match &self.state {
            MachineState::Resolved { status, .. } => Some(*status),
            MachineState::Reviewing(_) => None,
        }
    }

    pub fn rounds(&self) -> u32 {
        self.trace.len() as u32
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    pub fn cache(&self) -> &StageCache {
        &self.cache
    }

    fn resolve(&mut self, status: CycleStatus, failure: Option<String>) {
        self.state = MachineState::Resolved { status, failure };
    }

    fn halt(&mut self, h: Halt) {
        match h {
            // Nothing (more) can be proposed under the accumulated
            // constraints: the feasible set is exhausted, even when that
            // happens before the first round.
            Halt::Infeasible(msg) => {
                tracing::info!(cycle = %self.cycle_id, %msg, "no further feasible proposal");
                self.resolve(CycleStatus::Exhausted, None)
            }
            Halt::Failed(msg) => self.resolve(CycleStatus::Failed, Some(msg)),
        }
    }

    fn refresh_cues(&mut self, rt: &AgentRuntime) -> Result<(), Halt> {
        if !self.enable_waveform {
            return Ok(());
        }
        if let Some(segment) = &self.input.waveform {
            let cues = rt.invoke(segment)?;
            self.evidence.cues = Some(cues.clone());
            self.cache.cues = Some(cues);
        }
        Ok(())
    }

    /// Detection through the gate, then the first round.
    fn run_front(&mut self, rt: &AgentRuntime, featurize: &dyn Fn(&CycleMachine) -> Vec<f64>, pref: &PreferenceState, enable_pref: bool) -> Result<(), Halt> {
        self.refresh_cues(rt)?;
        let summary = rt.invoke(&DetectionRequest {
            state: self.input.state.clone(),
            cues: self.cache.cues.clone(),
        })?;
        self.evidence.summary = Some(summary.clone());
        self.cache.summary = Some(summary.clone());
        let goals = rt.invoke(&PhaseRequest {
            state: self.input.state.clone(),
            settings: self.input.settings.clone(),
            summary: summary.clone(),
        })?;
        self.evidence.goals = Some(goals.clone());
        self.cache.goals = Some(goals.clone());

        self.context.feature_vector = featurize(self);
        if enable_pref {
            self.scores = preference_scores(pref, &self.context.feature_vector).map_err(|e| Halt::Failed(e.to_string()))?;
        }

        let branch = rt.invoke(&GateRequest { summary, goals })?;
        self.evidence.branch = Some(branch.clone());
        self.cache.branch = Some(branch.clone());
        if branch.branch == Branch::Hold {
            self.resolve(CycleStatus::Hold, None);
            return Ok(());
        }
        self.advance(rt, ResumeStage::Strategy)
    }

    /// Run from `from` down to the next review checkpoint.
    fn advance(&mut self, rt: &AgentRuntime, mut from: ResumeStage) -> Result<(), Halt> {
        let summary = self.cache.summary.clone().expect("detection ran");
        let goals = self.cache.goals.clone().expect("phase goals ran");
        let current = self.input.settings.clone();
        let round = self.trace.len() as u32 + 1;
        for _ in 0..=self.max_safety_replans {
            self.cache.invalidate_from(from);
            let strategy = match self.cache.strategy.clone() {
                Some(s) => s,
                None => {
                    let s = rt.invoke(&StrategyRequest {
                        summary: summary.clone(),
                        goals: goals.clone(),
                        scores: self.scores.clone(),
                        constraints: self.constraints.clone(),
                    })?;
                    self.evidence.strategies.push(s.clone());
                    self.cache.strategy = Some(s.clone());
                    s
                }
            };
            let mode = match self.cache.mode.clone() {
                Some(m) => m,
                None => {
                    let m = rt.invoke(&ModeRequest {
                        strategy: strategy.strategy,
                        current_settings: current.clone(),
                        cues: self.cache.cues.clone(),
                        constraints: self.constraints.clone(),
                    })?;
                    self.evidence.mode_decisions.push(m.clone());
                    self.cache.mode = Some(m.clone());
                    m
                }
            };
            let plan = rt.invoke(&PlanRequest {
                cycle_id: self.cycle_id.clone(),
                round_index: round,
                strategy: strategy.strategy,
                goals: goals.clone(),
                current_settings: current.clone(),
                mode: mode.clone(),
                scores: self.scores.clone(),
                constraints: self.constraints.clone(),
            })?;

            let mut failed = Vec::new();
            for mut candidate in plan.candidates {
                candidate.cycle_id = self.cycle_id.clone();
                candidate.round_index = round;
                if !self.constraints.iter().all(|c| c.is_satisfied_by(&candidate, &current)) {
                    continue;
                }
                let report = check_proposal(&candidate, &current, rt.registry());
                if !report.passed() {
                    failed.push((candidate, report));
                    continue;
                }
                let resulting = rt
                    .registry()
                    .apply(&current, &candidate)
                    .map_err(|e| Halt::Failed(e.to_string()))?;
                self.state = MachineState::Reviewing(Box::new(PendingReview {
                    cycle_id: self.cycle_id.clone(),
                    round,
                    k_max: self.k_max,
                    current_settings: current.clone(),
                    proposal: candidate,
                    resulting_settings: resulting,
                    safety: report,
                    preference_context: self.scores.top(PREFERENCE_CONTEXT_ARMS),
                    evidence: EvidenceSummary {
                        summary: summary.clone(),
                        goals: goals.clone(),
                        cues: self.cache.cues.clone(),
                        strategy,
                        mode,
                    },
                }));
                return Ok(());
            }

            if failed.is_empty() {
                return Err(Halt::Infeasible("no candidate satisfies the revision constraints".into()));
            }
            let before = self.constraints.len();
            for (candidate, report) in failed {
                for c in constraints_for(&report, &candidate, &current) {
                    if !self.constraints.contains(&c) {
                        self.constraints.push(c);
                    }
                }
                self.evidence.safety_rejections.push(report);
            }
            if self.constraints.len() == before {
                return Err(Halt::Infeasible("safety failures yield no new constraint".into()));
            }
            from = if self.constraints[before..].iter().any(|c| matches!(c, Constraint::ForbidMode { .. })) {
                ResumeStage::ModeSelect
            } else {
                ResumeStage::ParameterPlan
            };
        }
        Err(Halt::Infeasible("safety replan budget spent".into()))
    }

    /// Deliver the clinician's answer to the pending proposal.
    pub fn submit(&mut self, rt: &AgentRuntime, feedback: ClinicianFeedback) -> Result<(), EngineError> {
        check_value(&feedback, ValidationContext::default()).map_err(EngineError::InvalidFeedback)?;
        let MachineState::Reviewing(pending) = &self.state else {
            return Err(EngineError::NotPending(self.cycle_id.clone()));
        };
        let pending = (**pending).clone();
        let accept = feedback.is_accept();
        self.trace.push(TraceItem {
            proposal: pending.proposal.clone(),
            feedback: feedback.clone(),
            safety: pending.safety,
            preference_context: pending.preference_context,
        });
        if accept {
            self.resolve(CycleStatus::Accepted, None);
            return Ok(());
        }
        if self.trace.len() as u32 >= self.k_max {
            self.resolve(CycleStatus::Exhausted, None);
            return Ok(());
        }
        if let Err(h) = self.revise(rt, feedback, pending.proposal) {
            self.halt(h);
        }
        Ok(())
    }

    fn revise(&mut self, rt: &AgentRuntime, feedback: ClinicianFeedback, rejected: Proposal) -> Result<(), Halt> {
        let directive = rt.invoke(&ReflectRequest {
            feedback,
            rejected,
            current_settings: self.input.settings.clone(),
        })?;
        for c in &directive.constraints {
            if !self.constraints.contains(c) {
                self.constraints.push(c.clone());
            }
        }
        self.evidence.directives.push(directive.clone());
        if directive.refresh_waveform {
            self.refresh_cues(rt)?;
        }
        self.advance(rt, directive.resume_stage)
    }

    fn accepted_settings(&self, rt: &AgentRuntime) -> Option<VentilatorSettings> {
        match self.status() {
            Some(CycleStatus::Accepted) => self
                .trace
                .last()
                .and_then(|e| rt.registry().apply(&self.input.settings, &e.proposal).ok()),
            _ => None,
        }
    }
}

/// Answers review checkpoints synchronously.
pub trait Reviewer {
    fn review(&mut self, pending: &PendingReview) -> ClinicianFeedback;
}

impl<F: FnMut(&PendingReview) -> ClinicianFeedback> Reviewer for F {
    fn review(&mut self, pending: &PendingReview) -> ClinicianFeedback {
        self(pending)
    }
}

/// Result of closing a cycle.
#[derive(Debug, Clone, PartialEq)]
pub struct ClosedCycle {
    pub record: CycleRecord,
    /// The clinician's state after closure, when closure changed it.
    pub preference: Option<PreferenceState>,
    /// Log offsets of the appended entries.
    pub offsets: Vec<u64>,
}

/// Drives cycles against an agent runtime and a shared log.
pub struct Engine {
    runtime: Arc<AgentRuntime>,
    log: Arc<Mutex<LongTermLog>>,
    config: EngineConfig,
    bandit_updates: AtomicU64,
}

impl Engine {
    pub fn new(runtime: Arc<AgentRuntime>, log: Arc<Mutex<LongTermLog>>, config: EngineConfig) -> Result<Self, EngineError> {
        config.validate()?;
        Ok(Engine {
            runtime,
            log,
            config,
            bandit_updates: AtomicU64::new(0),
        })
    }

    /// Engine on scripted agents and an in-memory log.
    pub fn scripted(config: EngineConfig) -> Result<Self, EngineError> {
        Engine::new(
            Arc::new(AgentRuntime::scripted()),
            Arc::new(Mutex::new(LongTermLog::in_memory())),
            config,
        )
    }

    pub fn runtime(&self) -> &AgentRuntime {
        &self.runtime
    }

    pub fn log(&self) -> &Arc<Mutex<LongTermLog>> {
        &self.log
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    /// Bandit updates applied by this engine since it was built.
    pub fn bandit_updates(&self) -> u64 {
        self.bandit_updates.load(Ordering::SeqCst)
    }

    fn validation_ctx(&self) -> ValidationContext<'_> {
        ValidationContext {
            registry: Some(self.runtime.registry()),
            max_updates: ValidationContext::default().max_updates,
            k_max: Some(self.config.k_max),
        }
    }

    /// Id the next cycle of `encounter` will get: one more than the cycles
    /// already logged for it.
    pub fn next_cycle_id(&self, encounter: &str) -> String {
        let n = self.log.lock().expect("log lock").cycle_offsets(encounter).len();
        format!("{encounter}-c{n}")
    }

    /// Start a cycle and run it to its first review checkpoint, or to
    /// resolution when the gate holds or an agent fails.
    pub fn begin(&self, input: CycleInput) -> Result<CycleMachine, EngineError> {
        let ctx = ValidationContext::with_registry(self.runtime.registry());
        check_value(&input.state, ctx).map_err(EngineError::InvalidInput)?;
        check_value(&input.settings, ctx).map_err(EngineError::InvalidInput)?;
        if let Some(w) = &input.waveform {
            check_value(w, ctx).map_err(EngineError::InvalidInput)?;
        }
        let (n, short, refs, pref) = {
            let log = self.log.lock().expect("log lock");
            let refs = log.cycle_offsets(&input.encounter_id);
            (
                refs.len(),
                log.context_window(&input.encounter_id, self.config.context_notes),
                refs,
                log.load_preference_state(&input.clinician_id, self.config.bandit.params())?,
            )
        };
        let mut m = CycleMachine {
            cycle_id: format!("{}-c{n}", input.encounter_id),
            k_max: self.config.k_max,
            enable_waveform: self.config.enable_waveform,
            max_safety_replans: self.config.max_safety_replans,
            context: CycleContext {
                current_state: input.state.clone(),
                current_settings: input.settings.clone(),
                short_term: short.notes,
                long_term_refs: refs,
                feature_vector: Vec::new(),
            },
            input,
            scores: CategoryScores::uniform(),
            cache: StageCache::default(),
            constraints: Vec::new(),
            trace: Vec::new(),
            evidence: CycleEvidence::default(),
            state: MachineState::Resolved {
                status: CycleStatus::Failed,
                failure: Some("not started".into()),
            },
        };
        let featurizer = self.config.bandit.featurizer();
        let featurize = |m: &CycleMachine| {
            featurizer.featurize(FeatureInputs {
                state: &m.input.state,
                settings: &m.input.settings,
                phase: m.cache.goals.as_ref().map(|g| g.phase),
                asynchrony: m.cache.cues.as_ref().is_some_and(WaveformCues::has_asynchrony),
                evidence_sufficient: m.cache.summary.as_ref().is_some_and(|s| s.evidence_sufficient),
            })
        };
        m.context.feature_vector = featurize(&m);
        if let Err(h) = m.run_front(&self.runtime, &featurize, &pref, self.config.enable_preference) {
            m.halt(h);
        }
        Ok(m)
    }

    pub fn submit(&self, machine: &mut CycleMachine, feedback: ClinicianFeedback) -> Result<(), EngineError> {
        machine.submit(&self.runtime, feedback)
    }

    /// Render the note, apply the bandit update of an accepted cycle and
    /// persist record, note and snapshot as one batch. Nothing is written
    /// when any step fails.
    pub fn close(&self, machine: CycleMachine) -> Result<ClosedCycle, EngineError> {
        let MachineState::Resolved { status, failure } = machine.state.clone() else {
            return Err(EngineError::NotResolved(machine.cycle_id));
        };
        let accepted_settings = machine.accepted_settings(&self.runtime);
        let (mut status, mut failure) = (status, failure);
        if status == CycleStatus::Accepted && accepted_settings.is_none() {
            status = CycleStatus::Failed;
            failure = Some("accepted proposal does not apply to the current settings".into());
        }
        let req = NoteRequest {
            cycle_id: machine.cycle_id.clone(),
            encounter_id: machine.input.encounter_id.clone(),
            clinician_id: machine.input.clinician_id.clone(),
            status,
            branch: machine.cache.branch.clone(),
            trace: machine.trace.clone(),
            accepted_settings: accepted_settings.clone(),
            current_settings: machine.input.settings.clone(),
        };
        let NoteOutput { note, signal } = match self.runtime.invoke(&req) {
            Ok(out) => out,
            Err(e) => {
                status = CycleStatus::Failed;
                failure = Some(format!("note generation: {e}"));
                NoteOutput {
                    note: format!("Cycle {} failed during closure: {e}.", machine.cycle_id),
                    signal: PreferenceSignal::default(),
                }
            }
        };
        let record = CycleRecord {
            cycle_id: machine.cycle_id.clone(),
            encounter_id: machine.input.encounter_id.clone(),
            clinician_id: machine.input.clinician_id.clone(),
            context: machine.context,
            rounds: machine.trace.len() as u32,
            trace: machine.trace,
            accepted_settings: if status == CycleStatus::Accepted { accepted_settings } else { None },
            note: note.clone(),
            preference_signal: signal,
            status,
            evidence: machine.evidence,
            failure,
        };
        check_value(&record, self.validation_ctx()).map_err(|e| EngineError::Contract(ContractError::Invalid(e)))?;

        let mut log = self.log.lock().expect("log lock");
        let x = &record.context.feature_vector;
        let params = self.config.bandit.params();
        let preference = match record.status {
            CycleStatus::Accepted => {
                let before = log.load_preference_state(&record.clinician_id, params)?;
                Some(bandit_update(
                    &before,
                    x,
                    record.accepted_settings.as_ref(),
                    &record.trace,
                    &record.preference_signal,
                )?)
            }
            CycleStatus::Hold if self.config.bandit.apply_hold_updates && !record.preference_signal.is_empty() => {
                let before = log.load_preference_state(&record.clinician_id, params)?;
                Some(apply_signal(&before, x, &record.preference_signal)?)
            }
            _ => None,
        };
        let ts = record.context.current_state.timestamp;
        let mut batch = vec![
            PendingEntry::cycle_record(&record),
            PendingEntry::note(
                &NoteEntry {
                    cycle_id: record.cycle_id.clone(),
                    encounter_id: record.encounter_id.clone(),
                    clinician_id: record.clinician_id.clone(),
                    note,
                },
                ts,
            ),
        ];
        if let Some(state) = &preference {
            batch.push(PendingEntry::snapshot(
                &PreferenceSnapshot {
                    clinician_id: record.clinician_id.clone(),
                    encounter_id: record.encounter_id.clone(),
                    cycle_id: record.cycle_id.clone(),
                    state: state.clone(),
                },
                ts,
            ));
        }
        let offsets = log.append_batch(batch)?;
        drop(log);
        if record.status == CycleStatus::Accepted {
            self.bandit_updates.fetch_add(1, Ordering::SeqCst);
        }
        Ok(ClosedCycle {
            record,
            preference,
            offsets,
        })
    }

    /// Run a whole cycle with a synchronous reviewer.
    pub fn run_cycle(&self, input: CycleInput, reviewer: &mut dyn Reviewer) -> Result<ClosedCycle, EngineError> {
        let mut m = self.begin(input)?;
        while let Some(p) = m.pending().cloned() {
            let fb = reviewer.review(&p);
            m.submit(&self.runtime, fb)?;
        }
        self.close(m)
    }
}
