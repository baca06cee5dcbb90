//! Schema validation for untyped payloads.
//!
//! Validation runs in two passes: a closed structural decode (unknown fields,
//! wrong types and missing fields are reported with their JSON path) and then
//! the invariant checks each type declares. Validation never panics; every
//! failure comes back as a list of [`FieldError`]s.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use schemars::JsonSchema;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::messages::*;
use super::registry::ModeRegistry;
use super::types::*;
use super::ContractError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldError {
    pub path: String,
    pub expected: String,
    pub found: String,
}

impl fmt::Display for FieldError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: expected {}, found {}", self.path, self.expected, self.found)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ValidationErrors(pub Vec<FieldError>);

impl ValidationErrors {
    pub fn paths(&self) -> Vec<&str> {
        self.0.iter().map(|e| e.path.as_str()).collect()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl fmt::Display for ValidationErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, e) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str("; ")?;
            }
            write!(f, "{e}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ValidationErrors {}

/// Context needed by invariants that depend on configuration.
#[derive(Debug, Clone, Copy)]
pub struct ValidationContext<'a> {
    pub registry: Option<&'a ModeRegistry>,
    /// Compactness bound on `setting_updates`.
    pub max_updates: usize,
    pub k_max: Option<u32>,
}

impl Default for ValidationContext<'_> {
    fn default() -> Self {
        ValidationContext {
            registry: None,
            max_updates: 3,
            k_max: None,
        }
    }
}

impl<'a> ValidationContext<'a> {
    pub fn with_registry(registry: &'a ModeRegistry) -> Self {
        ValidationContext {
            registry: Some(registry),
            ..Default::default()
        }
    }
}

/// Accumulates invariant violations at nested paths.
pub struct Checker<'c> {
    pub ctx: ValidationContext<'c>,
    path: Vec<String>,
    errors: Vec<FieldError>,
}

impl<'c> Checker<'c> {
    pub fn new(ctx: ValidationContext<'c>) -> Self {
        Checker {
            ctx,
            path: Vec::new(),
            errors: Vec::new(),
        }
    }

    fn path_with(&self, leaf: &str) -> String {
        let mut out = String::new();
        for seg in self.path.iter().map(String::as_str).chain(std::iter::once(leaf)) {
            if seg.is_empty() {
                continue;
            }
            if seg.starts_with('[') || out.is_empty() {
                out.push_str(seg);
            } else {
                out.push('.');
                out.push_str(seg);
            }
        }
        if out.is_empty() {
            ".".to_string()
        } else {
            out
        }
    }

    pub fn fail(&mut self, leaf: &str, expected: impl Into<String>, found: impl Into<String>) {
        let path = self.path_with(leaf);
        self.errors.push(FieldError {
            path,
            expected: expected.into(),
            found: found.into(),
        });
    }

    pub fn nested<T: Contract + ?Sized>(&mut self, seg: impl Into<String>, value: &T) {
        self.path.push(seg.into());
        value.check(self);
        self.path.pop();
    }

    fn finite(&mut self, leaf: &str, v: f64) -> bool {
        if !v.is_finite() {
            self.fail(leaf, "finite number", v.to_string());
            false
        } else {
            true
        }
    }

    fn into_result(self) -> Result<(), ValidationErrors> {
        if self.errors.is_empty() {
            Ok(())
        } else {
            Err(ValidationErrors(self.errors))
        }
    }
}

/// A closed, schema-described payload type with invariants.
pub trait Contract: Serialize + DeserializeOwned + JsonSchema {
    fn check(&self, _c: &mut Checker<'_>) {}
}

/// Decode and validate `payload` as a `T`.
pub fn validate<T: Contract>(payload: &Value, ctx: ValidationContext<'_>) -> Result<T, ValidationErrors> {
    let value: T = serde_path_to_error::deserialize(payload).map_err(|err| {
        let path = err.path().to_string();
        let inner = err.into_inner().to_string();
        let expected = if inner.contains("unknown field") {
            "no unknown fields (closed contract)".to_string()
        } else {
            "value matching schema".to_string()
        };
        ValidationErrors(vec![FieldError {
            path,
            expected,
            found: inner,
        }])
    })?;
    check_value(&value, ctx)?;
    Ok(value)
}

/// Run only the invariant checks on an already typed value.
pub fn check_value<T: Contract>(value: &T, ctx: ValidationContext<'_>) -> Result<(), ValidationErrors> {
    let mut c = Checker::new(ctx);
    value.check(&mut c);
    c.into_result()
}

impl Contract for PatientState {
    fn check(&self, c: &mut Checker<'_>) {
        for (name, v) in self.numeric_fields() {
            if let Some(v) = v {
                c.finite(name, v);
            }
        }
        if self.timestamp < 0.0 {
            c.fail("timestamp", ">= 0", self.timestamp.to_string());
        }
        if let Some(s) = self.spo2 {
            if !(0.0..=100.0).contains(&s) {
                c.fail("spo2", "percent in [0,100]", s.to_string());
            }
        }
        if !(self.weight_kg > 0.0) {
            c.fail("weight_kg", "> 0", self.weight_kg.to_string());
        }
    }
}

impl Contract for VentilatorSettings {
    fn check(&self, c: &mut Checker<'_>) {
        for (p, v) in self.present() {
            c.finite(p.as_str(), v);
        }
        if let Some(f) = self.fio2 {
            if !(21.0..=100.0).contains(&f) {
                c.fail("fio2", "percent in [21,100]", f.to_string());
            }
        }
        if let Some(registry) = c.ctx.registry {
            match registry.mode(&self.mode) {
                None => c.fail("mode", "registered mode", self.mode.to_string()),
                Some(spec) => {
                    for (p, v) in self.present() {
                        match spec.bounds.get(&p) {
                            None => c.fail(p.as_str(), format!("absent (inapplicable in {})", self.mode), v.to_string()),
                            Some(b) if !b.contains(v) => {
                                c.fail(p.as_str(), format!("value in [{},{}]", b.min, b.max), v.to_string())
                            }
                            _ => {}
                        }
                    }
                }
            }
        }
    }
}

impl Contract for WaveformCues {
    fn check(&self, c: &mut Checker<'_>) {
        if !(0.0..=1.0).contains(&self.uncertainty) {
            c.fail("uncertainty", "value in [0,1]", self.uncertainty.to_string());
        }
        if self.asynchrony_patterns.is_empty() {
            c.fail("asynchrony_patterns", "at least one pattern (or `none`)", "empty set");
        }
        if self.asynchrony_patterns.contains(&AsynchronyPattern::None) && self.asynchrony_patterns.len() > 1 {
            c.fail("asynchrony_patterns", "`none` alone", format!("{:?}", self.asynchrony_patterns));
        }
    }
}

const CUE_FIELDS: [&str; 5] = [
    "quality",
    "asynchrony_patterns",
    "suspicious_events",
    "observed_state",
    "uncertainty",
];

const STATE_FIELDS: [&str; 9] = [
    "spo2",
    "heart_rate",
    "map",
    "ph",
    "paco2",
    "pao2",
    "tidal_volume_obs",
    "resp_rate_obs",
    "weight_kg",
];

fn valid_evidence_ref(r: &str) -> bool {
    match r.split_once('.') {
        Some(("state", f)) => STATE_FIELDS.contains(&f),
        Some(("cues", f)) => CUE_FIELDS.contains(&f),
        _ => false,
    }
}

impl Contract for StateSummary {
    fn check(&self, c: &mut Checker<'_>) {
        for (i, a) in self.abnormalities.iter().enumerate() {
            let leaf = format!("abnormalities[{i}].evidence");
            if a.evidence.is_empty() {
                c.fail(&leaf, "at least one evidence reference", "empty list");
            }
            for r in &a.evidence {
                if !valid_evidence_ref(r) {
                    c.fail(&leaf, "reference into state.* or cues.*", r.clone());
                }
            }
        }
    }
}

impl Contract for PhaseGoals {
    fn check(&self, c: &mut Checker<'_>) {
        if self.secondary_goals.contains(&self.primary_goal) {
            c.fail("secondary_goals", "must not contain primary_goal", format!("{:?}", self.primary_goal));
        }
    }
}

impl Contract for BranchDecision {
    fn check(&self, c: &mut Checker<'_>) {
        if self.reason.trim().is_empty() {
            c.fail("reason", "non-empty required", "empty string");
        }
    }
}

impl Contract for Proposal {
    fn check(&self, c: &mut Checker<'_>) {
        if self.cycle_id.is_empty() {
            c.fail("cycle_id", "non-empty", "empty string");
        }
        if self.round_index < 1 {
            c.fail("round_index", ">= 1", self.round_index.to_string());
        }
        if self.setting_updates.is_empty() && self.mode_change.is_none() {
            c.fail("setting_updates", "non-empty unless mode_change present", "empty map");
        }
        if self.setting_updates.len() > c.ctx.max_updates {
            c.fail(
                "setting_updates",
                format!("compactness bound |updates| <= {}", c.ctx.max_updates),
                format!("{} updates", self.setting_updates.len()),
            );
        }
        for (p, v) in &self.setting_updates {
            c.finite(&format!("setting_updates.{p}"), *v);
        }
        if self.category_tags.is_empty() {
            c.fail("category_tags", "non-empty subset of the 12 categories", "empty set");
        }
        if let (Some(registry), Some(m)) = (c.ctx.registry, &self.mode_change) {
            if !registry.contains(m) {
                c.fail("mode_change", "registered mode", m.to_string());
            }
        }
    }
}

impl Contract for ClinicianFeedback {
    fn check(&self, c: &mut Checker<'_>) {
        if self.decision == Decision::Reject && self.reason_category.is_none() {
            c.fail("reason_category", "present when decision is reject", "absent");
        }
    }
}

impl Contract for SafetyReport {
    fn check(&self, c: &mut Checker<'_>) {
        let should_fail = !self.violations.is_empty();
        if should_fail != (self.verdict == Verdict::Fail) {
            c.fail("verdict", "fail iff violations non-empty", format!("{:?}", self.verdict));
        }
    }
}

impl Contract for PreferenceSignal {
    fn check(&self, c: &mut Checker<'_>) {
        let overlap: BTreeSet<_> = self
            .evidenced_by_accept
            .intersection(&self.evidenced_only_by_reject)
            .collect();
        if !overlap.is_empty() {
            c.fail("evidenced_only_by_reject", "disjoint from evidenced_by_accept", format!("{overlap:?}"));
        }
    }
}

impl Contract for CycleContext {
    fn check(&self, c: &mut Checker<'_>) {
        c.nested("current_state", &self.current_state);
        c.nested("current_settings", &self.current_settings);
        if self.feature_vector.len() != FEATURE_DIM {
            c.fail(
                "feature_vector",
                format!("dimension {FEATURE_DIM}"),
                format!("dimension {}", self.feature_vector.len()),
            );
        }
        for (i, v) in self.feature_vector.iter().enumerate() {
            c.finite(&format!("feature_vector[{i}]"), *v);
        }
    }
}

impl Contract for TraceEntry {
    fn check(&self, c: &mut Checker<'_>) {
        c.nested("proposal", &self.proposal);
        c.nested("feedback", &self.feedback);
        c.nested("safety", &self.safety);
    }
}

impl Contract for CycleRecord {
    fn check(&self, c: &mut Checker<'_>) {
        c.nested("context", &self.context);
        for (i, e) in self.trace.iter().enumerate() {
            c.nested(format!("trace[{i}]"), e);
        }
        c.nested("preference_signal", &self.preference_signal);
        if self.rounds as usize != self.trace.len() {
            c.fail("rounds", format!("equal to trace length {}", self.trace.len()), self.rounds.to_string());
        }
        if let Some(k_max) = c.ctx.k_max {
            if self.trace.len() > k_max as usize {
                c.fail("trace", format!("at most K_max={k_max} rounds"), self.trace.len().to_string());
            }
        }
        // Only the final round may be an accept.
        if let Some(i) = self.trace.iter().position(|e| e.feedback.is_accept()) {
            if i + 1 != self.trace.len() {
                c.fail(&format!("trace[{}]", i + 1), "no rounds after an accept", "proposal after accept");
            }
        }
        match self.status {
            CycleStatus::Accepted => {
                if !self.trace.last().is_some_and(|e| e.feedback.is_accept()) {
                    c.fail("status", "last feedback accept when status is accepted", "no final accept");
                }
                if self.accepted_settings.is_none() {
                    c.fail("accepted_settings", "present when status is accepted", "absent");
                }
            }
            CycleStatus::Hold => {
                if !self.trace.is_empty() {
                    c.fail("trace", "empty when status is hold", format!("{} rounds", self.trace.len()));
                }
            }
            // A failed cycle may end on an accept when closure itself failed.
            CycleStatus::Failed => {}
            CycleStatus::Exhausted => {
                if self.trace.iter().any(|e| e.feedback.is_accept()) {
                    c.fail("status", "accepted when trace contains an accept", format!("{:?}", self.status));
                }
            }
        }
    }
}

impl Contract for RevisionDirective {
    fn check(&self, c: &mut Checker<'_>) {
        if self.constraints.is_empty() {
            c.fail("constraints", "non-empty", "empty list");
        }
    }
}

impl Contract for WaveformSegment {
    fn check(&self, c: &mut Checker<'_>) {
        if !(self.sample_rate_hz > 0.0 && self.sample_rate_hz.is_finite()) {
            c.fail("sample_rate_hz", "> 0", self.sample_rate_hz.to_string());
        }
        if self.pressure.len() != self.flow.len() {
            c.fail("flow", format!("{} samples (same as pressure)", self.pressure.len()), self.flow.len().to_string());
        }
        for (name, series) in [("pressure", &self.pressure), ("flow", &self.flow)] {
            if let Some(i) = series.iter().position(|v| v.is_some_and(|x| !x.is_finite())) {
                c.fail(&format!("{name}[{i}]"), "finite number or null", "non-finite");
            }
        }
    }
}

impl Contract for DetectionRequest {
    fn check(&self, c: &mut Checker<'_>) {
        c.nested("state", &self.state);
        if let Some(cues) = &self.cues {
            c.nested("cues", cues);
        }
    }
}

impl Contract for PhaseRequest {
    fn check(&self, c: &mut Checker<'_>) {
        c.nested("state", &self.state);
        c.nested("settings", &self.settings);
        c.nested("summary", &self.summary);
    }
}

impl Contract for GateRequest {
    fn check(&self, c: &mut Checker<'_>) {
        c.nested("summary", &self.summary);
        c.nested("goals", &self.goals);
    }
}

impl Contract for CategoryScores {
    fn check(&self, c: &mut Checker<'_>) {
        if self.arms.len() != PreferenceCategory::COUNT {
            c.fail("arms", "exactly 12 arms", self.arms.len().to_string());
        }
        for (i, a) in self.arms.iter().enumerate() {
            if PreferenceCategory::from_index(i) != Some(a.category) {
                c.fail(&format!("arms[{i}].category"), "categories in fixed order", a.category.to_string());
            }
            for (name, v) in [("score", a.score), ("mean", a.mean), ("uncertainty", a.uncertainty)] {
                c.finite(&format!("arms[{i}].{name}"), v);
            }
        }
    }
}

impl Contract for StrategyRequest {
    fn check(&self, c: &mut Checker<'_>) {
        c.nested("summary", &self.summary);
        c.nested("goals", &self.goals);
        c.nested("scores", &self.scores);
    }
}

impl Contract for StrategyChoice {}

impl Contract for ModeRequest {
    fn check(&self, c: &mut Checker<'_>) {
        c.nested("current_settings", &self.current_settings);
    }
}

impl Contract for ModeDecision {
    fn check(&self, c: &mut Checker<'_>) {
        if let Some(registry) = c.ctx.registry {
            for (leaf, m) in [("mode_change", &self.mode_change), ("alternative_mode", &self.alternative_mode)] {
                if let Some(m) = m {
                    if !registry.contains(m) {
                        c.fail(leaf, "registered mode", m.to_string());
                    }
                }
            }
        }
    }
}

impl Contract for PlanRequest {
    fn check(&self, c: &mut Checker<'_>) {
        c.nested("goals", &self.goals);
        c.nested("current_settings", &self.current_settings);
        c.nested("mode", &self.mode);
        c.nested("scores", &self.scores);
    }
}

impl Contract for CandidateSet {
    fn check(&self, c: &mut Checker<'_>) {
        if self.candidates.is_empty() {
            c.fail("candidates", "at least one candidate", "empty list");
        }
        for (i, p) in self.candidates.iter().enumerate() {
            c.nested(format!("candidates[{i}]"), p);
        }
    }
}

impl Contract for ReflectRequest {
    fn check(&self, c: &mut Checker<'_>) {
        c.nested("feedback", &self.feedback);
        if self.feedback.decision != Decision::Reject {
            c.fail("feedback.decision", "reject", "accept");
        }
        c.nested("rejected", &self.rejected);
        c.nested("current_settings", &self.current_settings);
    }
}

impl Contract for NoteRequest {
    fn check(&self, c: &mut Checker<'_>) {
        for (i, e) in self.trace.iter().enumerate() {
            c.nested(format!("trace[{i}]"), e);
        }
    }
}

impl Contract for NoteOutput {
    fn check(&self, c: &mut Checker<'_>) {
        if self.note.trim().is_empty() {
            c.fail("note", "non-empty", "empty string");
        }
        c.nested("signal", &self.signal);
    }
}

impl<T: Contract> Contract for Vec<T> {
    fn check(&self, c: &mut Checker<'_>) {
        for (i, v) in self.iter().enumerate() {
            c.nested(format!("[{i}]"), v);
        }
    }
}

/// Registered schema: a role's input or output, or a standalone record type.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SchemaId {
    Input(AgentRole),
    Output(AgentRole),
    PatientState,
    VentilatorSettings,
    Proposal,
    ClinicianFeedback,
    CycleRecord,
    PreferenceSignal,
}

impl SchemaId {
    pub fn all() -> Vec<SchemaId> {
        let mut out = Vec::new();
        for r in AgentRole::ALL {
            out.push(SchemaId::Input(r));
            out.push(SchemaId::Output(r));
        }
        out.extend([
            SchemaId::PatientState,
            SchemaId::VentilatorSettings,
            SchemaId::Proposal,
            SchemaId::ClinicianFeedback,
            SchemaId::CycleRecord,
            SchemaId::PreferenceSignal,
        ]);
        out
    }

    pub fn name(self) -> String {
        match self {
            SchemaId::Input(r) => format!("{r}.input"),
            SchemaId::Output(r) => format!("{r}.output"),
            SchemaId::PatientState => "patient_state".into(),
            SchemaId::VentilatorSettings => "ventilator_settings".into(),
            SchemaId::Proposal => "proposal".into(),
            SchemaId::ClinicianFeedback => "clinician_feedback".into(),
            SchemaId::CycleRecord => "cycle_record".into(),
            SchemaId::PreferenceSignal => "preference_signal".into(),
        }
    }
}

impl fmt::Display for SchemaId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for SchemaId {
    type Err = ContractError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SchemaId::all()
            .into_iter()
            .find(|id| id.name() == s)
            .ok_or_else(|| ContractError::UnknownSchema(s.to_string()))
    }
}

macro_rules! messages {
    ($( $variant:ident($ty:ty) ),* $(,)?) => {
        /// A validated payload of any registered schema.
        #[derive(Debug, Clone, PartialEq)]
        pub enum Message {
            $( $variant($ty), )*
        }

        impl Message {
            pub fn to_value(&self) -> Value {
                match self {
                    $( Message::$variant(v) => serde_json::to_value(v).expect("contract types serialize"), )*
                }
            }
        }
    };
}

messages! {
    WaveformSegment(WaveformSegment),
    WaveformCues(WaveformCues),
    DetectionRequest(DetectionRequest),
    StateSummary(StateSummary),
    PhaseRequest(PhaseRequest),
    PhaseGoals(PhaseGoals),
    GateRequest(GateRequest),
    BranchDecision(BranchDecision),
    StrategyRequest(StrategyRequest),
    StrategyChoice(StrategyChoice),
    ModeRequest(ModeRequest),
    ModeDecision(ModeDecision),
    PlanRequest(PlanRequest),
    CandidateSet(CandidateSet),
    ReflectRequest(ReflectRequest),
    RevisionDirective(RevisionDirective),
    NoteRequest(NoteRequest),
    NoteOutput(NoteOutput),
    PatientState(PatientState),
    VentilatorSettings(VentilatorSettings),
    Proposal(Proposal),
    ClinicianFeedback(ClinicianFeedback),
    CycleRecord(CycleRecord),
    PreferenceSignal(PreferenceSignal),
}

fn typed<T: Contract>(
    payload: &Value,
    ctx: ValidationContext<'_>,
    wrap: fn(T) -> Message,
) -> Result<Message, ContractError> {
    validate::<T>(payload, ctx)
        .map(wrap)
        .map_err(ContractError::Invalid)
}

/// Validate an untyped payload against the schema named `schema_id`
/// (for example `gate.output` or `proposal`).
pub fn validate_message(
    schema_id: &str,
    payload: &Value,
    ctx: ValidationContext<'_>,
) -> Result<Message, ContractError> {
    let id: SchemaId = schema_id.parse()?;
    validate_schema(id, payload, ctx)
}

pub fn validate_schema(id: SchemaId, payload: &Value, ctx: ValidationContext<'_>) -> Result<Message, ContractError> {
    use AgentRole as R;
    use SchemaId as S;
    match id {
        S::Input(R::WaveformAnalyzer) => typed(payload, ctx, Message::WaveformSegment),
        S::Output(R::WaveformAnalyzer) => typed(payload, ctx, Message::WaveformCues),
        S::Input(R::Detection) => typed(payload, ctx, Message::DetectionRequest),
        S::Output(R::Detection) => typed(payload, ctx, Message::StateSummary),
        S::Input(R::PhaseGoalManager) => typed(payload, ctx, Message::PhaseRequest),
        S::Output(R::PhaseGoalManager) => typed(payload, ctx, Message::PhaseGoals),
        S::Input(R::Gate) => typed(payload, ctx, Message::GateRequest),
        S::Output(R::Gate) => typed(payload, ctx, Message::BranchDecision),
        S::Input(R::StrategySelector) => typed(payload, ctx, Message::StrategyRequest),
        S::Output(R::StrategySelector) => typed(payload, ctx, Message::StrategyChoice),
        S::Input(R::ModeSelect) => typed(payload, ctx, Message::ModeRequest),
        S::Output(R::ModeSelect) => typed(payload, ctx, Message::ModeDecision),
        S::Input(R::ParameterPlanner) => typed(payload, ctx, Message::PlanRequest),
        S::Output(R::ParameterPlanner) => typed(payload, ctx, Message::CandidateSet),
        S::Input(R::Reflect) => typed(payload, ctx, Message::ReflectRequest),
        S::Output(R::Reflect) => typed(payload, ctx, Message::RevisionDirective),
        S::Input(R::NoteGenerator) => typed(payload, ctx, Message::NoteRequest),
        S::Output(R::NoteGenerator) => typed(payload, ctx, Message::NoteOutput),
        S::PatientState => typed(payload, ctx, Message::PatientState),
        S::VentilatorSettings => typed(payload, ctx, Message::VentilatorSettings),
        S::Proposal => typed(payload, ctx, Message::Proposal),
        S::ClinicianFeedback => typed(payload, ctx, Message::ClinicianFeedback),
        S::CycleRecord => typed(payload, ctx, Message::CycleRecord),
        S::PreferenceSignal => typed(payload, ctx, Message::PreferenceSignal),
    }
}

/// JSON Schema document for a registered schema id.
pub fn json_schema(id: SchemaId) -> Value {
    use AgentRole as R;
    use SchemaId as S;
    let schema = match id {
        S::Input(R::WaveformAnalyzer) => schemars::schema_for!(WaveformSegment),
        S::Output(R::WaveformAnalyzer) => schemars::schema_for!(WaveformCues),
        S::Input(R::Detection) => schemars::schema_for!(DetectionRequest),
        S::Output(R::Detection) => schemars::schema_for!(StateSummary),
        S::Input(R::PhaseGoalManager) => schemars::schema_for!(PhaseRequest),
        S::Output(R::PhaseGoalManager) => schemars::schema_for!(PhaseGoals),
        S::Input(R::Gate) => schemars::schema_for!(GateRequest),
        S::Output(R::Gate) => schemars::schema_for!(BranchDecision),
        S::Input(R::StrategySelector) => schemars::schema_for!(StrategyRequest),
        S::Output(R::StrategySelector) => schemars::schema_for!(StrategyChoice),
        S::Input(R::ModeSelect) => schemars::schema_for!(ModeRequest),
        S::Output(R::ModeSelect) => schemars::schema_for!(ModeDecision),
        S::Input(R::ParameterPlanner) => schemars::schema_for!(PlanRequest),
        S::Output(R::ParameterPlanner) => schemars::schema_for!(CandidateSet),
        S::Input(R::Reflect) => schemars::schema_for!(ReflectRequest),
        S::Output(R::Reflect) => schemars::schema_for!(RevisionDirective),
        S::Input(R::NoteGenerator) => schemars::schema_for!(NoteRequest),
        S::Output(R::NoteGenerator) => schemars::schema_for!(NoteOutput),
        S::PatientState => schemars::schema_for!(PatientState),
        S::VentilatorSettings => schemars::schema_for!(VentilatorSettings),
        S::Proposal => schemars::schema_for!(Proposal),
        S::ClinicianFeedback => schemars::schema_for!(ClinicianFeedback),
        S::CycleRecord => schemars::schema_for!(CycleRecord),
        S::PreferenceSignal => schemars::schema_for!(PreferenceSignal),
    };
    let mut value = serde_json::to_value(schema).expect("schema serializes");
    if let Value::Object(map) = &mut value {
        map.insert("$id".into(), Value::String(format!("vdss/v1/{}.json", id.name())));
    }
    value
}
