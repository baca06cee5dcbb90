//! Domain value types shared by every agent role and persisted record.
//!
//! All structs are closed (`deny_unknown_fields`): a payload carrying a field
//! the schema does not name is rejected rather than silently dropped.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

/// Number of context features fed to the preference bandit.
pub const FEATURE_DIM: usize = 12;

/// Ventilation mode identifier as listed in the mode registry.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, JsonSchema)]
#[serde(transparent)]
pub struct ModeId(pub String);

impl ModeId {
    pub fn new(id: impl Into<String>) -> Self {
        ModeId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ModeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for ModeId {
    fn from(s: &str) -> Self {
        ModeId(s.to_string())
    }
}

/// Clinician-adjustable numeric ventilator settings (the action variables).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum Parameter {
    Peep,
    Fio2,
    PressureSupport,
    InspiratoryPressure,
    RespRateSet,
}

impl Parameter {
    pub const ALL: [Parameter; 5] = [
        Parameter::Peep,
        Parameter::Fio2,
        Parameter::PressureSupport,
        Parameter::InspiratoryPressure,
        Parameter::RespRateSet,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Parameter::Peep => "peep",
            Parameter::Fio2 => "fio2",
            Parameter::PressureSupport => "pressure_support",
            Parameter::InspiratoryPressure => "inspiratory_pressure",
            Parameter::RespRateSet => "resp_rate_set",
        }
    }
}

impl fmt::Display for Parameter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Bedside physiological and ventilatory measurements (the state variables).
///
/// Measurements other than `timestamp` and `weight_kg` may be missing; the
/// detection agent counts missing required fields when judging whether the
/// evidence is sufficient for an adjustment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct PatientState {
    /// Seconds since encounter start.
    pub timestamp: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spo2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub heart_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub map: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ph: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub paco2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pao2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tidal_volume_obs: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resp_rate_obs: Option<f64>,
    pub weight_kg: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub waveform_ref: Option<String>,
}

/// Named numeric fields of [`PatientState`], including derived ones, as used
/// by the detection rule table and by evidence references.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum StateField {
    Spo2,
    HeartRate,
    Map,
    Ph,
    Paco2,
    Pao2,
    TidalVolumeObs,
    RespRateObs,
    WeightKg,
    TidalVolumePerKg,
}

impl StateField {
    pub fn as_str(self) -> &'static str {
        match self {
            StateField::Spo2 => "spo2",
            StateField::HeartRate => "heart_rate",
            StateField::Map => "map",
            StateField::Ph => "ph",
            StateField::Paco2 => "paco2",
            StateField::Pao2 => "pao2",
            StateField::TidalVolumeObs => "tidal_volume_obs",
            StateField::RespRateObs => "resp_rate_obs",
            StateField::WeightKg => "weight_kg",
            StateField::TidalVolumePerKg => "tidal_volume_per_kg",
        }
    }

    /// Evidence reference path for this field. Derived fields cite the
    /// measured field they are computed from.
    pub fn evidence_ref(self) -> String {
        match self {
            StateField::TidalVolumePerKg => "state.tidal_volume_obs".to_string(),
            other => format!("state.{}", other.as_str()),
        }
    }
}

impl PatientState {
    /// A nominal adult state used by examples and tests.
    pub fn nominal(timestamp: f64) -> Self {
        PatientState {
            timestamp,
            spo2: Some(95.0),
            heart_rate: Some(85.0),
            map: Some(75.0),
            ph: Some(7.40),
            paco2: Some(40.0),
            pao2: Some(90.0),
            tidal_volume_obs: Some(420.0),
            resp_rate_obs: Some(18.0),
            weight_kg: 70.0,
            waveform_ref: None,
        }
    }

    pub fn field(&self, field: StateField) -> Option<f64> {
        match field {
            StateField::Spo2 => self.spo2,
            StateField::HeartRate => self.heart_rate,
            StateField::Map => self.map,
            StateField::Ph => self.ph,
            StateField::Paco2 => self.paco2,
            StateField::Pao2 => self.pao2,
            StateField::TidalVolumeObs => self.tidal_volume_obs,
            StateField::RespRateObs => self.resp_rate_obs,
            StateField::WeightKg => Some(self.weight_kg),
            StateField::TidalVolumePerKg => match self.tidal_volume_obs {
                Some(tv) if self.weight_kg > 0.0 => Some(tv / self.weight_kg),
                _ => None,
            },
        }
    }

    pub(crate) fn numeric_fields(&self) -> [(&'static str, Option<f64>); 10] {
        [
            ("timestamp", Some(self.timestamp)),
            ("spo2", self.spo2),
            ("heart_rate", self.heart_rate),
            ("map", self.map),
            ("ph", self.ph),
            ("paco2", self.paco2),
            ("pao2", self.pao2),
            ("tidal_volume_obs", self.tidal_volume_obs),
            ("resp_rate_obs", self.resp_rate_obs),
            ("weight_kg", Some(self.weight_kg)),
        ]
    }
}

/// Proposed or accepted ventilator configuration. Parameters that the mode
/// registry marks inapplicable for `mode` are absent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct VentilatorSettings {
    pub mode: ModeId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub peep: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fio2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pressure_support: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inspiratory_pressure: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resp_rate_set: Option<f64>,
}

impl VentilatorSettings {
    pub fn new(mode: impl Into<ModeId>) -> Self {
        VentilatorSettings {
            mode: mode.into(),
            peep: None,
            fio2: None,
            pressure_support: None,
            inspiratory_pressure: None,
            resp_rate_set: None,
        }
    }

    pub fn with(mut self, parameter: Parameter, value: f64) -> Self {
        self.set(parameter, Some(value));
        self
    }

    pub fn get(&self, parameter: Parameter) -> Option<f64> {
        match parameter {
            Parameter::Peep => self.peep,
            Parameter::Fio2 => self.fio2,
            Parameter::PressureSupport => self.pressure_support,
            Parameter::InspiratoryPressure => self.inspiratory_pressure,
            Parameter::RespRateSet => self.resp_rate_set,
        }
    }

    pub fn set(&mut self, parameter: Parameter, value: Option<f64>) {
        let slot = match parameter {
            Parameter::Peep => &mut self.peep,
            Parameter::Fio2 => &mut self.fio2,
            Parameter::PressureSupport => &mut self.pressure_support,
            Parameter::InspiratoryPressure => &mut self.inspiratory_pressure,
            Parameter::RespRateSet => &mut self.resp_rate_set,
        };
        *slot = value;
    }

    /// Parameters that currently carry a value, in canonical order.
    pub fn present(&self) -> impl Iterator<Item = (Parameter, f64)> + '_ {
        Parameter::ALL
            .into_iter()
            .filter_map(move |p| self.get(p).map(|v| (p, v)))
    }
}

impl From<String> for ModeId {
    fn from(s: String) -> Self {
        ModeId(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum WaveformQuality {
    Good,
    Degraded,
    Unusable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum AsynchronyPattern {
    Sawtooth,
    ScoopedPlateau,
    DoubleTrigger,
    IneffectiveEffort,
    None,
}

/// Structured bedside cues extracted from pressure and flow traces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct WaveformCues {
    pub quality: WaveformQuality,
    pub asynchrony_patterns: BTreeSet<AsynchronyPattern>,
    #[serde(default)]
    pub suspicious_events: Vec<String>,
    #[serde(default)]
    pub observed_state: String,
    pub uncertainty: f64,
}

impl WaveformCues {
    /// True when any pattern other than `none` was detected.
    pub fn has_asynchrony(&self) -> bool {
        self.asynchrony_patterns
            .iter()
            .any(|p| *p != AsynchronyPattern::None)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    None,
    Mild,
    Moderate,
    Severe,
}

/// Fixed abnormality vocabulary of the scripted detection agent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum AbnormalityCode {
    Hypoxemia,
    Hyperoxia,
    RespiratoryAcidosis,
    ExcessiveTidalVolume,
    Hypotension,
    Tachycardia,
    Tachypnea,
    SecretionsAsynchrony,
    FlowStarvation,
    PatientVentilatorAsynchrony,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct Abnormality {
    pub code: AbnormalityCode,
    pub severity: Severity,
    /// Paths into the patient state (`state.<field>`) or the waveform cues
    /// (`cues.<field>`).
    pub evidence: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct StateSummary {
    pub abnormalities: Vec<Abnormality>,
    pub evidence_sufficient: bool,
    #[serde(default)]
    pub narrative: String,
}

impl StateSummary {
    pub fn max_severity(&self) -> Severity {
        self.abnormalities
            .iter()
            .map(|a| a.severity)
            .max()
            .unwrap_or(Severity::None)
    }

    pub fn severity_of(&self, code: AbnormalityCode) -> Severity {
        self.abnormalities
            .iter()
            .filter(|a| a.code == code)
            .map(|a| a.severity)
            .max()
            .unwrap_or(Severity::None)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Acute,
    Stabilization,
    Weaning,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum GoalId {
    ImproveOxygenation,
    DeescalateFio2,
    CorrectAcidBase,
    LungProtection,
    SupportHemodynamics,
    ImproveSynchrony,
    ReduceAutoPeepRisk,
    ProgressWeaning,
    MaintainStability,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct PhaseGoals {
    pub phase: Phase,
    pub primary_goal: GoalId,
    #[serde(default)]
    pub secondary_goals: Vec<GoalId>,
}

impl PhaseGoals {
    pub fn all_goals(&self) -> impl Iterator<Item = GoalId> + '_ {
        std::iter::once(self.primary_goal).chain(self.secondary_goals.iter().copied())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    Hold,
    Adjust,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct BranchDecision {
    pub branch: Branch,
    pub reason: String,
}

/// Adjustment priority chosen by the strategy selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum PriorityId {
    /// Trade FiO2 against PEEP while oxygenation is adequate.
    Oxygenation,
    /// Raise oxygen delivery; raise-only.
    OxygenationRescue,
    Ventilation,
    LungProtection,
    Hemodynamics,
    Synchrony,
    Weaning,
}

impl PriorityId {
    pub const ALL: [PriorityId; 7] = [
        PriorityId::Oxygenation,
        PriorityId::OxygenationRescue,
        PriorityId::Ventilation,
        PriorityId::LungProtection,
        PriorityId::Hemodynamics,
        PriorityId::Synchrony,
        PriorityId::Weaning,
    ];

    /// The preference arm that records emphasis on this priority.
    pub fn category(self) -> PreferenceCategory {
        match self {
            PriorityId::Oxygenation | PriorityId::OxygenationRescue => {
                PreferenceCategory::PrioOxygenation
            }
            PriorityId::Ventilation => PreferenceCategory::PrioVentilationAcidBase,
            PriorityId::LungProtection => PreferenceCategory::PrioLungProtection,
            PriorityId::Hemodynamics => PreferenceCategory::PrioHemodynamics,
            PriorityId::Synchrony => PreferenceCategory::PrioSynchronyComfort,
            PriorityId::Weaning => PreferenceCategory::PrioWeaning,
        }
    }
}

/// The twelve long-term preference categories, one bandit arm each, in
/// fixed order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum PreferenceCategory {
    ModeLevelChange,
    StayInMode,
    ConservativeSmallStep,
    TargetDrivenAssertive,
    PrioOxygenation,
    PrioVentilationAcidBase,
    PrioLungProtection,
    PrioHemodynamics,
    PrioSynchronyComfort,
    PrioWeaning,
    SingleKeyParameterFirst,
    DeferWhenInsufficient,
}

impl PreferenceCategory {
    pub const COUNT: usize = 12;

    pub const ALL: [PreferenceCategory; 12] = [
        PreferenceCategory::ModeLevelChange,
        PreferenceCategory::StayInMode,
        PreferenceCategory::ConservativeSmallStep,
        PreferenceCategory::TargetDrivenAssertive,
        PreferenceCategory::PrioOxygenation,
        PreferenceCategory::PrioVentilationAcidBase,
        PreferenceCategory::PrioLungProtection,
        PreferenceCategory::PrioHemodynamics,
        PreferenceCategory::PrioSynchronyComfort,
        PreferenceCategory::PrioWeaning,
        PreferenceCategory::SingleKeyParameterFirst,
        PreferenceCategory::DeferWhenInsufficient,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PreferenceCategory::ModeLevelChange => "mode_level_change",
            PreferenceCategory::StayInMode => "stay_in_mode",
            PreferenceCategory::ConservativeSmallStep => "conservative_small_step",
            PreferenceCategory::TargetDrivenAssertive => "target_driven_assertive",
            PreferenceCategory::PrioOxygenation => "prio_oxygenation",
            PreferenceCategory::PrioVentilationAcidBase => "prio_ventilation_acid_base",
            PreferenceCategory::PrioLungProtection => "prio_lung_protection",
            PreferenceCategory::PrioHemodynamics => "prio_hemodynamics",
            PreferenceCategory::PrioSynchronyComfort => "prio_synchrony_comfort",
            PreferenceCategory::PrioWeaning => "prio_weaning",
            PreferenceCategory::SingleKeyParameterFirst => "single_key_parameter_first",
            PreferenceCategory::DeferWhenInsufficient => "defer_when_insufficient",
        }
    }
}

impl fmt::Display for PreferenceCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One round's proposal: a compact set of executable setting updates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct Proposal {
    pub cycle_id: String,
    pub round_index: u32,
    pub strategy: PriorityId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode_change: Option<ModeId>,
    /// Parameter -> new absolute value.
    pub setting_updates: BTreeMap<Parameter, f64>,
    pub category_tags: BTreeSet<PreferenceCategory>,
    #[serde(default)]
    pub rationale: String,
}

impl Proposal {
    /// Mode the settings will be in if this proposal is applied.
    pub fn target_mode<'a>(&'a self, current: &'a VentilatorSettings) -> &'a ModeId {
        self.mode_change.as_ref().unwrap_or(&current.mode)
    }

    /// True when two proposals would apply the same change.
    pub fn same_content(&self, other: &Proposal) -> bool {
        self.mode_change == other.mode_change && self.setting_updates == other.setting_updates
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Accept,
    Reject,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum ReasonCategory {
    WrongPriority,
    WrongMode,
    ParameterMagnitude,
    Feasibility,
    Other,
}

impl ReasonCategory {
    pub const ALL: [ReasonCategory; 5] = [
        ReasonCategory::WrongPriority,
        ReasonCategory::WrongMode,
        ReasonCategory::ParameterMagnitude,
        ReasonCategory::Feasibility,
        ReasonCategory::Other,
    ];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct ClinicianFeedback {
    pub decision: Decision,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason_category: Option<ReasonCategory>,
    #[serde(default)]
    pub disputed_parameters: Vec<Parameter>,
    #[serde(default)]
    pub rationale: String,
}

impl ClinicianFeedback {
    pub fn accept() -> Self {
        ClinicianFeedback {
            decision: Decision::Accept,
            reason_category: None,
            disputed_parameters: Vec::new(),
            rationale: String::new(),
        }
    }

    pub fn reject(reason: ReasonCategory, disputed: Vec<Parameter>, rationale: impl Into<String>) -> Self {
        ClinicianFeedback {
            decision: Decision::Reject,
            reason_category: Some(reason),
            disputed_parameters: disputed,
            rationale: rationale.into(),
        }
    }

    pub fn is_accept(&self) -> bool {
        self.decision == Decision::Accept
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum CheckId {
    Bounds,
    ModeCompatibility,
    UnknownMode,
    DeltaLimit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct Violation {
    pub check_id: CheckId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parameter: Option<Parameter>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub limit: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub proposed_value: Option<f64>,
}

/// Outcome of the deterministic pre-review checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct SafetyReport {
    pub verdict: Verdict,
    pub violations: Vec<Violation>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl SafetyReport {
    pub fn from_parts(violations: Vec<Violation>, warnings: Vec<String>) -> Self {
        let verdict = if violations.is_empty() {
            Verdict::Pass
        } else {
            Verdict::Fail
        };
        SafetyReport {
            verdict,
            violations,
            warnings,
        }
    }

    pub fn passed(&self) -> bool {
        self.verdict == Verdict::Pass
    }
}

/// One arm's score under a given context.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct ArmScore {
    pub category: PreferenceCategory,
    pub score: f64,
    pub mean: f64,
    pub uncertainty: f64,
}

/// Per-arm preference scores, indexed in [`PreferenceCategory::ALL`] order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct CategoryScores {
    pub arms: Vec<ArmScore>,
}

impl CategoryScores {
    /// Scores that rank every category equally.
    pub fn uniform() -> Self {
        CategoryScores {
            arms: PreferenceCategory::ALL
                .iter()
                .map(|&category| ArmScore {
                    category,
                    score: 0.0,
                    mean: 0.0,
                    uncertainty: 0.0,
                })
                .collect(),
        }
    }

    pub fn score(&self, category: PreferenceCategory) -> f64 {
        self.arms
            .iter()
            .find(|a| a.category == category)
            .map(|a| a.score)
            .unwrap_or(0.0)
    }

    /// Highest-scoring `n` arms, ties in category order.
    pub fn top(&self, n: usize) -> Vec<ArmScore> {
        let mut arms = self.arms.clone();
        arms.sort_by(|a, b| b.score.total_cmp(&a.score));
        arms.truncate(n);
        arms
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum ResumeStage {
    Strategy,
    ModeSelect,
    ParameterPlan,
}

/// Structured revision constraint accumulated across rounds of one cycle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Constraint {
    ForbidStrategy {
        strategy: PriorityId,
    },
    ForbidMode {
        mode: ModeId,
    },
    ForbidParameter {
        parameter: Parameter,
    },
    /// |new - current| must not exceed `max`.
    MaxStep {
        parameter: Parameter,
        max: f64,
    },
    Ceiling {
        parameter: Parameter,
        value: f64,
    },
    Floor {
        parameter: Parameter,
        value: f64,
    },
    /// Do not re-propose a candidate with exactly these tags.
    ExcludeTagSet {
        tags: BTreeSet<PreferenceCategory>,
    },
    /// Do not re-propose this exact change.
    ExcludeProposal {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        mode_change: Option<ModeId>,
        setting_updates: BTreeMap<Parameter, f64>,
    },
}

const STEP_EPS: f64 = 1e-9;

impl Constraint {
    /// Whether `proposal`, applied to `current`, respects this constraint.
    pub fn is_satisfied_by(&self, proposal: &Proposal, current: &VentilatorSettings) -> bool {
        match self {
            Constraint::ForbidStrategy { strategy } => proposal.strategy != *strategy,
            Constraint::ForbidMode { mode } => proposal.target_mode(current) != mode,
            Constraint::ForbidParameter { parameter } => {
                !proposal.setting_updates.contains_key(parameter)
            }
            Constraint::MaxStep { parameter, max } => match proposal.setting_updates.get(parameter) {
                Some(new) => match current.get(*parameter) {
                    Some(old) => (new - old).abs() <= max + STEP_EPS,
                    None => true,
                },
                None => true,
            },
            Constraint::Ceiling { parameter, value } => proposal
                .setting_updates
                .get(parameter)
                .map_or(true, |v| *v <= value + STEP_EPS),
            Constraint::Floor { parameter, value } => proposal
                .setting_updates
                .get(parameter)
                .map_or(true, |v| *v >= value - STEP_EPS),
            Constraint::ExcludeTagSet { tags } => proposal.category_tags != *tags,
            Constraint::ExcludeProposal {
                mode_change,
                setting_updates,
            } => !(proposal.mode_change == *mode_change && proposal.setting_updates == *setting_updates),
        }
    }
}

/// Reflect agent output: where to resume and what to respect when replanning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct RevisionDirective {
    pub resume_stage: ResumeStage,
    pub constraints: Vec<Constraint>,
    /// Set when the rejection rationale cites waveform evidence.
    #[serde(default)]
    pub refresh_waveform: bool,
}

/// Categories evidenced at cycle closure.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct PreferenceSignal {
    pub evidenced_by_accept: BTreeSet<PreferenceCategory>,
    pub evidenced_only_by_reject: BTreeSet<PreferenceCategory>,
}

impl PreferenceSignal {
    pub fn is_empty(&self) -> bool {
        self.evidenced_by_accept.is_empty() && self.evidenced_only_by_reject.is_empty()
    }
}

/// The decision input assembled for one cycle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct CycleContext {
    pub current_state: PatientState,
    pub current_settings: VentilatorSettings,
    /// Recent cycle notes for the encounter, most recent first.
    #[serde(default)]
    pub short_term: Vec<String>,
    /// Offsets of earlier cycle records for the encounter in the long-term log.
    #[serde(default)]
    pub long_term_refs: Vec<u64>,
    pub feature_vector: Vec<f64>,
}

/// One presented round: the proposal, what the clinician saw with it, and
/// their answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct TraceEntry {
    pub proposal: Proposal,
    pub feedback: ClinicianFeedback,
    pub safety: SafetyReport,
    #[serde(default)]
    pub preference_context: Vec<ArmScore>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum CycleStatus {
    Accepted,
    Hold,
    Exhausted,
    Failed,
}

/// Agent outputs behind a cycle, kept for the evidence trail.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct CycleEvidence {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cues: Option<WaveformCues>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub summary: Option<StateSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub goals: Option<PhaseGoals>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub branch: Option<BranchDecision>,
    #[serde(default)]
    pub strategies: Vec<super::messages::StrategyChoice>,
    #[serde(default)]
    pub mode_decisions: Vec<super::messages::ModeDecision>,
    #[serde(default)]
    pub directives: Vec<RevisionDirective>,
    /// Reports of proposals that failed safety and were replanned before
    /// reaching the clinician.
    #[serde(default)]
    pub safety_rejections: Vec<SafetyReport>,
}

/// Full audit record of one adjustment cycle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct CycleRecord {
    pub cycle_id: String,
    pub encounter_id: String,
    pub clinician_id: String,
    pub context: CycleContext,
    pub trace: Vec<TraceEntry>,
    pub rounds: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accepted_settings: Option<VentilatorSettings>,
    pub note: String,
    pub preference_signal: PreferenceSignal,
    pub status: CycleStatus,
    #[serde(default)]
    pub evidence: CycleEvidence,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

impl CycleRecord {
    pub fn accepted_proposal(&self) -> Option<&Proposal> {
        match self.status {
            CycleStatus::Accepted => self.trace.last().map(|e| &e.proposal),
            _ => None,
        }
    }
}
