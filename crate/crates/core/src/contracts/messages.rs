//! Input and output payloads of each agent role.

use std::fmt;
use std::str::FromStr;

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use super::types::*;

/// The agent roles of the reasoning engine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum AgentRole {
    WaveformAnalyzer,
    Detection,
    PhaseGoalManager,
    Gate,
    StrategySelector,
    ModeSelect,
    ParameterPlanner,
    Reflect,
    NoteGenerator,
}

impl AgentRole {
    pub const ALL: [AgentRole; 9] = [
        AgentRole::WaveformAnalyzer,
        AgentRole::Detection,
        AgentRole::PhaseGoalManager,
        AgentRole::Gate,
        AgentRole::StrategySelector,
        AgentRole::ModeSelect,
        AgentRole::ParameterPlanner,
        AgentRole::Reflect,
        AgentRole::NoteGenerator,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AgentRole::WaveformAnalyzer => "waveform_analyzer",
            AgentRole::Detection => "detection",
            AgentRole::PhaseGoalManager => "phase_goal_manager",
            AgentRole::Gate => "gate",
            AgentRole::StrategySelector => "strategy_selector",
            AgentRole::ModeSelect => "mode_select",
            AgentRole::ParameterPlanner => "parameter_planner",
            AgentRole::Reflect => "reflect",
            AgentRole::NoteGenerator => "note_generator",
        }
    }
}

impl fmt::Display for AgentRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AgentRole {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        AgentRole::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| format!("unknown agent role `{s}`"))
    }
}

/// Sampled pressure and flow traces. Missing samples are `null`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct WaveformSegment {
    pub segment_id: String,
    pub sample_rate_hz: f64,
    /// Airway pressure, cmH2O.
    pub pressure: Vec<Option<f64>>,
    /// Flow, L/min; positive is inspiratory.
    pub flow: Vec<Option<f64>>,
    /// Opaque handle to a rendered image, passed through to vision backends.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_ref: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct DetectionRequest {
    pub state: PatientState,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cues: Option<WaveformCues>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct PhaseRequest {
    pub state: PatientState,
    pub settings: VentilatorSettings,
    pub summary: StateSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct GateRequest {
    pub summary: StateSummary,
    pub goals: PhaseGoals,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct StrategyRequest {
    pub summary: StateSummary,
    pub goals: PhaseGoals,
    pub scores: CategoryScores,
    #[serde(default)]
    pub constraints: Vec<Constraint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct StrategyChoice {
    pub strategy: PriorityId,
    #[serde(default)]
    pub rationale: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct ModeRequest {
    pub strategy: PriorityId,
    pub current_settings: VentilatorSettings,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cues: Option<WaveformCues>,
    #[serde(default)]
    pub constraints: Vec<Constraint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct ModeDecision {
    /// Mode to switch to, or absent to stay in the current mode.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode_change: Option<ModeId>,
    /// A mode-level alternative the planner may offer next to the main plan.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alternative_mode: Option<ModeId>,
    #[serde(default)]
    pub rationale: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct PlanRequest {
    pub cycle_id: String,
    pub round_index: u32,
    pub strategy: PriorityId,
    pub goals: PhaseGoals,
    pub current_settings: VentilatorSettings,
    pub mode: ModeDecision,
    pub scores: CategoryScores,
    #[serde(default)]
    pub constraints: Vec<Constraint>,
}

/// Ranked candidate proposals, best first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct CandidateSet {
    pub candidates: Vec<Proposal>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct ReflectRequest {
    pub feedback: ClinicianFeedback,
    pub rejected: Proposal,
    pub current_settings: VentilatorSettings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct NoteRequest {
    pub cycle_id: String,
    pub encounter_id: String,
    pub clinician_id: String,
    pub status: CycleStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub branch: Option<BranchDecision>,
    pub trace: Vec<TraceEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accepted_settings: Option<VentilatorSettings>,
    pub current_settings: VentilatorSettings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct NoteOutput {
    pub note: String,
    pub signal: PreferenceSignal,
}
