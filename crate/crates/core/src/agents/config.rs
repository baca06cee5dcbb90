//! Rule tables of the scripted agents, loaded from `config/`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::contracts::{
    AbnormalityCode, AsynchronyPattern, ContractError, GoalId, ModeId, Parameter, PriorityId, ReasonCategory,
    ResumeStage, Severity, StateField,
};

const DETECTION_RULES: &str = include_str!("../../../../config/detection_rules.json");
const PLANNER: &str = include_str!("../../../../config/planner.json");
const REFLECT: &str = include_str!("../../../../config/reflect.json");

fn parse<T: serde::de::DeserializeOwned>(name: &str, json: &str) -> Result<T, ContractError> {
    serde_json::from_str(json).map_err(|e| ContractError::Config(format!("{name}: {e}")))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Comparison {
    Lt,
    Le,
    Gt,
    Ge,
}

impl Comparison {
    pub fn holds(self, lhs: f64, rhs: f64) -> bool {
        match self {
            Comparison::Lt => lhs < rhs,
            Comparison::Le => lhs <= rhs,
            Comparison::Gt => lhs > rhs,
            Comparison::Ge => lhs >= rhs,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Condition {
    pub field: StateField,
    pub op: Comparison,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionRule {
    pub code: AbnormalityCode,
    pub severity: Severity,
    pub all: Vec<Condition>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CueRule {
    pub pattern: AsynchronyPattern,
    pub code: AbnormalityCode,
    pub severity: Severity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionRules {
    pub version: u32,
    #[serde(default)]
    pub note: String,
    pub required_fields: Vec<StateField>,
    pub max_missing_required: usize,
    pub rules: Vec<DetectionRule>,
    pub cue_rules: Vec<CueRule>,
}

impl Default for DetectionRules {
    fn default() -> Self {
        DetectionRules::from_json(DETECTION_RULES).expect("shipped detection rules are valid")
    }
}

impl DetectionRules {
    pub fn from_json(json: &str) -> Result<Self, ContractError> {
        let rules: DetectionRules = parse("detection_rules.json", json)?;
        if rules.rules.iter().any(|r| r.all.is_empty() || r.severity == Severity::None) {
            return Err(ContractError::Config(
                "detection_rules.json: every rule needs a condition and a non-none severity".into(),
            ));
        }
        Ok(rules)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseThresholds {
    pub acute_fio2_at_least: f64,
    pub acute_peep_at_least: f64,
    pub weaning_fio2_at_most: f64,
    pub weaning_peep_at_most: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeRuleKind {
    /// Offer the target mode next to the in-mode plan.
    Alternative,
    /// Move to the target mode.
    Switch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeRule {
    pub strategy: PriorityId,
    pub from: Vec<ModeId>,
    pub to: ModeId,
    pub kind: ModeRuleKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlannerConfig {
    pub version: u32,
    #[serde(default)]
    pub note: String,
    pub max_updates_per_proposal: usize,
    pub phase: PhaseThresholds,
    pub goal_map: BTreeMap<AbnormalityCode, GoalId>,
    pub strategy_map: BTreeMap<GoalId, PriorityId>,
    /// Score handicap per position in the goal-derived strategy order.
    pub preference_rank_penalty: f64,
    pub templates: BTreeMap<PriorityId, Vec<Vec<(Parameter, f64)>>>,
    pub mode_rules: Vec<ModeRule>,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        PlannerConfig::from_json(PLANNER).expect("shipped planner config is valid")
    }
}

impl PlannerConfig {
    pub fn from_json(json: &str) -> Result<Self, ContractError> {
        let cfg: PlannerConfig = parse("planner.json", json)?;
        if cfg.max_updates_per_proposal == 0 {
            return Err(ContractError::Config("planner.json: max_updates_per_proposal must be >= 1".into()));
        }
        for (strategy, templates) in &cfg.templates {
            for t in templates {
                if t.is_empty() || t.len() > cfg.max_updates_per_proposal {
                    return Err(ContractError::Config(format!(
                        "planner.json: template for {strategy:?} has {} updates",
                        t.len()
                    )));
                }
            }
        }
        Ok(cfg)
    }

    pub fn templates(&self, strategy: PriorityId) -> &[Vec<(Parameter, f64)>] {
        self.templates.get(&strategy).map(Vec::as_slice).unwrap_or(&[])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReflectConfig {
    pub version: u32,
    pub resume_stage: BTreeMap<ReasonCategory, ResumeStage>,
    /// Disputed step sizes are scaled by this factor on a magnitude rejection.
    pub magnitude_factor: f64,
    pub refresh_waveform_keywords: Vec<String>,
}

impl Default for ReflectConfig {
    fn default() -> Self {
        ReflectConfig::from_json(REFLECT).expect("shipped reflect config is valid")
    }
}

impl ReflectConfig {
    pub fn from_json(json: &str) -> Result<Self, ContractError> {
        let cfg: ReflectConfig = parse("reflect.json", json)?;
        if let Some(missing) = ReasonCategory::ALL.iter().find(|r| !cfg.resume_stage.contains_key(r)) {
            return Err(ContractError::Config(format!("reflect.json: no resume stage for {missing:?}")));
        }
        if !(cfg.magnitude_factor > 0.0 && cfg.magnitude_factor < 1.0) {
            return Err(ContractError::Config("reflect.json: magnitude_factor must lie in (0, 1)".into()));
        }
        Ok(cfg)
    }

    pub fn resume_stage(&self, reason: ReasonCategory) -> ResumeStage {
        self.resume_stage[&reason]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shipped_configs_load() {
        let d = DetectionRules::default();
        assert_eq!(d.max_missing_required, 2);
        let p = PlannerConfig::default();
        assert_eq!(p.max_updates_per_proposal, 3);
        assert_eq!(p.templates(PriorityId::Oxygenation)[0], vec![(Parameter::Fio2, -20.0), (Parameter::Peep, 2.0)]);
        let r = ReflectConfig::default();
        assert_eq!(r.resume_stage(ReasonCategory::WrongMode), ResumeStage::ModeSelect);
    }

    #[test]
    fn oversized_template_is_rejected() {
        let mut v: serde_json::Value = serde_json::from_str(PLANNER).unwrap();
        v["templates"]["weaning"][0] = serde_json::json!([["peep", 1.0], ["fio2", 1.0], ["pressure_support", 1.0], ["resp_rate_set", 1.0]]);
        assert!(PlannerConfig::from_json(&v.to_string()).is_err());
    }
}
