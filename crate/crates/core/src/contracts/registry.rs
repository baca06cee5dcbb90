//! Mode registry: which parameters each mode exposes, their bounds and
//! per-cycle step limits. Loaded from `config/mode_registry.json` and
//! `config/safety_limits.json`.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::types::{ModeId, Parameter, Proposal, VentilatorSettings};
use super::ContractError;

const DEFAULT_MODE_REGISTRY: &str = include_str!("../../../../config/mode_registry.json");
const DEFAULT_SAFETY_LIMITS: &str = include_str!("../../../../config/safety_limits.json");

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bounds {
    pub min: f64,
    pub max: f64,
}

impl Bounds {
    pub fn contains(&self, value: f64) -> bool {
        value >= self.min && value <= self.max
    }

    pub fn clamp(&self, value: f64) -> f64 {
        value.clamp(self.min, self.max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParameterLimits {
    pub min: f64,
    pub max: f64,
    pub max_delta: f64,
    /// Steps at or below this size count as conservative.
    pub small_step: f64,
    pub unit: String,
    /// Initial value when a mode change makes the parameter applicable.
    pub default: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SafetyLimits {
    pub version: u32,
    pub parameters: BTreeMap<Parameter, ParameterLimits>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModeEntry {
    id: ModeId,
    display_name: String,
    brand: String,
    applicable: BTreeSet<Parameter>,
    #[serde(default)]
    bounds: BTreeMap<Parameter, Bounds>,
    #[serde(default)]
    max_delta: BTreeMap<Parameter, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModeFile {
    version: u32,
    modes: Vec<ModeEntry>,
}

/// Resolved description of one mode.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModeSpec {
    pub id: ModeId,
    pub display_name: String,
    pub brand: String,
    pub applicable: BTreeSet<Parameter>,
    pub bounds: BTreeMap<Parameter, Bounds>,
    pub max_delta: BTreeMap<Parameter, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModeRegistry {
    modes: Vec<ModeSpec>,
    limits: SafetyLimits,
}

impl Default for ModeRegistry {
    fn default() -> Self {
        ModeRegistry::from_json(DEFAULT_MODE_REGISTRY, DEFAULT_SAFETY_LIMITS)
            .expect("shipped registry is valid")
    }
}

impl ModeRegistry {
    pub fn from_json(modes_json: &str, limits_json: &str) -> Result<Self, ContractError> {
        let file: ModeFile = serde_json::from_str(modes_json)
            .map_err(|e| ContractError::Config(format!("mode registry: {e}")))?;
        let limits: SafetyLimits = serde_json::from_str(limits_json)
            .map_err(|e| ContractError::Config(format!("safety limits: {e}")))?;
        Self::build(file, limits)
    }

    fn build(file: ModeFile, limits: SafetyLimits) -> Result<Self, ContractError> {
        if file.modes.len() < 4 {
            return Err(ContractError::Config(format!(
                "mode registry defines {} modes, at least 4 required",
                file.modes.len()
            )));
        }
        for p in Parameter::ALL {
            let l = limits
                .parameters
                .get(&p)
                .ok_or_else(|| ContractError::Config(format!("safety limits missing {p}")))?;
            if !(l.min < l.max) || !(l.max_delta > 0.0) || !(l.small_step > 0.0) {
                return Err(ContractError::Config(format!("invalid limits for {p}")));
            }
        }
        let mut seen = BTreeSet::new();
        let mut modes = Vec::with_capacity(file.modes.len());
        for entry in file.modes {
            if !seen.insert(entry.id.clone()) {
                return Err(ContractError::Config(format!("duplicate mode {}", entry.id)));
            }
            let mut bounds = BTreeMap::new();
            let mut max_delta = BTreeMap::new();
            for &p in &entry.applicable {
                let global = &limits.parameters[&p];
                let b = entry.bounds.get(&p).copied().unwrap_or(Bounds {
                    min: global.min,
                    max: global.max,
                });
                let d = entry.max_delta.get(&p).copied().unwrap_or(global.max_delta);
                if !(b.min < b.max) || !(d > 0.0) {
                    return Err(ContractError::Config(format!(
                        "invalid bounds for {p} in mode {}",
                        entry.id
                    )));
                }
                bounds.insert(p, b);
                max_delta.insert(p, d);
            }
            modes.push(ModeSpec {
                id: entry.id,
                display_name: entry.display_name,
                brand: entry.brand,
                applicable: entry.applicable,
                bounds,
                max_delta,
            });
        }
        Ok(ModeRegistry { modes, limits })
    }

    pub fn modes(&self) -> &[ModeSpec] {
        &self.modes
    }

    pub fn mode(&self, id: &ModeId) -> Option<&ModeSpec> {
        self.modes.iter().find(|m| &m.id == id)
    }

    pub fn require(&self, id: &ModeId) -> Result<&ModeSpec, ContractError> {
        self.mode(id)
            .ok_or_else(|| ContractError::UnknownMode(id.clone()))
    }

    pub fn contains(&self, id: &ModeId) -> bool {
        self.mode(id).is_some()
    }

    pub fn limits(&self) -> &SafetyLimits {
        &self.limits
    }

    pub fn parameter_limits(&self, p: Parameter) -> &ParameterLimits {
        &self.limits.parameters[&p]
    }

    pub fn is_applicable(&self, mode: &ModeId, p: Parameter) -> bool {
        self.mode(mode).is_some_and(|m| m.applicable.contains(&p))
    }

    /// The value a parameter is measured against when a proposal changes it:
    /// its current value, or the registry default when the parameter only
    /// becomes applicable through a mode change.
    pub fn baseline(&self, current: &VentilatorSettings, p: Parameter) -> f64 {
        current
            .get(p)
            .unwrap_or_else(|| self.parameter_limits(p).default)
    }

    /// Settings that result from applying `proposal` to `current`.
    pub fn apply(
        &self,
        current: &VentilatorSettings,
        proposal: &Proposal,
    ) -> Result<VentilatorSettings, ContractError> {
        let target = proposal.target_mode(current).clone();
        let spec = self.require(&target)?;
        let mut next = VentilatorSettings::new(target);
        for &p in &spec.applicable {
            let value = proposal
                .setting_updates
                .get(&p)
                .copied()
                .unwrap_or_else(|| self.baseline(current, p));
            next.set(p, Some(value));
        }
        Ok(next)
    }
}

/// Remove parameters that are inapplicable in the settings' mode.
pub fn mask_settings(
    settings: &VentilatorSettings,
    registry: &ModeRegistry,
) -> Result<VentilatorSettings, ContractError> {
    let spec = registry.require(&settings.mode)?;
    let mut masked = settings.clone();
    for p in Parameter::ALL {
        if !spec.applicable.contains(&p) {
            masked.set(p, None);
        }
    }
    Ok(masked)
}
