//! Regret studies: one simulated clinician reviewing a sequence of cycles.

use std::fmt;
use std::str::FromStr;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::agents::AgentRuntime;
use crate::bandit::cycle_regret;
use crate::contracts::{CycleStatus, ModeRegistry};
use crate::memory::LongTermLog;
use crate::workflow::{Engine, EngineConfig, EngineError};

use super::clinician::{ClinicianProfile, ProfileError, SimulatedClinician};
use super::synth::study_inputs;

/// Seed of the shipped default study.
pub const DEFAULT_STUDY_SEED: u64 = 0;
pub const DEFAULT_STUDY_CYCLES: usize = 100;
pub const ROLLING_WINDOW: usize = 10;
pub const STUDY_CLINICIAN: &str = "sim-clinician";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Full,
    NoPref,
    NoImg,
    NoImgNoPref,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Full, Variant::NoPref, Variant::NoImg, Variant::NoImgNoPref];

    pub fn uses_waveform(self) -> bool {
        matches!(self, Variant::Full | Variant::NoPref)
    }

    pub fn uses_preference(self) -> bool {
        matches!(self, Variant::Full | Variant::NoImg)
    }

    pub fn cli_name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoPref => "nopref",
            Variant::NoImg => "noimg",
            Variant::NoImgNoPref => "both",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.cli_name())
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Variant::ALL
            .into_iter()
            .find(|v| v.cli_name() == s)
            .ok_or_else(|| format!("unknown variant `{s}` (expected full, nopref, noimg or both)"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegretSeries {
    pub variant: Variant,
    pub seed: u64,
    pub k_max: u32,
    /// Per-cycle regret; `None` for failed cycles.
    pub regrets: Vec<Option<u32>>,
    pub statuses: Vec<CycleStatus>,
    /// Mean of the defined regrets among the last ten cycles.
    pub rolling_mean_10: Vec<Option<f64>>,
}

impl RegretSeries {
    pub fn from_regrets(variant: Variant, seed: u64, k_max: u32, regrets: Vec<Option<u32>>, statuses: Vec<CycleStatus>) -> Self {
        let rolling_mean_10 = (0..regrets.len())
            .map(|i| window_mean(&regrets[(i + 1).saturating_sub(ROLLING_WINDOW)..=i]))
            .collect();
        RegretSeries {
            variant,
            seed,
            k_max,
            regrets,
            statuses,
            rolling_mean_10,
        }
    }

    /// Mean regret over cycles `first..=last`, 1-based, ignoring failures.
    pub fn mean_over(&self, first: usize, last: usize) -> Option<f64> {
        let last = last.min(self.regrets.len());
        if first == 0 || first > last {
            return None;
        }
        window_mean(&self.regrets[first - 1..last])
    }

    /// Mean over the first `w` cycles.
    pub fn early_mean(&self, w: usize) -> Option<f64> {
        self.mean_over(1, w)
    }

    /// Mean over the last `w` cycles.
    pub fn late_mean(&self, w: usize) -> Option<f64> {
        let n = self.regrets.len();
        self.mean_over((n + 1).saturating_sub(w).max(1), n)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("cycle_index,regret,rolling_mean_10\n");
        for (i, (r, m)) in self.regrets.iter().zip(&self.rolling_mean_10).enumerate() {
            let r = r.map(|r| r.to_string()).unwrap_or_default();
            let m = m.map(|m| format!("{m:.4}")).unwrap_or_default();
            out.push_str(&format!("{},{r},{m}\n", i + 1));
        }
        out
    }
}

fn window_mean(xs: &[Option<u32>]) -> Option<f64> {
    let defined: Vec<f64> = xs.iter().flatten().map(|&r| r as f64).collect();
    (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64)
}

#[derive(Debug, thiserror::Error)]
pub enum StudyError {
    #[error("n_cycles must be >= 1")]
    NoCycles,
    #[error(transparent)]
    Profile(#[from] ProfileError),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

/// Run `n_cycles` scripted cycles reviewed by one simulated clinician.
/// The clinician's preference state lives in the shared log and carries over
/// between cycles; NoPref variants rank with uniform scores throughout.
pub fn run_regret_study(
    n_cycles: usize,
    profile: &ClinicianProfile,
    config: &EngineConfig,
    variant: Variant,
    seed: u64,
) -> Result<RegretSeries, StudyError> {
    if n_cycles == 0 {
        return Err(StudyError::NoCycles);
    }
    let registry = Arc::new(ModeRegistry::default());
    let mut config = config.clone();
    config.enable_waveform &= variant.uses_waveform();
    config.enable_preference &= variant.uses_preference();
    config.seed = seed;
    let engine = Engine::new(
        Arc::new(AgentRuntime::scripted()),
        Arc::new(Mutex::new(LongTermLog::in_memory())),
        config,
    )?;
    let mut clinician = SimulatedClinician::new(ClinicianProfile {
        seed: profile.seed ^ seed,
        ..profile.clone()
    })?;
    let k_max = engine.config().k_max;
    let mut regrets = Vec::with_capacity(n_cycles);
    let mut statuses = Vec::with_capacity(n_cycles);
    for input in study_inputs(n_cycles, seed, STUDY_CLINICIAN, &registry) {
        let closed = engine.run_cycle(input, &mut clinician)?;
        regrets.push(cycle_regret(&closed.record, k_max));
        statuses.push(closed.record.status);
    }
    Ok(RegretSeries::from_regrets(variant, seed, k_max, regrets, statuses))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.cli_name().parse::<Variant>().unwrap(), v);
        }
        assert!("x".parse::<Variant>().is_err());
    }

    #[test]
    fn rolling_mean_skips_failures() {
        let s = RegretSeries::from_regrets(
            Variant::Full,
            0,
            5,
            vec![Some(2), None, Some(4)],
            vec![CycleStatus::Accepted, CycleStatus::Failed, CycleStatus::Accepted],
        );
        assert_eq!(s.rolling_mean_10, vec![Some(2.0), Some(2.0), Some(3.0)]);
        assert_eq!(s.to_csv(), "cycle_index,regret,rolling_mean_10\n1,2,2.0000\n2,,2.0000\n3,4,3.0000\n");
        assert_eq!(s.mean_over(1, 2), Some(2.0));
        assert_eq!(s.late_mean(1), Some(4.0));
    }

    #[test]
    fn permissive_clinician_has_zero_regret() {
        let s = run_regret_study(20, &ClinicianProfile::permissive(1), &EngineConfig::default(), Variant::Full, 3).unwrap();
        assert!(s.regrets.iter().all(|r| r.is_none_or(|r| r == 0)), "{:?}", s.regrets);
    }

    #[test]
    fn same_seed_same_csv() {
        let run = || {
            run_regret_study(30, &ClinicianProfile::conservative(2), &EngineConfig::default(), Variant::Full, 11)
                .unwrap()
                .to_csv()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn zero_cycles_is_an_error() {
        let r = run_regret_study(0, &ClinicianProfile::permissive(1), &EngineConfig::default(), Variant::Full, 3);
        assert!(matches!(r, Err(StudyError::NoCycles)));
    }
}
