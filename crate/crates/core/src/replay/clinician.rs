//! Simulated clinicians with hidden preference weights.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::contracts::{ClinicianFeedback, PreferenceCategory, Proposal, ReasonCategory, SafetyReport};
use crate::workflow::{PendingReview, Reviewer};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AcceptanceMode {
    /// Accept iff alignment >= tau.
    Threshold { tau: f64 },
    /// Accept with probability sigmoid(gamma0 + gamma1 * alignment).
    Logistic { gamma0: f64, gamma1: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClinicianProfile {
    /// Hidden weight per category; absent categories weigh 0.
    pub weights: BTreeMap<PreferenceCategory, f64>,
    pub acceptance: AcceptanceMode,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("invalid clinician profile: {0}")]
pub struct ProfileError(pub String);

impl ClinicianProfile {
    /// Prefers small steps on one key parameter and staying in the current
    /// mode; indifferent to priorities.
    pub fn conservative(seed: u64) -> Self {
        use PreferenceCategory as C;
        ClinicianProfile {
            weights: BTreeMap::from([
                (C::ConservativeSmallStep, 1.0),
                (C::SingleKeyParameterFirst, 1.0),
                (C::StayInMode, 0.5),
            ]),
            acceptance: AcceptanceMode::Threshold { tau: 0.5 },
            seed,
        }
    }

    /// Accepts anything.
    pub fn permissive(seed: u64) -> Self {
        ClinicianProfile {
            weights: PreferenceCategory::ALL.iter().map(|&c| (c, 1.0)).collect(),
            acceptance: AcceptanceMode::Threshold { tau: 0.5 },
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), ProfileError> {
        if !self.weights.values().any(|w| *w != 0.0) {
            return Err(ProfileError("at least one weight must be nonzero".into()));
        }
        if self.weights.values().any(|w| !w.is_finite()) {
            return Err(ProfileError("weights must be finite".into()));
        }
        match self.acceptance {
            AcceptanceMode::Threshold { tau } if !(tau > 0.0 && tau <= 1.0) => {
                Err(ProfileError(format!("tau {tau} outside (0, 1]")))
            }
            AcceptanceMode::Logistic { gamma0, gamma1 } if !(gamma0.is_finite() && gamma1.is_finite()) => {
                Err(ProfileError("gammas must be finite".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn weight(&self, c: PreferenceCategory) -> f64 {
        self.weights.get(&c).copied().unwrap_or(0.0)
    }

    /// Mean hidden weight over the proposal's tags.
    pub fn alignment(&self, proposal: &Proposal) -> f64 {
        let tags = &proposal.category_tags;
        if tags.is_empty() {
            return 0.0;
        }
        tags.iter().map(|&c| self.weight(c)).sum::<f64>() / tags.len() as f64
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// A profile plus its seeded generator.
#[derive(Debug, Clone)]
pub struct SimulatedClinician {
    profile: ClinicianProfile,
    rng: ChaCha8Rng,
}

impl SimulatedClinician {
    pub fn new(profile: ClinicianProfile) -> Result<Self, ProfileError> {
        profile.validate()?;
        let rng = ChaCha8Rng::seed_from_u64(profile.seed);
        Ok(SimulatedClinician { profile, rng })
    }

    pub fn profile(&self) -> &ClinicianProfile {
        &self.profile
    }

    pub fn respond(&mut self, proposal: &Proposal, safety: &SafetyReport) -> ClinicianFeedback {
        if !safety.passed() {
            return ClinicianFeedback::reject(ReasonCategory::Feasibility, vec![], "failed safety checks");
        }
        let a = self.profile.alignment(proposal);
        let accept = match self.profile.acceptance {
            AcceptanceMode::Threshold { tau } => a >= tau,
            AcceptanceMode::Logistic { gamma0, gamma1 } => self.rng.gen_bool(sigmoid(gamma0 + gamma1 * a)),
        };
        if accept {
            return ClinicianFeedback::accept();
        }
        let reason = *ReasonCategory::ALL.choose(&mut self.rng).expect("non-empty");
        let params: Vec<_> = proposal.setting_updates.keys().copied().collect();
        let disputed = params.choose(&mut self.rng).copied().into_iter().collect();
        ClinicianFeedback::reject(reason, disputed, format!("alignment {a:.2}"))
    }
}

impl Reviewer for SimulatedClinician {
    fn review(&mut self, pending: &PendingReview) -> ClinicianFeedback {
        self.respond(&pending.proposal, &pending.safety)
    }
}

/// Accepts the first proposal it is shown.
#[derive(Debug, Clone, Copy, Default)]
pub struct AutoAccept;

impl Reviewer for AutoAccept {
    fn review(&mut self, _: &PendingReview) -> ClinicianFeedback {
        ClinicianFeedback::accept()
    }
}
