//! Per-clinician contextual bandit over the twelve preference categories.
//!
//! Each arm keeps a ridge-regression model `A_a = λI + Σ x xᵀ`, `b_a = Σ r x`
//! over the cycle context features. Arms are not pulled one at a time:
//! their optimistic scores rank candidate proposals, and the state changes
//! only once per resolved cycle, from the preference signal extracted at
//! closure (accepted categories with reward +1, categories seen only on
//! rejected proposals with reward -beta).

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::contracts::{
    ArmScore, CategoryScores, CycleRecord, CycleStatus, Phase, PatientState, PreferenceCategory, PreferenceSignal,
    Proposal, TraceEntry, VentilatorSettings, FEATURE_DIM,
};

pub use crate::contracts::PreferenceCategory as Arm;

const DEFAULT_BANDIT_CONFIG: &str = include_str!("../../../config/bandit.json");

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum BanditError {
    #[error("context has dimension {found}, expected {expected}")]
    Dimension { expected: usize, found: usize },
    #[error("context contains a non-finite value at index {0}")]
    NonFinite(usize),
    #[error("design matrix of arm {0} is not positive definite")]
    NotPositiveDefinite(PreferenceCategory),
    #[error("bandit update requires an accepted cycle")]
    NotAccepted,
    #[error("preference signal subsets overlap")]
    SignalOverlap,
    #[error("invalid bandit configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct BanditParams {
    /// Ridge prior strength.
    pub lambda: f64,
    /// Exploration weight on the confidence width.
    pub alpha: f64,
    /// Weight of negative evidence from rejected proposals.
    pub beta: f64,
}

impl Default for BanditParams {
    fn default() -> Self {
        BanditParams {
            lambda: 1.0,
            alpha: 1.0,
            beta: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureStat {
    pub mean: f64,
    pub std: f64,
}

/// Reference statistics used to z-score context features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureReference {
    pub spo2: FeatureStat,
    pub fio2: FeatureStat,
    pub peep: FeatureStat,
    pub resp_rate_obs: FeatureStat,
    pub ph: FeatureStat,
    pub paco2: FeatureStat,
}

/// Contents of `config/bandit.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BanditConfig {
    pub version: u32,
    pub lambda: f64,
    pub alpha: f64,
    pub beta: f64,
    /// Apply hold-cycle signals (defer_when_insufficient) to the bandit.
    pub apply_hold_updates: bool,
    pub feature_reference: FeatureReference,
}

impl Default for BanditConfig {
    fn default() -> Self {
        BanditConfig::from_json(DEFAULT_BANDIT_CONFIG).expect("shipped bandit config is valid")
    }
}

impl BanditConfig {
    pub fn from_json(json: &str) -> Result<Self, BanditError> {
        let cfg: BanditConfig = serde_json::from_str(json).map_err(|e| BanditError::Config(e.to_string()))?;
        if !(cfg.lambda > 0.0) || !(cfg.alpha >= 0.0) || !(cfg.beta >= 0.0) {
            return Err(BanditError::Config("lambda must be > 0, alpha and beta >= 0".into()));
        }
        let r = &cfg.feature_reference;
        for s in [r.spo2, r.fio2, r.peep, r.resp_rate_obs, r.ph, r.paco2] {
            if !(s.std > 0.0) {
                return Err(BanditError::Config("feature reference std must be > 0".into()));
            }
        }
        Ok(cfg)
    }

    pub fn params(&self) -> BanditParams {
        BanditParams {
            lambda: self.lambda,
            alpha: self.alpha,
            beta: self.beta,
        }
    }

    pub fn featurizer(&self) -> ContextFeaturizer {
        ContextFeaturizer {
            reference: self.feature_reference.clone(),
        }
    }
}

/// Raw inputs the featurizer reads from a cycle.
#[derive(Debug, Clone, Copy)]
pub struct FeatureInputs<'a> {
    pub state: &'a PatientState,
    pub settings: &'a VentilatorSettings,
    pub phase: Option<Phase>,
    pub asynchrony: bool,
    pub evidence_sufficient: bool,
}

/// Fixed map from cycle context to a 12-dimensional feature vector:
/// z-scored spo2, fio2, peep, observed rate, ph and paco2; phase one-hot;
/// asynchrony flag; evidence-sufficient flag; constant 1. Missing
/// measurements z-score to 0.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextFeaturizer {
    pub reference: FeatureReference,
}

impl Default for ContextFeaturizer {
    fn default() -> Self {
        BanditConfig::default().featurizer()
    }
}

impl ContextFeaturizer {
    pub fn featurize(&self, inputs: FeatureInputs<'_>) -> Vec<f64> {
        let r = &self.reference;
        let z = |v: Option<f64>, s: FeatureStat| v.filter(|x| x.is_finite()).map_or(0.0, |x| (x - s.mean) / s.std);
        let flag = |b: bool| if b { 1.0 } else { 0.0 };
        let x = vec![
            z(inputs.state.spo2, r.spo2),
            z(inputs.settings.fio2, r.fio2),
            z(inputs.settings.peep, r.peep),
            z(inputs.state.resp_rate_obs, r.resp_rate_obs),
            z(inputs.state.ph, r.ph),
            z(inputs.state.paco2, r.paco2),
            flag(inputs.phase == Some(Phase::Acute)),
            flag(inputs.phase == Some(Phase::Stabilization)),
            flag(inputs.phase == Some(Phase::Weaning)),
            flag(inputs.asynchrony),
            flag(inputs.evidence_sufficient),
            1.0,
        ];
        debug_assert_eq!(x.len(), FEATURE_DIM);
        x
    }
}

/// One arm's ridge statistics. `design` is row-major F×F.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct ArmState {
    pub category: PreferenceCategory,
    pub design: Vec<f64>,
    pub response: Vec<f64>,
}

impl ArmState {
    fn fresh(category: PreferenceCategory, lambda: f64) -> Self {
        let mut design = vec![0.0; FEATURE_DIM * FEATURE_DIM];
        for i in 0..FEATURE_DIM {
            design[i * FEATURE_DIM + i] = lambda;
        }
        ArmState {
            category,
            design,
            response: vec![0.0; FEATURE_DIM],
        }
    }

    fn add(&mut self, x: &[f64], reward: f64) {
        let n = FEATURE_DIM;
        for i in 0..n {
            for j in 0..n {
                self.design[i * n + j] += x[i] * x[j];
            }
            self.response[i] += reward * x[i];
        }
    }

    /// Ridge estimate `A⁻¹ b`.
    pub fn theta(&self) -> Result<Vec<f64>, BanditError> {
        let l = cholesky(&self.design, FEATURE_DIM).ok_or(BanditError::NotPositiveDefinite(self.category))?;
        Ok(cholesky_solve(&l, FEATURE_DIM, &self.response))
    }

    /// Mean `xᵀθ` and confidence width `sqrt(xᵀA⁻¹x)`.
    pub fn mean_and_width(&self, x: &[f64]) -> Result<(f64, f64), BanditError> {
        let n = FEATURE_DIM;
        let l = cholesky(&self.design, n).ok_or(BanditError::NotPositiveDefinite(self.category))?;
        let theta = cholesky_solve(&l, n, &self.response);
        let mean = dot(x, &theta);
        let y = forward_substitute(&l, n, x);
        Ok((mean, dot(&y, &y).sqrt()))
    }

    pub fn is_positive_definite(&self) -> bool {
        cholesky(&self.design, FEATURE_DIM).is_some()
    }
}

/// Bandit state θ_d for one clinician.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct PreferenceState {
    pub clinician_id: String,
    pub params: BanditParams,
    pub arms: Vec<ArmState>,
    /// Total arm updates applied.
    pub update_count: u64,
    /// Cycle-end updates applied.
    pub cycles_applied: u64,
}

impl PreferenceState {
    pub fn fresh(clinician_id: impl Into<String>, params: BanditParams) -> Self {
        PreferenceState {
            clinician_id: clinician_id.into(),
            params,
            arms: PreferenceCategory::ALL
                .iter()
                .map(|&c| ArmState::fresh(c, params.lambda))
                .collect(),
            update_count: 0,
            cycles_applied: 0,
        }
    }

    pub fn arm(&self, category: PreferenceCategory) -> &ArmState {
        &self.arms[category.index()]
    }
}

fn check_context(x: &[f64]) -> Result<(), BanditError> {
    if x.len() != FEATURE_DIM {
        return Err(BanditError::Dimension {
            expected: FEATURE_DIM,
            found: x.len(),
        });
    }
    if let Some(i) = x.iter().position(|v| !v.is_finite()) {
        return Err(BanditError::NonFinite(i));
    }
    Ok(())
}

/// Optimistic score of every arm at context `x`:
/// `xᵀθ_a + alpha·sqrt(xᵀA_a⁻¹x)`.
pub fn preference_scores(state: &PreferenceState, x: &[f64]) -> Result<CategoryScores, BanditError> {
    check_context(x)?;
    let alpha = state.params.alpha;
    let arms = state
        .arms
        .iter()
        .map(|arm| {
            let (mean, uncertainty) = arm.mean_and_width(x)?;
            Ok(ArmScore {
                category: arm.category,
                score: mean + alpha * uncertainty,
                mean,
                uncertainty,
            })
        })
        .collect::<Result<Vec<_>, BanditError>>()?;
    Ok(CategoryScores { arms })
}

/// Apply a preference signal at context `x` without requiring acceptance.
/// Used directly for hold-cycle signals when that is enabled; accepted
/// cycles go through [`bandit_update`].
pub fn apply_signal(state: &PreferenceState, x: &[f64], signal: &PreferenceSignal) -> Result<PreferenceState, BanditError> {
    check_context(x)?;
    if !signal.evidenced_by_accept.is_disjoint(&signal.evidenced_only_by_reject) {
        return Err(BanditError::SignalOverlap);
    }
    let mut next = state.clone();
    for &c in &signal.evidenced_by_accept {
        next.arms[c.index()].add(x, 1.0);
        next.update_count += 1;
    }
    for &c in &signal.evidenced_only_by_reject {
        next.arms[c.index()].add(x, -state.params.beta);
        next.update_count += 1;
    }
    next.cycles_applied += 1;
    Ok(next)
}

/// The single cycle-end update. `accepted` is the clinician-approved
/// configuration; without one there is nothing to learn from and the call
/// is refused. `trace` is carried for auditability: its content enters the
/// update only through `signal`, which the note generator derived from it.
pub fn bandit_update(
    state: &PreferenceState,
    x: &[f64],
    accepted: Option<&VentilatorSettings>,
    _trace: &[TraceEntry],
    signal: &PreferenceSignal,
) -> Result<PreferenceState, BanditError> {
    if accepted.is_none() {
        return Err(BanditError::NotAccepted);
    }
    apply_signal(state, x, signal)
}

/// Order candidates by the mean score of their tags, best first. Ties go to
/// the candidate with fewer setting updates, then to input order.
pub fn rank_candidates(candidates: Vec<Proposal>, scores: &CategoryScores) -> Vec<Proposal> {
    let key = |p: &Proposal| {
        if p.category_tags.is_empty() {
            return f64::NEG_INFINITY;
        }
        p.category_tags.iter().map(|&c| scores.score(c)).sum::<f64>() / p.category_tags.len() as f64
    };
    let mut keyed: Vec<(f64, Proposal)> = candidates.into_iter().map(|p| (key(&p), p)).collect();
    keyed.sort_by(|(ka, a), (kb, b)| {
        kb.total_cmp(ka)
            .then(a.setting_updates.len().cmp(&b.setting_updates.len()))
    });
    keyed.into_iter().map(|(_, p)| p).collect()
}

/// Rejected proposals before acceptance, `K_t - 1`; `k_max` for exhausted
/// cycles; 0 for holds. Failed cycles have no regret and return `None`.
pub fn cycle_regret(record: &CycleRecord, k_max: u32) -> Option<u32> {
    match record.status {
        CycleStatus::Accepted => Some(record.rounds.saturating_sub(1).min(k_max)),
        CycleStatus::Exhausted => Some(k_max),
        CycleStatus::Hold => Some(0),
        CycleStatus::Failed => None,
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Lower-triangular Cholesky factor of a row-major SPD matrix.
fn cholesky(a: &[f64], n: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a[i * n + j];
            for k in 0..j {
                sum -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if !(sum > 0.0) || !sum.is_finite() {
                    return None;
                }
                l[i * n + i] = sum.sqrt();
            } else {
                l[i * n + j] = sum / l[j * n + j];
            }
        }
    }
    Some(l)
}

fn forward_substitute(l: &[f64], n: usize, b: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut sum = b[i];
        for k in 0..i {
            sum -= l[i * n + k] * y[k];
        }
        y[i] = sum / l[i * n + i];
    }
    y
}

fn cholesky_solve(l: &[f64], n: usize, b: &[f64]) -> Vec<f64> {
    let y = forward_substitute(l, n, b);
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut sum = y[i];
        for k in i + 1..n {
            sum -= l[k * n + i] * x[k];
        }
        x[i] = sum / l[i * n + i];
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contracts::PriorityId;
    use nalgebra::{DMatrix, DVector};
    use proptest::prelude::*;
    use std::collections::{BTreeMap, BTreeSet};

    use PreferenceCategory as C;

    fn unit(i: usize) -> Vec<f64> {
        let mut x = vec![0.0; FEATURE_DIM];
        x[i] = 1.0;
        x
    }

    fn settings() -> VentilatorSettings {
        VentilatorSettings::new("PRVC")
    }

    fn signal(accept: &[C], reject: &[C]) -> PreferenceSignal {
        PreferenceSignal {
            evidenced_by_accept: accept.iter().copied().collect(),
            evidenced_only_by_reject: reject.iter().copied().collect(),
        }
    }

    fn fresh() -> PreferenceState {
        PreferenceState::fresh("d1", BanditParams::default())
    }

    /// Independent dense solve of the ridge system for one arm.
    fn dense_theta(arm: &ArmState) -> DVector<f64> {
        let a = DMatrix::from_row_slice(FEATURE_DIM, FEATURE_DIM, &arm.design);
        let b = DVector::from_column_slice(&arm.response);
        a.lu().solve(&b).unwrap()
    }

    #[test]
    fn fresh_state_unit_context_scores_one() {
        let s = preference_scores(&fresh(), &unit(3)).unwrap();
        for arm in &s.arms {
            assert_eq!(arm.mean, 0.0);
            assert!((arm.uncertainty - 1.0).abs() < 1e-15);
            assert!((arm.score - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_context_scores_zero() {
        let s = preference_scores(&fresh(), &[0.0; FEATURE_DIM]).unwrap();
        assert!(s.arms.iter().all(|a| a.score == 0.0));
    }

    #[test]
    fn one_update_gives_half() {
        let x = unit(0);
        let s = bandit_update(&fresh(), &x, Some(&settings()), &[], &signal(&[C::ModeLevelChange], &[])).unwrap();
        let theta = s.arm(C::ModeLevelChange).theta().unwrap();
        assert!((theta[0] - 0.5).abs() < 1e-15);
        assert!(theta[1..].iter().all(|v| *v == 0.0));
        let oracle = dense_theta(s.arm(C::ModeLevelChange));
        assert!((oracle[0] - 0.5).abs() < 1e-12);

        let mut no_explore = s.clone();
        no_explore.params.alpha = 0.0;
        let scores = preference_scores(&no_explore, &x).unwrap();
        assert!((scores.score(C::ModeLevelChange) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn empty_signal_changes_only_counters() {
        let before = fresh();
        let after = bandit_update(&before, &unit(1), Some(&settings()), &[], &signal(&[], &[])).unwrap();
        assert_eq!(after.arms, before.arms);
        assert_eq!(after.update_count, 0);
        assert_eq!(after.cycles_applied, 1);
    }

    #[test]
    fn conservative_update_matrix() {
        let s = bandit_update(&fresh(), &unit(0), Some(&settings()), &[], &signal(&[C::ConservativeSmallStep], &[])).unwrap();
        let arm = s.arm(C::ConservativeSmallStep);
        for i in 0..FEATURE_DIM {
            for j in 0..FEATURE_DIM {
                let expected = if i != j { 0.0 } else if i == 0 { 2.0 } else { 1.0 };
                assert_eq!(arm.design[i * FEATURE_DIM + j], expected);
            }
        }
        assert_eq!(arm.response, unit(0));
        assert_eq!(s.update_count, 1);
    }

    #[test]
    fn negative_evidence_uses_beta() {
        let x = unit(1);
        let s = bandit_update(&fresh(), &x, Some(&settings()), &[], &signal(&[C::PrioOxygenation], &[C::TargetDrivenAssertive])).unwrap();
        assert_eq!(s.arm(C::PrioOxygenation).response, x);
        let neg: Vec<f64> = x.iter().map(|v| -0.5 * v).collect();
        assert_eq!(s.arm(C::TargetDrivenAssertive).response, neg);
    }

    #[test]
    fn beta_zero_is_supported() {
        let mut state = fresh();
        state.params.beta = 0.0;
        let s = bandit_update(&state, &unit(2), Some(&settings()), &[], &signal(&[], &[C::TargetDrivenAssertive])).unwrap();
        assert!(s.arm(C::TargetDrivenAssertive).response.iter().all(|v| *v == 0.0));
        // The arm still gains information, so its width shrinks.
        assert_eq!(s.arm(C::TargetDrivenAssertive).design[2 * FEATURE_DIM + 2], 2.0);
    }

    #[test]
    fn update_requires_acceptance_and_disjoint_signal() {
        let err = bandit_update(&fresh(), &unit(0), None, &[], &signal(&[C::StayInMode], &[])).unwrap_err();
        assert_eq!(err, BanditError::NotAccepted);
        let err = bandit_update(&fresh(), &unit(0), Some(&settings()), &[], &signal(&[C::StayInMode], &[C::StayInMode])).unwrap_err();
        assert_eq!(err, BanditError::SignalOverlap);
    }

    #[test]
    fn non_finite_context_is_an_error() {
        let mut x = unit(0);
        x[4] = f64::NAN;
        assert_eq!(preference_scores(&fresh(), &x).unwrap_err(), BanditError::NonFinite(4));
        assert!(matches!(preference_scores(&fresh(), &[1.0]), Err(BanditError::Dimension { .. })));
    }

    fn candidate(tags: &[C], n_updates: usize) -> Proposal {
        let mut updates = BTreeMap::new();
        for p in crate::contracts::Parameter::ALL.iter().take(n_updates) {
            updates.insert(*p, 1.0);
        }
        Proposal {
            cycle_id: "c".into(),
            round_index: 1,
            strategy: PriorityId::Oxygenation,
            mode_change: None,
            setting_updates: updates,
            category_tags: tags.iter().copied().collect(),
            rationale: String::new(),
        }
    }

    fn scores_with(pairs: &[(C, f64)]) -> CategoryScores {
        let mut s = CategoryScores::uniform();
        for (c, v) in pairs {
            s.arms[c.index()].score = *v;
        }
        s
    }

    #[test]
    fn ranking_orders_by_key() {
        let s = scores_with(&[(C::ConservativeSmallStep, 2.0), (C::TargetDrivenAssertive, 1.0)]);
        let ranked = rank_candidates(vec![candidate(&[C::TargetDrivenAssertive], 1), candidate(&[C::ConservativeSmallStep], 1)], &s);
        assert_eq!(ranked[0].category_tags, BTreeSet::from([C::ConservativeSmallStep]));
    }

    #[test]
    fn ranking_tie_breaks_on_fewer_updates() {
        let s = CategoryScores::uniform();
        let ranked = rank_candidates(vec![candidate(&[C::StayInMode], 2), candidate(&[C::PrioWeaning], 1)], &s);
        assert_eq!(ranked[0].setting_updates.len(), 1);
    }

    #[test]
    fn uniform_scores_preserve_input_order() {
        let s = preference_scores(&fresh(), &unit(11)).unwrap();
        let input: Vec<Proposal> = C::ALL.iter().map(|&c| candidate(&[c], 1)).collect();
        let ranked = rank_candidates(input.clone(), &s);
        // Brute-force check: every adjacent pair is in input order.
        for w in ranked.windows(2) {
            let i = input.iter().position(|p| *p == w[0]).unwrap();
            let j = input.iter().position(|p| *p == w[1]).unwrap();
            assert!(i < j);
        }
    }

    fn record(status: CycleStatus, rounds: u32) -> CycleRecord {
        use crate::contracts::*;
        let entry = |accept: bool| TraceEntry {
            proposal: candidate(&[C::StayInMode], 1),
            feedback: if accept {
                ClinicianFeedback::accept()
            } else {
                ClinicianFeedback::reject(ReasonCategory::Other, vec![], "")
            },
            safety: SafetyReport::from_parts(vec![], vec![]),
            preference_context: vec![],
        };
        let trace = (0..rounds)
            .map(|k| entry(status == CycleStatus::Accepted && k + 1 == rounds))
            .collect();
        CycleRecord {
            cycle_id: "c".into(),
            encounter_id: "e".into(),
            clinician_id: "d".into(),
            context: CycleContext {
                current_state: PatientState::nominal(0.0),
                current_settings: settings(),
                short_term: vec![],
                long_term_refs: vec![],
                feature_vector: vec![0.0; FEATURE_DIM],
            },
            trace,
            rounds,
            accepted_settings: None,
            note: "n".into(),
            preference_signal: PreferenceSignal::default(),
            status,
            evidence: Default::default(),
            failure: None,
        }
    }

    #[test]
    fn regret_semantics() {
        assert_eq!(cycle_regret(&record(CycleStatus::Accepted, 1), 5), Some(0));
        assert_eq!(cycle_regret(&record(CycleStatus::Accepted, 3), 5), Some(2));
        assert_eq!(cycle_regret(&record(CycleStatus::Exhausted, 5), 5), Some(5));
        assert_eq!(cycle_regret(&record(CycleStatus::Hold, 0), 5), Some(0));
        assert_eq!(cycle_regret(&record(CycleStatus::Failed, 2), 5), None);
    }

    #[test]
    fn featurizer_shape() {
        let f = ContextFeaturizer::default();
        let state = PatientState::nominal(0.0);
        let s = VentilatorSettings::new("PRVC").with(crate::contracts::Parameter::Fio2, 45.0);
        let x = f.featurize(FeatureInputs {
            state: &state,
            settings: &s,
            phase: Some(Phase::Weaning),
            asynchrony: true,
            evidence_sufficient: false,
        });
        assert_eq!(x.len(), FEATURE_DIM);
        assert_eq!(x[11], 1.0);
        assert_eq!(x[1], 0.0);
        assert_eq!(x[2], 0.0); // missing peep imputes the reference mean
        assert_eq!(&x[6..11], &[0.0, 0.0, 1.0, 1.0, 0.0]);
        assert!(x.iter().all(|v| v.is_finite()));
    }

    fn arb_context() -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(-3.0f64..3.0, FEATURE_DIM)
    }

    fn arb_signal() -> impl Strategy<Value = PreferenceSignal> {
        proptest::collection::vec(0u8..3, 12).prop_map(|v| {
            let mut s = PreferenceSignal::default();
            for (i, k) in v.into_iter().enumerate() {
                match k {
                    1 => {
                        s.evidenced_by_accept.insert(C::ALL[i]);
                    }
                    2 => {
                        s.evidenced_only_by_reject.insert(C::ALL[i]);
                    }
                    _ => {}
                }
            }
            s
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn stays_positive_definite_and_isolates_arms(
            steps in proptest::collection::vec((arb_context(), arb_signal()), 1..20)
        ) {
            let mut state = fresh();
            for (x, sig) in steps {
                let next = bandit_update(&state, &x, Some(&settings()), &[], &sig).unwrap();
                for c in C::ALL {
                    if !sig.evidenced_by_accept.contains(&c) && !sig.evidenced_only_by_reject.contains(&c) {
                        prop_assert_eq!(next.arm(c), state.arm(c));
                    }
                }
                state = next;
            }
            prop_assert!(state.arms.iter().all(ArmState::is_positive_definite));
        }

        #[test]
        fn incremental_matches_dense_batch(
            steps in proptest::collection::vec((arb_context(), arb_signal()), 1..15)
        ) {
            let mut state = fresh();
            let mut a: Vec<DMatrix<f64>> = (0..12).map(|_| DMatrix::identity(FEATURE_DIM, FEATURE_DIM)).collect();
            let mut b: Vec<DVector<f64>> = (0..12).map(|_| DVector::zeros(FEATURE_DIM)).collect();
            for (x, sig) in &steps {
                state = apply_signal(&state, x, sig).unwrap();
                let xv = DVector::from_column_slice(x);
                for c in &sig.evidenced_by_accept {
                    a[c.index()] += &xv * xv.transpose();
                    b[c.index()] += &xv;
                }
                for c in &sig.evidenced_only_by_reject {
                    a[c.index()] += &xv * xv.transpose();
                    b[c.index()] -= &xv * 0.5;
                }
            }
            for c in C::ALL {
                let batch = a[c.index()].clone().lu().solve(&b[c.index()]).unwrap();
                let inc = state.arm(c).theta().unwrap();
                let scale = batch.norm().max(1.0);
                for i in 0..FEATURE_DIM {
                    prop_assert!((inc[i] - batch[i]).abs() / scale < 1e-9);
                }
            }
        }
    }

    #[test]
    fn rewarded_arm_has_highest_mean() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let preferred = C::ConservativeSmallStep;
        let mut state = fresh();
        let sample = |rng: &mut rand_chacha::ChaCha8Rng| {
            let mut x: Vec<f64> = (0..FEATURE_DIM).map(|_| rng.gen_range(-1.0..1.0)).collect();
            x[11] = 1.0;
            x
        };
        for _ in 0..120 {
            let x = sample(&mut rng);
            let others: Vec<C> = C::ALL.iter().copied().filter(|c| *c != preferred).collect();
            let rejected = others[rng.gen_range(0..others.len())];
            let sig = signal(&[preferred], &[rejected]);
            state = bandit_update(&state, &x, Some(&settings()), &[], &sig).unwrap();
        }
        for _ in 0..50 {
            let x = sample(&mut rng);
            let scores = preference_scores(&state, &x).unwrap();
            let best = scores.arms.iter().max_by(|a, b| a.mean.total_cmp(&b.mean)).unwrap();
            assert_eq!(best.category, preferred);
        }
    }
}
