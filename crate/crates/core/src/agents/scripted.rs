//! Deterministic rule-table implementations of the reasoning roles.
//!
//! Each function is pure in its inputs and the loaded tables, so a cycle run
//! entirely on scripted agents is reproducible byte for byte.

use std::collections::{BTreeMap, BTreeSet};

use crate::bandit::rank_candidates;
use crate::contracts::{
    Abnormality, AbnormalityCode, Constraint, GoalId, ModeDecision, ModeId, ModeRegistry,
    ModeRequest, Parameter, PatientState, Phase, PhaseGoals, PhaseRequest, PlanRequest, PreferenceCategory, PriorityId,
    Proposal, Severity, StateField, StateSummary, StrategyChoice, StrategyRequest, VentilatorSettings, WaveformCues,
    WaveformQuality,
};
use crate::safety::check_proposal;

use super::config::{DetectionRules, ModeRuleKind, PlannerConfig};

/// Tolerance below which a step counts as no change.
const STEP_EPS: f64 = 1e-9;

/// Map a patient state and optional waveform cues to an abnormality list.
pub fn scripted_detection(rules: &DetectionRules, state: &PatientState, cues: Option<&WaveformCues>) -> StateSummary {
    let mut by_code: BTreeMap<AbnormalityCode, (Severity, BTreeSet<String>)> = BTreeMap::new();
    let mut order: Vec<AbnormalityCode> = Vec::new();

    for rule in &rules.rules {
        let fields: Vec<StateField> = rule.all.iter().map(|c| c.field).collect();
        let present: Vec<StateField> = fields.iter().copied().filter(|f| state.field(*f).is_some()).collect();
        if present.is_empty() {
            continue;
        }
        if !order.contains(&rule.code) {
            order.push(rule.code);
        }
        let entry = by_code.entry(rule.code).or_insert((Severity::None, BTreeSet::new()));
        let matched = rule
            .all
            .iter()
            .all(|c| state.field(c.field).is_some_and(|v| c.op.holds(v, c.value)));
        if matched && rule.severity > entry.0 {
            entry.0 = rule.severity;
            entry.1 = fields.iter().map(|f| f.evidence_ref()).collect();
        } else if entry.0 == Severity::None {
            entry.1.extend(present.iter().map(|f| f.evidence_ref()));
        }
    }

    if let Some(cues) = cues.filter(|c| c.quality != WaveformQuality::Unusable) {
        for rule in &rules.cue_rules {
            if !order.contains(&rule.code) {
                order.push(rule.code);
            }
            let entry = by_code.entry(rule.code).or_insert((Severity::None, BTreeSet::new()));
            entry.1.insert("cues.asynchrony_patterns".to_string());
            if cues.asynchrony_patterns.contains(&rule.pattern) && rule.severity > entry.0 {
                entry.0 = rule.severity;
            }
        }
    }

    let missing = rules
        .required_fields
        .iter()
        .filter(|f| state.field(**f).is_none())
        .count();
    let evidence_sufficient = missing <= rules.max_missing_required;

    let abnormalities: Vec<Abnormality> = order
        .into_iter()
        .map(|code| {
            let (severity, evidence) = by_code.remove(&code).expect("indexed code");
            Abnormality {
                code,
                severity,
                evidence: evidence.into_iter().collect(),
            }
        })
        .collect();

    let flagged: Vec<String> = abnormalities
        .iter()
        .filter(|a| a.severity > Severity::None)
        .map(|a| format!("{:?} {:?}", a.severity, a.code).to_lowercase())
        .collect();
    let mut narrative = if flagged.is_empty() {
        "no abnormality flagged".to_string()
    } else {
        flagged.join("; ")
    };
    if !evidence_sufficient {
        narrative.push_str(&format!("; {missing} required measurements missing"));
    }
    StateSummary {
        abnormalities,
        evidence_sufficient,
        narrative,
    }
}

/// Treatment phase and goals from the summary and current settings.
pub fn scripted_phase_goals(cfg: &PlannerConfig, registry: &ModeRegistry, req: &PhaseRequest) -> PhaseGoals {
    let fio2 = registry.baseline(&req.settings, Parameter::Fio2);
    let peep = registry.baseline(&req.settings, Parameter::Peep);
    let worst = req.summary.max_severity();
    let t = &cfg.phase;
    let phase = if fio2 >= t.acute_fio2_at_least || peep >= t.acute_peep_at_least || worst == Severity::Severe {
        Phase::Acute
    } else if fio2 <= t.weaning_fio2_at_most && peep <= t.weaning_peep_at_most && worst <= Severity::Mild {
        Phase::Weaning
    } else {
        Phase::Stabilization
    };

    let mut flagged: Vec<&Abnormality> = req
        .summary
        .abnormalities
        .iter()
        .filter(|a| a.severity > Severity::None)
        .collect();
    // Most severe first; the stable sort keeps detection order among equals.
    flagged.sort_by(|a, b| b.severity.cmp(&a.severity));
    let mut goals: Vec<GoalId> = Vec::new();
    for a in flagged {
        if let Some(g) = cfg.goal_map.get(&a.code) {
            if !goals.contains(g) {
                goals.push(*g);
            }
        }
    }
    if phase == Phase::Weaning && !goals.contains(&GoalId::ProgressWeaning) {
        goals.push(GoalId::ProgressWeaning);
    }
    if goals.is_empty() {
        goals.push(GoalId::MaintainStability);
    }
    PhaseGoals {
        phase,
        primary_goal: goals[0],
        secondary_goals: goals[1..].to_vec(),
    }
}

/// Pick the adjustment priority. Goal-derived strategies come first in goal
/// order; every other strategy follows as a fallback. Each position costs a
/// fixed penalty, so preference scores reorder only close calls.
pub fn scripted_strategy(cfg: &PlannerConfig, req: &StrategyRequest) -> Option<StrategyChoice> {
    let forbidden: BTreeSet<PriorityId> = req
        .constraints
        .iter()
        .filter_map(|c| match c {
            Constraint::ForbidStrategy { strategy } => Some(*strategy),
            _ => None,
        })
        .collect();
    let mut ordered: Vec<PriorityId> = Vec::new();
    for g in req.goals.all_goals() {
        if let Some(s) = cfg.strategy_map.get(&g) {
            if !ordered.contains(s) {
                ordered.push(*s);
            }
        }
    }
    let from_goals = ordered.len();
    for s in PriorityId::ALL {
        if !ordered.contains(&s) {
            ordered.push(s);
        }
    }
    let (best, _) = ordered
        .iter()
        .enumerate()
        .filter(|(_, s)| !forbidden.contains(s))
        .map(|(i, s)| (*s, req.scores.score(s.category()) - cfg.preference_rank_penalty * i as f64))
        .fold(None::<(PriorityId, f64)>, |acc, (s, v)| match acc {
            Some((_, bv)) if bv >= v => acc,
            _ => Some((s, v)),
        })?;
    let idx = ordered.iter().position(|s| *s == best).expect("chosen from list");
    let rationale = if idx < from_goals {
        format!("{best:?} serves the {:?} phase goals", req.goals.phase)
    } else {
        format!("{best:?} chosen as fallback; goal-derived strategies were excluded")
    };
    Some(StrategyChoice {
        strategy: best,
        rationale: rationale.to_lowercase(),
    })
}

/// Decide whether to stay in the current mode, switch, or offer a mode-level
/// alternative. `None` when every mode is forbidden.
pub fn scripted_mode_select(cfg: &PlannerConfig, registry: &ModeRegistry, req: &ModeRequest) -> Option<ModeDecision> {
    let forbidden: BTreeSet<&ModeId> = req
        .constraints
        .iter()
        .filter_map(|c| match c {
            Constraint::ForbidMode { mode } => Some(mode),
            _ => None,
        })
        .collect();
    let current = &req.current_settings.mode;
    let rule = cfg
        .mode_rules
        .iter()
        .find(|r| r.strategy == req.strategy && r.from.contains(current));
    let allowed = |m: &ModeId| !forbidden.contains(m) && registry.contains(m);

    if forbidden.contains(current) {
        let target = rule
            .map(|r| &r.to)
            .filter(|m| allowed(m))
            .or_else(|| registry.modes().iter().map(|m| &m.id).find(|m| *m != current && allowed(m)))?;
        return Some(ModeDecision {
            mode_change: Some(target.clone()),
            alternative_mode: None,
            rationale: format!("current mode {current} was ruled out; moving to {target}"),
        });
    }
    let decision = match rule {
        Some(r) if allowed(&r.to) && r.kind == ModeRuleKind::Switch => ModeDecision {
            mode_change: Some(r.to.clone()),
            alternative_mode: None,
            rationale: format!("{:?} calls for {} from {current}", req.strategy, r.to).to_lowercase(),
        },
        Some(r) if allowed(&r.to) => ModeDecision {
            mode_change: None,
            alternative_mode: Some(r.to.clone()),
            rationale: format!("stay in {current}; {} offered as an alternative", r.to),
        },
        _ => ModeDecision {
            mode_change: None,
            alternative_mode: None,
            rationale: format!("stay in {current}"),
        },
    };
    Some(decision)
}

/// Preference categories a proposal exhibits, read from its content.
pub fn derive_tags(
    registry: &ModeRegistry,
    strategy: PriorityId,
    mode_change: Option<&ModeId>,
    current: &VentilatorSettings,
    updates: &BTreeMap<Parameter, f64>,
) -> BTreeSet<PreferenceCategory> {
    let mut tags = BTreeSet::new();
    tags.insert(if mode_change.is_some() {
        PreferenceCategory::ModeLevelChange
    } else {
        PreferenceCategory::StayInMode
    });
    let assertive = updates.iter().any(|(&p, &v)| {
        (v - registry.baseline(current, p)).abs() > registry.parameter_limits(p).small_step + STEP_EPS
    });
    tags.insert(if assertive {
        PreferenceCategory::TargetDrivenAssertive
    } else {
        PreferenceCategory::ConservativeSmallStep
    });
    if updates.len() == 1 {
        tags.insert(PreferenceCategory::SingleKeyParameterFirst);
    }
    tags.insert(strategy.category());
    tags
}

/// The parameter planner could not produce any admissible candidate.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("no feasible candidate for {strategy:?} under the current constraints")]
pub struct FeasibilityExhausted {
    pub strategy: PriorityId,
}

/// Expand the strategy's templates into executable candidates, drop those
/// that break a bound, step limit or accumulated constraint, and rank the
/// rest by preference.
pub fn scripted_parameter_plan(
    cfg: &PlannerConfig,
    registry: &ModeRegistry,
    req: &PlanRequest,
) -> Result<Vec<Proposal>, FeasibilityExhausted> {
    let current = &req.current_settings;
    let mut variants: Vec<Option<ModeId>> = vec![req.mode.mode_change.clone()];
    if let Some(alt) = &req.mode.alternative_mode {
        if Some(alt) != req.mode.mode_change.as_ref() && alt != &current.mode {
            variants.push(Some(alt.clone()));
        }
    }

    let mut out: Vec<Proposal> = Vec::new();
    let mut seen_tags: BTreeSet<BTreeSet<PreferenceCategory>> = BTreeSet::new();
    for mode_change in variants {
        let target = mode_change.as_ref().unwrap_or(&current.mode);
        let Some(spec) = registry.mode(target) else { continue };
        // Values carried over into a new mode must already fit its bounds.
        if mode_change.is_some()
            && spec
                .applicable
                .iter()
                .any(|p| !spec.bounds[p].contains(registry.baseline(current, *p)))
        {
            continue;
        }
        for template in cfg.templates(req.strategy) {
            let mut updates = BTreeMap::new();
            for &(p, delta) in template {
                if !spec.applicable.contains(&p) {
                    continue;
                }
                if let Some(v) = clip_step(registry, target, current, p, delta, &req.constraints) {
                    updates.insert(p, v);
                }
            }
            if updates.is_empty() && mode_change.is_none() {
                continue;
            }
            let category_tags = derive_tags(registry, req.strategy, mode_change.as_ref(), current, &updates);
            let rationale = describe(req.strategy, mode_change.as_ref(), current, &updates, registry);
            let proposal = Proposal {
                cycle_id: req.cycle_id.clone(),
                round_index: req.round_index,
                strategy: req.strategy,
                mode_change: mode_change.clone(),
                setting_updates: updates,
                category_tags,
                rationale,
            };
            if out.iter().any(|p| p.same_content(&proposal)) || seen_tags.contains(&proposal.category_tags) {
                continue;
            }
            if !req.constraints.iter().all(|c| c.is_satisfied_by(&proposal, current)) {
                continue;
            }
            if !check_proposal(&proposal, current, registry).passed() {
                continue;
            }
            seen_tags.insert(proposal.category_tags.clone());
            out.push(proposal);
        }
    }
    if out.is_empty() {
        return Err(FeasibilityExhausted { strategy: req.strategy });
    }
    Ok(rank_candidates(out, &req.scores))
}

/// Apply a template step to one parameter, shrinking it to fit the step
/// limit, any step constraint, the mode's bounds and any ceiling or floor.
/// `None` when nothing of the step survives.
fn clip_step(
    registry: &ModeRegistry,
    mode: &ModeId,
    current: &VentilatorSettings,
    p: Parameter,
    delta: f64,
    constraints: &[Constraint],
) -> Option<f64> {
    let spec = registry.mode(mode)?;
    let base = registry.baseline(current, p);
    let mut max_step = spec.max_delta[&p];
    let mut lo = spec.bounds[&p].min;
    let mut hi = spec.bounds[&p].max;
    for c in constraints {
        match c {
            Constraint::ForbidParameter { parameter } if *parameter == p => return None,
            Constraint::MaxStep { parameter, max } if *parameter == p => max_step = max_step.min(*max),
            Constraint::Ceiling { parameter, value } if *parameter == p => hi = hi.min(*value),
            Constraint::Floor { parameter, value } if *parameter == p => lo = lo.max(*value),
            _ => {}
        }
    }
    let step = delta.clamp(-max_step, max_step);
    let value = (base + step).clamp(lo, hi.max(lo));
    // A clamp that reverses the direction of the step is not this template.
    if (value - base).abs() < STEP_EPS || (value - base).signum() != delta.signum() {
        return None;
    }
    Some(value)
}

fn describe(
    strategy: PriorityId,
    mode_change: Option<&ModeId>,
    current: &VentilatorSettings,
    updates: &BTreeMap<Parameter, f64>,
    registry: &ModeRegistry,
) -> String {
    let mut parts: Vec<String> = Vec::new();
    if let Some(m) = mode_change {
        parts.push(format!("mode {} -> {m}", current.mode));
    }
    for (p, v) in updates {
        let base = registry.baseline(current, *p);
        parts.push(format!("{p} {} -> {}", fmt_num(base), fmt_num(*v)));
    }
    format!("{}: {}", format!("{strategy:?}").to_lowercase(), parts.join(", "))
}

fn fmt_num(v: f64) -> String {
    if v.fract() == 0.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.2}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contracts::{AsynchronyPattern, CategoryScores};

    fn plan_req(strategy: PriorityId, current: VentilatorSettings, constraints: Vec<Constraint>) -> PlanRequest {
        PlanRequest {
            cycle_id: "e-c0".into(),
            round_index: 1,
            strategy,
            goals: PhaseGoals {
                phase: Phase::Stabilization,
                primary_goal: GoalId::DeescalateFio2,
                secondary_goals: vec![],
            },
            current_settings: current,
            mode: ModeDecision {
                mode_change: None,
                alternative_mode: None,
                rationale: String::new(),
            },
            scores: CategoryScores::uniform(),
            constraints,
        }
    }

    fn prvc(fio2: f64, peep: f64) -> VentilatorSettings {
        VentilatorSettings::new("PRVC")
            .with(Parameter::Fio2, fio2)
            .with(Parameter::Peep, peep)
            .with(Parameter::RespRateSet, 18.0)
    }

    #[test]
    fn nominal_state_has_no_abnormality() {
        let s = scripted_detection(&DetectionRules::default(), &PatientState::nominal(0.0), None);
        assert!(s.evidence_sufficient);
        assert!(!s.abnormalities.is_empty());
        assert!(s.abnormalities.iter().all(|a| a.severity == Severity::None));
    }

    #[test]
    fn low_spo2_is_severe_hypoxemia() {
        let mut state = PatientState::nominal(0.0);
        state.spo2 = Some(85.0);
        let s = scripted_detection(&DetectionRules::default(), &state, None);
        let h = s.abnormalities.iter().find(|a| a.code == AbnormalityCode::Hypoxemia).unwrap();
        assert_eq!(h.severity, Severity::Severe);
        assert_eq!(h.evidence, vec!["state.spo2"]);
    }

    #[test]
    fn three_missing_required_fields_is_insufficient() {
        let mut state = PatientState::nominal(0.0);
        state.ph = None;
        state.paco2 = None;
        state.pao2 = None;
        assert!(!scripted_detection(&DetectionRules::default(), &state, None).evidence_sufficient);
        state.pao2 = Some(90.0);
        assert!(scripted_detection(&DetectionRules::default(), &state, None).evidence_sufficient);
    }

    #[test]
    fn sawtooth_cue_flags_secretions() {
        let cues = WaveformCues {
            quality: WaveformQuality::Good,
            asynchrony_patterns: BTreeSet::from([AsynchronyPattern::Sawtooth]),
            suspicious_events: vec![],
            observed_state: String::new(),
            uncertainty: 0.1,
        };
        let s = scripted_detection(&DetectionRules::default(), &PatientState::nominal(0.0), Some(&cues));
        assert_eq!(s.severity_of(AbnormalityCode::SecretionsAsynchrony), Severity::Moderate);
    }

    #[test]
    fn oxygenation_candidates_follow_templates() {
        let cands = scripted_parameter_plan(
            &PlannerConfig::default(),
            &ModeRegistry::default(),
            &plan_req(PriorityId::Oxygenation, prvc(60.0, 8.0), vec![]),
        )
        .unwrap();
        assert!(cands.len() >= 3);
        let find = |u: &[(Parameter, f64)]| {
            cands
                .iter()
                .find(|c| c.setting_updates == u.iter().copied().collect::<BTreeMap<_, _>>())
                .unwrap()
        };
        let small = find(&[(Parameter::Fio2, 50.0)]);
        assert!(small.category_tags.contains(&PreferenceCategory::ConservativeSmallStep));
        let big = find(&[(Parameter::Fio2, 40.0), (Parameter::Peep, 10.0)]);
        assert!(big.category_tags.contains(&PreferenceCategory::TargetDrivenAssertive));
        let tagsets: BTreeSet<_> = cands.iter().map(|c| c.category_tags.clone()).collect();
        assert_eq!(tagsets.len(), cands.len());
    }

    #[test]
    fn raise_only_at_upper_bounds_is_infeasible() {
        let at_max = VentilatorSettings::new("PRVC")
            .with(Parameter::Fio2, 100.0)
            .with(Parameter::Peep, 24.0)
            .with(Parameter::RespRateSet, 18.0);
        let err = scripted_parameter_plan(
            &PlannerConfig::default(),
            &ModeRegistry::default(),
            &plan_req(PriorityId::OxygenationRescue, at_max, vec![]),
        )
        .unwrap_err();
        assert_eq!(err.strategy, PriorityId::OxygenationRescue);
    }

    #[test]
    fn planning_is_deterministic() {
        let cfg = PlannerConfig::default();
        let reg = ModeRegistry::default();
        let req = plan_req(PriorityId::Oxygenation, prvc(60.0, 8.0), vec![]);
        let a = serde_json::to_string(&scripted_parameter_plan(&cfg, &reg, &req).unwrap()).unwrap();
        let b = serde_json::to_string(&scripted_parameter_plan(&cfg, &reg, &req).unwrap()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn step_constraint_halves_the_step() {
        let cands = scripted_parameter_plan(
            &PlannerConfig::default(),
            &ModeRegistry::default(),
            &plan_req(
                PriorityId::Oxygenation,
                prvc(60.0, 8.0),
                vec![Constraint::MaxStep { parameter: Parameter::Peep, max: 1.0 }],
            ),
        )
        .unwrap();
        for c in &cands {
            if let Some(peep) = c.setting_updates.get(&Parameter::Peep) {
                assert!((peep - 8.0).abs() <= 1.0 + 1e-9);
            }
        }
    }

    #[test]
    fn forbidden_current_mode_forces_a_change() {
        let req = ModeRequest {
            strategy: PriorityId::Oxygenation,
            current_settings: prvc(60.0, 8.0),
            cues: None,
            constraints: vec![Constraint::ForbidMode { mode: "PRVC".into() }],
        };
        let d = scripted_mode_select(&PlannerConfig::default(), &ModeRegistry::default(), &req).unwrap();
        assert!(d.mode_change.is_some_and(|m| m.as_str() != "PRVC"));
    }

    #[test]
    fn weaning_offers_psv_alternative() {
        let req = ModeRequest {
            strategy: PriorityId::Weaning,
            current_settings: prvc(35.0, 6.0),
            cues: None,
            constraints: vec![],
        };
        let d = scripted_mode_select(&PlannerConfig::default(), &ModeRegistry::default(), &req).unwrap();
        assert_eq!(d.mode_change, None);
        assert_eq!(d.alternative_mode, Some(ModeId::from("PSV")));
    }

    #[test]
    fn forbidden_strategy_is_skipped() {
        let cfg = PlannerConfig::default();
        let req = StrategyRequest {
            summary: StateSummary {
                abnormalities: vec![],
                evidence_sufficient: true,
                narrative: String::new(),
            },
            goals: PhaseGoals {
                phase: Phase::Acute,
                primary_goal: GoalId::ImproveOxygenation,
                secondary_goals: vec![GoalId::CorrectAcidBase],
            },
            scores: CategoryScores::uniform(),
            constraints: vec![Constraint::ForbidStrategy { strategy: PriorityId::OxygenationRescue }],
        };
        assert_eq!(scripted_strategy(&cfg, &req).unwrap().strategy, PriorityId::Ventilation);
        let open = StrategyRequest { constraints: vec![], ..req };
        assert_eq!(scripted_strategy(&cfg, &open).unwrap().strategy, PriorityId::OxygenationRescue);
    }
}
