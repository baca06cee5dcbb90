//! Gate, reflect and closure rules of the adjustment cycle.

use std::collections::BTreeSet;

use crate::agents::config::ReflectConfig;
use crate::contracts::{
    Branch, BranchDecision, ClinicianFeedback, Constraint, ContractError, CycleStatus, FieldError, ModeRegistry,
    NoteOutput, NoteRequest, PhaseGoals, PreferenceCategory, PreferenceSignal, Proposal, ReasonCategory,
    RevisionDirective, Severity, StateSummary, ValidationErrors, VentilatorSettings,
};

pub const HOLD_STABLE: &str = "stable";
pub const HOLD_INSUFFICIENT: &str = "insufficient evidence";

/// Adjust only when something is at least moderately abnormal and the
/// evidence is sufficient to act on.
pub fn gate_decision(summary: &StateSummary, _goals: &PhaseGoals) -> BranchDecision {
    let actionable = summary.max_severity() >= Severity::Moderate;
    match (actionable, summary.evidence_sufficient) {
        (true, true) => {
            let worst: Vec<String> = summary
                .abnormalities
                .iter()
                .filter(|a| a.severity >= Severity::Moderate)
                .map(|a| format!("{:?} {:?}", a.severity, a.code).to_lowercase())
                .collect();
            BranchDecision {
                branch: Branch::Adjust,
                reason: worst.join("; "),
            }
        }
        (_, false) => BranchDecision {
            branch: Branch::Hold,
            reason: HOLD_INSUFFICIENT.into(),
        },
        (false, true) => BranchDecision {
            branch: Branch::Hold,
            reason: HOLD_STABLE.into(),
        },
    }
}

/// Turn a rejection into the stage to resume from and the constraints the
/// next proposal must respect.
pub fn reflect_route(
    cfg: &ReflectConfig,
    registry: &ModeRegistry,
    feedback: &ClinicianFeedback,
    rejected: &Proposal,
    current: &VentilatorSettings,
) -> Result<RevisionDirective, ContractError> {
    let Some(reason) = feedback.reason_category.filter(|_| !feedback.is_accept()) else {
        return Err(ContractError::Invalid(ValidationErrors(vec![FieldError {
            path: "feedback.decision".into(),
            expected: "reject with a reason_category".into(),
            found: format!("{:?}", feedback.decision).to_lowercase(),
        }])));
    };
    let mut constraints = Vec::new();
    match reason {
        ReasonCategory::WrongPriority => constraints.push(Constraint::ForbidStrategy {
            strategy: rejected.strategy,
        }),
        ReasonCategory::WrongMode => constraints.push(Constraint::ForbidMode {
            mode: rejected.target_mode(current).clone(),
        }),
        ReasonCategory::ParameterMagnitude => {
            for p in disputed_or_all(feedback, rejected) {
                if let Some(v) = rejected.setting_updates.get(&p) {
                    let step = (v - registry.baseline(current, p)).abs();
                    constraints.push(Constraint::MaxStep {
                        parameter: p,
                        max: step * cfg.magnitude_factor,
                    });
                }
            }
        }
        ReasonCategory::Feasibility => {
            for &p in &feedback.disputed_parameters {
                constraints.push(Constraint::ForbidParameter { parameter: p });
            }
        }
        ReasonCategory::Other => {}
    }
    constraints.push(Constraint::ExcludeProposal {
        mode_change: rejected.mode_change.clone(),
        setting_updates: rejected.setting_updates.clone(),
    });
    // A smaller step is still the same style of proposal, so magnitude
    // rejections keep the tag set available.
    if reason != ReasonCategory::ParameterMagnitude {
        constraints.push(Constraint::ExcludeTagSet {
            tags: rejected.category_tags.clone(),
        });
    }
    let rationale = feedback.rationale.to_lowercase();
    let refresh_waveform = cfg
        .refresh_waveform_keywords
        .iter()
        .any(|k| rationale.contains(&k.to_lowercase()));
    Ok(RevisionDirective {
        resume_stage: cfg.resume_stage(reason),
        constraints,
        refresh_waveform,
    })
}

fn disputed_or_all(feedback: &ClinicianFeedback, rejected: &Proposal) -> Vec<crate::contracts::Parameter> {
    if feedback.disputed_parameters.is_empty() {
        rejected.setting_updates.keys().copied().collect()
    } else {
        feedback.disputed_parameters.clone()
    }
}

/// Render the cycle note and extract the preference signal.
pub fn close_cycle(req: &NoteRequest) -> NoteOutput {
    let accepted = match req.status {
        CycleStatus::Accepted => req.trace.last().filter(|e| e.feedback.is_accept()),
        _ => None,
    };
    let accept_tags: BTreeSet<PreferenceCategory> =
        accepted.map(|e| e.proposal.category_tags.clone()).unwrap_or_default();
    let rejected_tags: BTreeSet<PreferenceCategory> = req
        .trace
        .iter()
        .filter(|e| !e.feedback.is_accept())
        .flat_map(|e| e.proposal.category_tags.iter().copied())
        .filter(|c| !accept_tags.contains(c))
        .collect();

    let hold_insufficient = req.status == CycleStatus::Hold
        && req
            .branch
            .as_ref()
            .is_some_and(|b| b.branch == Branch::Hold && b.reason == HOLD_INSUFFICIENT);
    let signal = match req.status {
        CycleStatus::Accepted | CycleStatus::Exhausted => PreferenceSignal {
            evidenced_by_accept: accept_tags,
            evidenced_only_by_reject: rejected_tags,
        },
        CycleStatus::Hold if hold_insufficient => PreferenceSignal {
            evidenced_by_accept: BTreeSet::from([PreferenceCategory::DeferWhenInsufficient]),
            evidenced_only_by_reject: BTreeSet::new(),
        },
        CycleStatus::Hold | CycleStatus::Failed => PreferenceSignal::default(),
    };

    let mut lines = vec![format!(
        "Cycle {} (encounter {}, clinician {}): {}.",
        req.cycle_id,
        req.encounter_id,
        req.clinician_id,
        format!("{:?}", req.status).to_lowercase()
    )];
    if let Some(b) = &req.branch {
        lines.push(format!("Gate: {} ({}).", format!("{:?}", b.branch).to_lowercase(), b.reason));
    }
    for (k, e) in req.trace.iter().enumerate() {
        let verdict = if e.feedback.is_accept() {
            "accepted".to_string()
        } else {
            let reason = e
                .feedback
                .reason_category
                .map(|r| format!("{r:?}").to_lowercase())
                .unwrap_or_default();
            format!("rejected ({reason})")
        };
        lines.push(format!("Round {}: {} - {}.", k + 1, e.proposal.rationale, verdict));
    }
    match (&req.accepted_settings, req.status) {
        (Some(s), CycleStatus::Accepted) => lines.push(format!("Applied settings: {}.", render_settings(s))),
        (_, CycleStatus::Exhausted) => lines.push("Round budget exhausted; settings unchanged.".into()),
        _ => lines.push(format!("Settings unchanged: {}.", render_settings(&req.current_settings))),
    }
    NoteOutput {
        note: lines.join("\n"),
        signal,
    }
}

fn render_settings(s: &VentilatorSettings) -> String {
    let mut parts = vec![format!("mode {}", s.mode)];
    parts.extend(s.present().map(|(p, v)| format!("{p} {v}")));
    parts.join(", ")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contracts::{
        Abnormality, AbnormalityCode, Parameter, Phase, GoalId, PriorityId, ResumeStage, SafetyReport, TraceEntry,
    };
    use std::collections::BTreeMap;

    use PreferenceCategory as C;

    fn summary(sev: Severity, sufficient: bool) -> StateSummary {
        StateSummary {
            abnormalities: vec![Abnormality {
                code: AbnormalityCode::Hypoxemia,
                severity: sev,
                evidence: vec!["state.spo2".into()],
            }],
            evidence_sufficient: sufficient,
            narrative: String::new(),
        }
    }

    fn goals() -> PhaseGoals {
        PhaseGoals {
            phase: Phase::Acute,
            primary_goal: GoalId::ImproveOxygenation,
            secondary_goals: vec![],
        }
    }

    #[test]
    fn gate_table() {
        assert_eq!(gate_decision(&summary(Severity::None, true), &goals()).reason, HOLD_STABLE);
        assert_eq!(gate_decision(&summary(Severity::Mild, true), &goals()).branch, Branch::Hold);
        assert_eq!(gate_decision(&summary(Severity::Severe, true), &goals()).branch, Branch::Adjust);
        let d = gate_decision(&summary(Severity::Severe, false), &goals());
        assert_eq!((d.branch, d.reason.as_str()), (Branch::Hold, HOLD_INSUFFICIENT));
    }

    fn proposal(updates: &[(Parameter, f64)], tags: &[C]) -> Proposal {
        Proposal {
            cycle_id: "c".into(),
            round_index: 1,
            strategy: PriorityId::Oxygenation,
            mode_change: None,
            setting_updates: updates.iter().copied().collect::<BTreeMap<_, _>>(),
            category_tags: tags.iter().copied().collect(),
            rationale: "r".into(),
        }
    }

    fn current() -> VentilatorSettings {
        VentilatorSettings::new("PRVC").with(Parameter::Peep, 8.0).with(Parameter::Fio2, 60.0)
    }

    #[test]
    fn magnitude_rejection_halves_disputed_step() {
        let rejected = proposal(&[(Parameter::Peep, 12.0), (Parameter::Fio2, 50.0)], &[C::TargetDrivenAssertive]);
        let fb = ClinicianFeedback::reject(ReasonCategory::ParameterMagnitude, vec![Parameter::Peep], "too big");
        let d = reflect_route(&ReflectConfig::default(), &ModeRegistry::default(), &fb, &rejected, &current()).unwrap();
        assert_eq!(d.resume_stage, ResumeStage::ParameterPlan);
        assert!(d.constraints.contains(&Constraint::MaxStep { parameter: Parameter::Peep, max: 2.0 }));
        assert!(!d.constraints.iter().any(|c| matches!(c, Constraint::MaxStep { parameter: Parameter::Fio2, .. })));
        assert!(!d.refresh_waveform);
    }

    #[test]
    fn wrong_mode_forbids_the_proposed_mode() {
        let mut rejected = proposal(&[(Parameter::Peep, 10.0)], &[C::ModeLevelChange]);
        rejected.mode_change = Some("PSV".into());
        let fb = ClinicianFeedback::reject(ReasonCategory::WrongMode, vec![], "");
        let d = reflect_route(&ReflectConfig::default(), &ModeRegistry::default(), &fb, &rejected, &current()).unwrap();
        assert_eq!(d.resume_stage, ResumeStage::ModeSelect);
        assert!(d.constraints.contains(&Constraint::ForbidMode { mode: "PSV".into() }));
    }

    #[test]
    fn wrong_priority_resumes_at_strategy() {
        let rejected = proposal(&[(Parameter::Peep, 10.0)], &[C::PrioOxygenation]);
        let fb = ClinicianFeedback::reject(ReasonCategory::WrongPriority, vec![], "see the waveform trace");
        let d = reflect_route(&ReflectConfig::default(), &ModeRegistry::default(), &fb, &rejected, &current()).unwrap();
        assert_eq!(d.resume_stage, ResumeStage::Strategy);
        assert!(d.constraints.contains(&Constraint::ForbidStrategy { strategy: PriorityId::Oxygenation }));
        assert!(d.refresh_waveform);
    }

    #[test]
    fn accept_is_not_routable() {
        let rejected = proposal(&[(Parameter::Peep, 10.0)], &[C::PrioOxygenation]);
        let r = reflect_route(
            &ReflectConfig::default(),
            &ModeRegistry::default(),
            &ClinicianFeedback::accept(),
            &rejected,
            &current(),
        );
        assert!(matches!(r, Err(ContractError::Invalid(_))));
    }

    fn entry(tags: &[C], accept: bool) -> TraceEntry {
        TraceEntry {
            proposal: proposal(&[(Parameter::Fio2, 50.0)], tags),
            feedback: if accept {
                ClinicianFeedback::accept()
            } else {
                ClinicianFeedback::reject(ReasonCategory::Other, vec![], "")
            },
            safety: SafetyReport::from_parts(vec![], vec![]),
            preference_context: vec![],
        }
    }

    fn note_req(status: CycleStatus, trace: Vec<TraceEntry>, branch: Option<BranchDecision>) -> NoteRequest {
        NoteRequest {
            cycle_id: "e-c0".into(),
            encounter_id: "e".into(),
            clinician_id: "d".into(),
            status,
            branch,
            trace,
            accepted_settings: (status == CycleStatus::Accepted).then(current),
            current_settings: current(),
        }
    }

    #[test]
    fn signal_set_algebra() {
        let out = close_cycle(&note_req(
            CycleStatus::Accepted,
            vec![
                entry(&[C::TargetDrivenAssertive], false),
                entry(&[C::ConservativeSmallStep, C::PrioOxygenation], true),
            ],
            None,
        ));
        assert_eq!(out.signal.evidenced_by_accept, BTreeSet::from([C::ConservativeSmallStep, C::PrioOxygenation]));
        assert_eq!(out.signal.evidenced_only_by_reject, BTreeSet::from([C::TargetDrivenAssertive]));
    }

    #[test]
    fn first_round_accept_has_no_negative_evidence() {
        let out = close_cycle(&note_req(CycleStatus::Accepted, vec![entry(&[C::PrioWeaning], true)], None));
        assert_eq!(out.signal.evidenced_by_accept, BTreeSet::from([C::PrioWeaning]));
        assert!(out.signal.evidenced_only_by_reject.is_empty());
    }

    #[test]
    fn insufficient_evidence_hold_defers() {
        let branch = BranchDecision {
            branch: Branch::Hold,
            reason: HOLD_INSUFFICIENT.into(),
        };
        let out = close_cycle(&note_req(CycleStatus::Hold, vec![], Some(branch)));
        assert_eq!(out.signal.evidenced_by_accept, BTreeSet::from([C::DeferWhenInsufficient]));
        assert!(out.signal.evidenced_only_by_reject.is_empty());
        assert!(out.note.contains("insufficient evidence"));
    }

    #[test]
    fn stable_hold_has_empty_signal_and_note_is_deterministic() {
        let branch = BranchDecision {
            branch: Branch::Hold,
            reason: HOLD_STABLE.into(),
        };
        let req = note_req(CycleStatus::Hold, vec![], Some(branch));
        let a = close_cycle(&req);
        assert!(a.signal.is_empty());
        assert_eq!(a, close_cycle(&req));
    }
}
