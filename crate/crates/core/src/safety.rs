//! Deterministic pre-review checks: absolute bounds, mode compatibility and
//! per-cycle step limits. A proposal reaches the clinician only if all three
//! pass.

use crate::contracts::{
    CheckId, Constraint, ModeRegistry, Proposal, SafetyReport, VentilatorSettings, Violation,
};

/// Flag every updated parameter whose resulting value falls outside the
/// target mode's bounds.
pub fn check_bounds(proposal: &Proposal, current: &VentilatorSettings, registry: &ModeRegistry) -> SafetyReport {
    let mut violations = Vec::new();
    let mut warnings = Vec::new();
    if proposal.setting_updates.is_empty() && proposal.mode_change.is_some() {
        warnings.push("mode change only".to_string());
    }
    let target = proposal.target_mode(current);
    for (&p, &value) in &proposal.setting_updates {
        // Bounds come from the target mode when it knows the parameter, else
        // from the global limits; applicability is check_mode_compatibility's job.
        let (min, max) = registry
            .mode(target)
            .and_then(|m| m.bounds.get(&p))
            .map(|b| (b.min, b.max))
            .unwrap_or_else(|| {
                let l = registry.parameter_limits(p);
                (l.min, l.max)
            });
        if !value.is_finite() || value < min || value > max {
            let limit = if value < min { min } else { max };
            violations.push(Violation {
                check_id: CheckId::Bounds,
                parameter: Some(p),
                limit: Some(limit),
                proposed_value: Some(value),
            });
        }
    }
    SafetyReport::from_parts(violations, warnings)
}

/// Flag unknown target modes and updates to parameters the target mode does
/// not expose.
pub fn check_mode_compatibility(proposal: &Proposal, current: &VentilatorSettings, registry: &ModeRegistry) -> SafetyReport {
    let target = proposal.target_mode(current);
    let Some(spec) = registry.mode(target) else {
        return SafetyReport::from_parts(
            vec![Violation {
                check_id: CheckId::UnknownMode,
                parameter: None,
                limit: None,
                proposed_value: None,
            }],
            vec![format!("unknown mode {target}")],
        );
    };
    let violations = proposal
        .setting_updates
        .iter()
        .filter(|(p, _)| !spec.applicable.contains(p))
        .map(|(&p, &v)| Violation {
            check_id: CheckId::ModeCompatibility,
            parameter: Some(p),
            limit: None,
            proposed_value: Some(v),
        })
        .collect();
    SafetyReport::from_parts(violations, Vec::new())
}

/// Flag updates whose step from the current value exceeds the per-cycle
/// delta for that parameter.
pub fn check_delta_limits(proposal: &Proposal, current: &VentilatorSettings, registry: &ModeRegistry) -> SafetyReport {
    let target = proposal.target_mode(current);
    let mut violations = Vec::new();
    for (&p, &value) in &proposal.setting_updates {
        let limit = registry
            .mode(target)
            .and_then(|m| m.max_delta.get(&p).copied())
            .unwrap_or_else(|| registry.parameter_limits(p).max_delta);
        let base = registry.baseline(current, p);
        let step = (value - base).abs();
        if !(step <= limit + 1e-9) {
            violations.push(Violation {
                check_id: CheckId::DeltaLimit,
                parameter: Some(p),
                limit: Some(limit),
                proposed_value: Some(value),
            });
        }
    }
    SafetyReport::from_parts(violations, Vec::new())
}

/// All three checks; the verdict is the conjunction.
pub fn check_proposal(proposal: &Proposal, current: &VentilatorSettings, registry: &ModeRegistry) -> SafetyReport {
    let mut violations = Vec::new();
    let mut warnings = Vec::new();
    for report in [
        check_bounds(proposal, current, registry),
        check_mode_compatibility(proposal, current, registry),
        check_delta_limits(proposal, current, registry),
    ] {
        violations.extend(report.violations);
        warnings.extend(report.warnings);
    }
    SafetyReport::from_parts(violations, warnings)
}

/// Revision constraints that would prevent each violation from recurring.
pub fn constraints_for(report: &SafetyReport, proposal: &Proposal, current: &VentilatorSettings) -> Vec<Constraint> {
    let mut out = Vec::new();
    for v in &report.violations {
        let c = match (v.check_id, v.parameter) {
            (CheckId::Bounds, Some(parameter)) => {
                let limit = v.limit.unwrap_or_default();
                if v.proposed_value.is_some_and(|x| x < limit) {
                    Constraint::Floor { parameter, value: limit }
                } else {
                    Constraint::Ceiling { parameter, value: limit }
                }
            }
            (CheckId::DeltaLimit, Some(parameter)) => Constraint::MaxStep {
                parameter,
                max: v.limit.unwrap_or_default(),
            },
            (CheckId::ModeCompatibility, Some(parameter)) => Constraint::ForbidParameter { parameter },
            _ => Constraint::ForbidMode {
                mode: proposal.target_mode(current).clone(),
            },
        };
        if !out.contains(&c) {
            out.push(c);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contracts::{ModeId, Parameter, PreferenceCategory, PriorityId, Verdict};
    use proptest::prelude::*;
    use std::collections::{BTreeMap, BTreeSet};

    fn current() -> VentilatorSettings {
        VentilatorSettings::new("PRVC")
            .with(Parameter::Peep, 8.0)
            .with(Parameter::Fio2, 60.0)
            .with(Parameter::RespRateSet, 18.0)
    }

    fn proposal(mode: Option<&str>, updates: &[(Parameter, f64)]) -> Proposal {
        Proposal {
            cycle_id: "c".into(),
            round_index: 1,
            strategy: PriorityId::Oxygenation,
            mode_change: mode.map(ModeId::from),
            setting_updates: updates.iter().copied().collect::<BTreeMap<_, _>>(),
            category_tags: BTreeSet::from([PreferenceCategory::StayInMode]),
            rationale: String::new(),
        }
    }

    #[test]
    fn fio2_45_passes_bounds() {
        let r = ModeRegistry::default();
        let rep = check_bounds(&proposal(None, &[(Parameter::Fio2, 45.0)]), &current(), &r);
        assert_eq!(rep.verdict, Verdict::Pass);
    }

    #[test]
    fn peep_26_fails_with_limit_24() {
        let r = ModeRegistry::default();
        let rep = check_bounds(&proposal(None, &[(Parameter::Peep, 26.0)]), &current(), &r);
        assert_eq!(rep.verdict, Verdict::Fail);
        assert_eq!(rep.violations.len(), 1);
        assert_eq!(rep.violations[0].parameter, Some(Parameter::Peep));
        assert_eq!(rep.violations[0].limit, Some(24.0));
        assert_eq!(rep.violations[0].proposed_value, Some(26.0));
    }

    #[test]
    fn mode_change_only_passes_with_warning() {
        let r = ModeRegistry::default();
        let rep = check_bounds(&proposal(Some("PC"), &[]), &current(), &r);
        assert!(rep.passed());
        assert_eq!(rep.warnings, vec!["mode change only".to_string()]);
    }

    #[test]
    fn pressure_support_into_prvc_is_incompatible() {
        let r = ModeRegistry::default();
        let from_psv = VentilatorSettings::new("PSV")
            .with(Parameter::Peep, 6.0)
            .with(Parameter::Fio2, 40.0)
            .with(Parameter::PressureSupport, 10.0);
        let rep = check_mode_compatibility(
            &proposal(Some("PRVC"), &[(Parameter::PressureSupport, 8.0)]),
            &from_psv,
            &r,
        );
        assert_eq!(rep.verdict, Verdict::Fail);
        assert_eq!(rep.violations[0].check_id, CheckId::ModeCompatibility);
        assert_eq!(rep.violations[0].parameter, Some(Parameter::PressureSupport));
    }

    #[test]
    fn applicable_updates_are_compatible() {
        let r = ModeRegistry::default();
        let rep = check_mode_compatibility(
            &proposal(None, &[(Parameter::Peep, 10.0), (Parameter::Fio2, 50.0)]),
            &current(),
            &r,
        );
        assert!(rep.passed());
    }

    #[test]
    fn unregistered_mode_fails_unknown_mode() {
        let r = ModeRegistry::default();
        let rep = check_mode_compatibility(&proposal(Some("HFOV"), &[]), &current(), &r);
        assert_eq!(rep.violations[0].check_id, CheckId::UnknownMode);
    }

    #[test]
    fn delta_limit_table() {
        let r = ModeRegistry::default();
        let c = current();
        assert!(check_delta_limits(&proposal(None, &[(Parameter::Peep, 10.0)]), &c, &r).passed());
        assert!(!check_delta_limits(&proposal(None, &[(Parameter::Peep, 14.0)]), &c, &r).passed());
        let high_fio2 = c.clone().with(Parameter::Fio2, 100.0);
        let rep = check_delta_limits(&proposal(None, &[(Parameter::Fio2, 60.0)]), &high_fio2, &r);
        assert!(!rep.passed());
        assert_eq!(rep.violations[0].limit, Some(20.0));
    }

    #[test]
    fn constraints_prevent_recurrence() {
        let r = ModeRegistry::default();
        let c = current();
        let p = proposal(None, &[(Parameter::Peep, 26.0)]);
        let rep = check_proposal(&p, &c, &r);
        let cons = constraints_for(&rep, &p, &c);
        assert!(cons.contains(&Constraint::Ceiling { parameter: Parameter::Peep, value: 24.0 }));
        assert!(cons.contains(&Constraint::MaxStep { parameter: Parameter::Peep, max: 4.0 }));
        assert!(cons.iter().all(|k| !k.is_satisfied_by(&p, &c)));
    }

    fn arb_update() -> impl Strategy<Value = (Parameter, f64)> {
        ((0usize..5), -10.0f64..110.0).prop_map(|(i, v)| (Parameter::ALL[i], v))
    }

    proptest! {
        #[test]
        fn verdict_is_conjunction_and_pure(
            mode in proptest::option::of(prop_oneof![Just("VC"), Just("PC"), Just("PSV"), Just("XX")]),
            updates in proptest::collection::vec(arb_update(), 0..4),
        ) {
            let r = ModeRegistry::default();
            let c = current();
            let p = proposal(mode, &updates);
            let all = check_proposal(&p, &c, &r);
            let each = [check_bounds(&p, &c, &r), check_mode_compatibility(&p, &c, &r), check_delta_limits(&p, &c, &r)];
            prop_assert_eq!(all.passed(), each.iter().all(|rep| rep.passed()));
            prop_assert_eq!(all, check_proposal(&p, &c, &r));
        }
    }
}
