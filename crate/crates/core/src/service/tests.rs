use super::*;
use crate::agents::AgentRuntime;
use crate::contracts::{Parameter, ReasonCategory, VentilatorSettings};

const WAIT: Duration = Duration::from_secs(10);

fn record(enc: &str, t: f64, state: PatientState) -> TrajectoryRecord {
    TrajectoryRecord {
        encounter_id: enc.into(),
        state: PatientState { timestamp: t, ..state },
        settings: VentilatorSettings::new("PRVC")
            .with(Parameter::Peep, 10.0)
            .with(Parameter::Fio2, 60.0)
            .with(Parameter::RespRateSet, 18.0),
    }
}

fn hyperoxic() -> PatientState {
    let mut s = PatientState::nominal(0.0);
    s.spo2 = Some(99.0);
    s.pao2 = Some(160.0);
    s
}

fn loaded(svc: &Service) {
    let resp = svc
        .load_dataset(DatasetLoadRequest {
            path: None,
            records: Some(vec![
                record("enc-1", 0.0, PatientState::nominal(0.0)),
                record("enc-1", 600.0, hyperoxic()),
                record("enc-stable", 0.0, PatientState::nominal(0.0)),
            ]),
        })
        .unwrap();
    assert_eq!(resp.encounters.len(), 2);
}

fn service() -> Service {
    let svc = Service::scripted(EngineConfig::default()).unwrap();
    loaded(&svc);
    svc
}

fn start(svc: &Service, enc: &str) -> CycleView {
    svc.start_cycle(
        enc,
        StartCycleRequest {
            clinician_id: "dr-a".into(),
            window: None,
            waveform_enabled: true,
        },
    )
    .unwrap()
}

fn accept(round: u32) -> FeedbackSubmission {
    FeedbackSubmission {
        round,
        feedback: ClinicianFeedback::accept(),
    }
}

#[test]
fn start_returns_running_then_review() {
    let svc = service();
    let v = start(&svc, "enc-1");
    assert_eq!(v.cycle_id, "enc-1-c0");
    assert_eq!(v.status, CyclePhase::Running);
    let r = svc.wait_settled(&v.cycle_id, WAIT).unwrap();
    assert_eq!(r.status, CyclePhase::Review);
    let review = r.review.unwrap();
    assert_eq!(review.round, 1);
    assert!(review.safety.passed());
    // Polling is idempotent.
    assert_eq!(svc.get_pending_review(&v.cycle_id).unwrap().review, Some(review));
}

#[test]
fn second_start_on_open_encounter_conflicts() {
    let svc = service();
    let v = start(&svc, "enc-1");
    let err = svc
        .start_cycle("enc-1", StartCycleRequest { clinician_id: "dr-b".into(), window: None, waveform_enabled: true })
        .unwrap_err();
    assert_eq!(err.code(), "conflict");
    svc.wait_settled(&v.cycle_id, WAIT).unwrap();
    let err = svc
        .start_cycle("nope", StartCycleRequest { clinician_id: "dr-b".into(), window: None, waveform_enabled: true })
        .unwrap_err();
    assert_eq!(err.code(), "not_found");
}

#[test]
fn hold_never_publishes_a_review() {
    let svc = service();
    let v = start(&svc, "enc-stable");
    let r = svc.wait_settled(&v.cycle_id, WAIT).unwrap();
    assert_eq!(r.status, CyclePhase::Hold);
    assert!(r.review.is_none());
    assert!(svc.trail(&v.cycle_id).unwrap().served_reviews.is_empty());
}

#[test]
fn accept_on_round_one_records_zero_regret() {
    let svc = service();
    let id = start(&svc, "enc-1").cycle_id;
    svc.wait_settled(&id, WAIT).unwrap();
    let v = svc.submit_feedback(&id, accept(1)).unwrap();
    assert_eq!(v.status, CyclePhase::Accepted);
    assert!(v.review.is_none());
    let regret = svc.regret("dr-a").unwrap();
    assert_eq!(regret.cycles.len(), 1);
    assert_eq!(regret.cycles[0].regret, Some(0));
    assert_eq!(svc.preferences("dr-a").unwrap().state.cycles_applied, 1);
}

#[test]
fn duplicate_feedback_is_a_conflict_with_no_second_effect() {
    let svc = service();
    let id = start(&svc, "enc-1").cycle_id;
    svc.wait_settled(&id, WAIT).unwrap();
    svc.submit_feedback(&id, accept(1)).unwrap();
    let log_len = svc.engine().log().lock().unwrap().len();
    let err = svc.submit_feedback(&id, accept(1)).unwrap_err();
    assert_eq!(err.code(), "conflict");
    assert_eq!(svc.engine().bandit_updates(), 1);
    assert_eq!(svc.engine().log().lock().unwrap().len(), log_len);
}

#[test]
fn stale_round_after_reject_conflicts() {
    let svc = service();
    let id = start(&svc, "enc-1").cycle_id;
    svc.wait_settled(&id, WAIT).unwrap();
    let reject = FeedbackSubmission {
        round: 1,
        feedback: ClinicianFeedback::reject(ReasonCategory::ParameterMagnitude, vec![Parameter::Fio2], "smaller"),
    };
    let v = svc.submit_feedback(&id, reject.clone()).unwrap();
    assert_eq!(v.status, CyclePhase::Review);
    let review = v.review.unwrap();
    assert_eq!(review.round, 2);
    // The round-2 proposal honours the accumulated constraints.
    let first = &svc.trail(&id).unwrap().served_reviews[0];
    let step = |r: &PendingReview| {
        r.proposal
            .setting_updates
            .get(&Parameter::Fio2)
            .map(|v| (v - r.current_settings.fio2.unwrap()).abs())
    };
    let a = step(first).expect("round 1 changes fio2");
    if let Some(b) = step(&review) {
        assert!(b <= a / 2.0 + 1e-9, "{a} -> {b}");
    }
    assert_eq!(svc.submit_feedback(&id, reject).unwrap_err().code(), "conflict");
}

#[test]
fn invalid_feedback_is_rejected_with_a_path() {
    let svc = service();
    let id = start(&svc, "enc-1").cycle_id;
    svc.wait_settled(&id, WAIT).unwrap();
    let mut fb = ClinicianFeedback::reject(ReasonCategory::Other, vec![], "");
    fb.reason_category = None;
    let err = svc.submit_feedback(&id, FeedbackSubmission { round: 1, feedback: fb }).unwrap_err();
    assert_eq!(err.code(), "invalid_request");
    assert!(err.path().unwrap().starts_with("feedback"));
    // Still open.
    assert_eq!(svc.get_pending_review(&id).unwrap().status, CyclePhase::Review);
}

#[test]
fn every_served_review_is_in_the_trail() {
    let svc = service();
    let id = start(&svc, "enc-1").cycle_id;
    svc.wait_settled(&id, WAIT).unwrap();
    for round in 1..=2 {
        svc.submit_feedback(
            &id,
            FeedbackSubmission {
                round,
                feedback: ClinicianFeedback::reject(ReasonCategory::WrongPriority, vec![], ""),
            },
        )
        .unwrap();
    }
    svc.submit_feedback(&id, accept(3)).unwrap();
    let trail = svc.trail(&id).unwrap();
    let record = trail.record.unwrap();
    assert_eq!(trail.served_reviews.len(), 3);
    for r in &trail.served_reviews {
        assert_eq!(record.trace[r.round as usize - 1].proposal, r.proposal);
    }
    assert_eq!(trail.entries.len(), 3);
}

#[test]
fn restart_reproduces_terminal_statuses() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("log.jsonl");
    let open = || {
        let log = LongTermLog::open(&path).unwrap();
        let engine = Engine::new(
            Arc::new(AgentRuntime::scripted()),
            Arc::new(Mutex::new(log)),
            EngineConfig::default(),
        )
        .unwrap();
        let svc = Service::new(engine);
        loaded(&svc);
        svc
    };
    let svc = open();
    let a = start(&svc, "enc-1").cycle_id;
    svc.wait_settled(&a, WAIT).unwrap();
    svc.submit_feedback(&a, accept(1)).unwrap();
    let b = start(&svc, "enc-stable").cycle_id;
    svc.wait_settled(&b, WAIT).unwrap();
    let c = start(&svc, "enc-1").cycle_id;
    assert_eq!(c, "enc-1-c1");
    svc.wait_settled(&c, WAIT).unwrap();
    let before: Vec<_> = [&a, &b].iter().map(|id| svc.get_pending_review(id).unwrap()).collect();
    let regret = svc.regret("dr-a").unwrap();
    drop(svc);

    let svc = open();
    let after: Vec<_> = [&a, &b].iter().map(|id| svc.get_pending_review(id).unwrap()).collect();
    assert_eq!(before, after);
    assert_eq!(svc.regret("dr-a").unwrap(), regret);
    // The open cycle was never logged; its id is handed out again.
    assert_eq!(svc.get_pending_review(&c).unwrap_err().code(), "not_found");
    assert_eq!(start(&svc, "enc-1").cycle_id, "enc-1-c1");
}
