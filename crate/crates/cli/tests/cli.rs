use clap::Parser;
use serde_json::Value;

use vdss_cli::{run, Cli};

fn vdss(args: &[&str]) -> anyhow::Result<()> {
    run(Cli::try_parse_from(std::iter::once("vdss").chain(args.iter().copied()))?)
}

#[test]
fn synth_then_replay_writes_a_report() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("cohort.csv");
    let out = dir.path().join("report.json");
    vdss(&["synth", "--encounters", "12", "--seed", "3", "--out", data.to_str().unwrap()]).unwrap();
    vdss(&[
        "replay", "--data", data.to_str().unwrap(), "--fault-rate", "0.1", "--retries", "2", "--out", out.to_str().unwrap(),
    ])
    .unwrap();
    let report: Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert!(report["pairs_attempted"].as_u64().unwrap() > 0);
    assert!(report["metrics"]["mse"].as_f64().unwrap().is_finite());
}

#[test]
fn regret_csv_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for p in [&a, &b] {
        vdss(&["regret", "--cycles", "15", "--variant", "nopref", "--out", p.to_str().unwrap()]).unwrap();
    }
    let text = std::fs::read_to_string(&a).unwrap();
    assert_eq!(text, std::fs::read_to_string(&b).unwrap());
    assert!(text.starts_with("cycle_index,regret,rolling_mean_10\n"));
    assert_eq!(text.lines().count(), 16);
}

#[test]
fn unknown_variant_is_a_usage_error() {
    assert!(Cli::try_parse_from(["vdss", "regret", "--variant", "bogus", "--out", "x"]).is_err());
}

#[test]
fn audit_export_of_missing_log_fails() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("none.jsonl");
    let out = dir.path().join("out.json");
    let err = vdss(&["audit", "export", "--log", missing.to_str().unwrap(), "--out", out.to_str().unwrap()]).unwrap_err();
    assert!(err.to_string().contains("no log"));
}

#[test]
fn schemas_are_written() {
    let dir = tempfile::tempdir().unwrap();
    vdss(&["schemas", "--out", dir.path().to_str().unwrap()]).unwrap();
    let n = std::fs::read_dir(dir.path()).unwrap().count();
    assert_eq!(n, vdss_core::schemas::all_schemas().len());
}

#[test]
fn audit_export_of_a_served_log() {
    use std::sync::{Arc, Mutex};
    use std::time::Duration;
    use vdss_core::agents::AgentRuntime;
    use vdss_core::contracts::ClinicianFeedback;
    use vdss_core::memory::LongTermLog;
    use vdss_core::replay::synth::synth_trajectories;
    use vdss_core::service::{DatasetLoadRequest, FeedbackSubmission, Service, StartCycleRequest};
    use vdss_core::workflow::{Engine, EngineConfig};

    let dir = tempfile::tempdir().unwrap();
    let log_path = dir.path().join("log.jsonl");
    {
        let log = LongTermLog::open(&log_path).unwrap();
        let engine = Engine::new(Arc::new(AgentRuntime::scripted()), Arc::new(Mutex::new(log)), EngineConfig::default()).unwrap();
        let svc = Service::new(engine);
        let records = synth_trajectories(3, 1, &Default::default());
        svc.load_dataset(DatasetLoadRequest { path: None, records: Some(records) }).unwrap();
        for enc in ["syn-0000", "syn-0001"] {
            let req = StartCycleRequest { clinician_id: "dr".into(), window: None, waveform_enabled: false };
            let id = svc.start_cycle(enc, req).unwrap().cycle_id;
            let v = svc.wait_settled(&id, Duration::from_secs(10)).unwrap();
            if let Some(r) = v.review {
                svc.submit_feedback(&id, FeedbackSubmission { round: r.round, feedback: ClinicianFeedback::accept() }).unwrap();
            }
        }
    }
    let out = dir.path().join("audit.json");
    vdss(&["audit", "export", "--log", log_path.to_str().unwrap(), "--out", out.to_str().unwrap()]).unwrap();
    let trails: Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    let trails = trails.as_array().unwrap();
    assert_eq!(trails.len(), 2);
    assert!(trails.iter().all(|t| !t["entries"].as_array().unwrap().is_empty()));

    let one = dir.path().join("one.json");
    vdss(&["audit", "export", "--log", log_path.to_str().unwrap(), "--encounter", "syn-0001", "--out", one.to_str().unwrap()]).unwrap();
    let one: Value = serde_json::from_str(&std::fs::read_to_string(&one).unwrap()).unwrap();
    assert_eq!(one[0]["encounter_id"], "syn-0001");
}
