use super::*;
use crate::replay::synth::synth_trajectories;

fn registry() -> Arc<ModeRegistry> {
    Arc::new(ModeRegistry::default())
}

fn rec(enc: &str, t: f64, peep: f64, fio2: f64) -> TrajectoryRecord {
    TrajectoryRecord {
        encounter_id: enc.into(),
        state: PatientState::nominal(t),
        settings: VentilatorSettings::new("VC")
            .with(Parameter::Peep, peep)
            .with(Parameter::Fio2, fio2)
            .with(Parameter::RespRateSet, 16.0 + t),
    }
}

fn three_encounters() -> Vec<TrajectoryRecord> {
    ["a", "b", "c"]
        .iter()
        .enumerate()
        .flat_map(|(i, e)| (0..3).map(move |t| rec(e, t as f64, 5.0 + i as f64 + t as f64, 40.0 + 5.0 * t as f64)))
        .collect()
}

#[test]
fn three_encounter_jsonl_loads_with_stats() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.jsonl");
    write_jsonl(&three_encounters(), File::create(&path).unwrap()).unwrap();
    let ds = load_trajectories(&path, &registry()).unwrap();
    assert_eq!(ds.encounters.len(), 3);
    assert!(ds.skipped.is_empty());
    assert_eq!(ds.n_pairs(), 6);
    // peep values: a 5,6,7  b 6,7,8  c 7,8,9
    let peep = ds.stats[&Parameter::Peep];
    assert_eq!(peep.n, 9);
    assert!((peep.mean - 7.0).abs() < 1e-12);
    let var = [5., 6., 7., 6., 7., 8., 7., 8., 9.].iter().map(|x: &f64| (x - 7.0).powi(2)).sum::<f64>() / 9.0;
    assert!((peep.std - var.sqrt()).abs() < 1e-12);
    assert!(!ds.stats.contains_key(&Parameter::PressureSupport));
}

#[test]
fn malformed_jsonl_row_is_skipped_with_its_line() {
    let mut buf = Vec::new();
    write_jsonl(&three_encounters(), &mut buf).unwrap();
    let mut text = String::from_utf8(buf).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    lines.insert(3, "{\"encounter_id\": \"a\", \"state\": 7}");
    text = lines.join("\n");
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.jsonl");
    std::fs::write(&path, text).unwrap();
    let ds = load_trajectories(&path, &registry()).unwrap();
    assert_eq!(ds.skipped.len(), 1);
    assert_eq!(ds.skipped[0].line, 4);
    assert_eq!(ds.encounters.len(), 3);
}

#[test]
fn csv_round_trip_and_bad_row_line() {
    let mut buf = Vec::new();
    write_csv(&three_encounters(), &mut buf).unwrap();
    let mut text = String::from_utf8(buf).unwrap();
    // Row with an out-of-range FiO2 on the third physical line.
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    lines[2] = lines[2].replacen(",45.0,", ",450.0,", 1);
    text = lines.join("\n");
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.csv");
    std::fs::write(&path, &text).unwrap();
    let ds = load_trajectories(&path, &registry()).unwrap();
    assert_eq!(ds.skipped.len(), 1, "{:?}", ds.skipped);
    assert_eq!(ds.skipped[0].line, 3);
    assert_eq!(ds.n_records(), 8);
}

#[test]
fn constant_column_is_zero_variance() {
    let recs: Vec<_> = three_encounters()
        .into_iter()
        .map(|mut r| {
            r.settings.set(Parameter::Fio2, Some(40.0));
            r
        })
        .collect();
    let err = TrajectoryDataset::from_records(recs, &registry()).unwrap_err();
    assert_eq!(err.to_string(), "zero variance for fio2");
}

#[test]
fn no_valid_encounters_is_an_error() {
    let recs = vec![rec("a", 0.0, 5.0, 40.0), rec("b", 0.0, 6.0, 50.0)];
    let err = TrajectoryDataset::from_records(recs, &registry()).unwrap_err();
    assert!(matches!(err, DatasetError::NoEncounters { .. }));
}

#[test]
fn serial_and_parallel_replays_agree() {
    let reg = registry();
    let ds = TrajectoryDataset::from_records(synth_trajectories(12, 5, &reg), &reg).unwrap();
    let serial = ReplayOptions {
        parallel: false,
        fault_rate: 0.05,
        seed: 9,
        ..Default::default()
    };
    let parallel = ReplayOptions { parallel: true, ..serial.clone() };
    let a = replay_next_step(&ds, reg.clone(), &serial).unwrap();
    let b = replay_next_step(&ds, reg, &parallel).unwrap();
    assert_eq!(a, b);
    assert_eq!(
        a.metrics.n_pairs + a.completion_failures,
        a.pairs_attempted,
        "every pair is scored or counted as a failure"
    );
}

#[test]
fn replay_scores_every_pair_without_faults() {
    let reg = registry();
    let ds = TrajectoryDataset::from_records(synth_trajectories(10, 2, &reg), &reg).unwrap();
    let r = replay_next_step(&ds, reg, &ReplayOptions::default()).unwrap();
    assert_eq!(r.completion_failures, 0);
    assert_eq!(r.metrics.n_pairs, ds.n_pairs());
    assert!(r.metrics.mse >= 0.0 && r.metrics.mae >= 0.0);
    assert!(r.metrics.r2.is_none_or(|r2| r2 <= 1.0));
}

#[test]
fn certain_faults_fail_every_pair() {
    let reg = registry();
    let ds = TrajectoryDataset::from_records(synth_trajectories(8, 2, &reg), &reg).unwrap();
    let opts = ReplayOptions {
        fault_rate: 1.0,
        ..Default::default()
    };
    let r = replay_next_step(&ds, reg, &opts).unwrap();
    assert_eq!(r.completion_failures, r.pairs_attempted);
    assert_eq!(r.completion_failure_rate, 1.0);
    assert_eq!(r.metrics.n_pairs, 0);
}
