use std::collections::{BTreeMap, BTreeSet};

use criterion::{black_box, criterion_group, criterion_main, Criterion};

use vdss_core::bandit::{apply_signal, preference_scores, PreferenceState};
use vdss_core::contracts::{
    ModeRegistry, Parameter, PreferenceCategory, PreferenceSignal, PriorityId, Proposal, VentilatorSettings, FEATURE_DIM,
};
use vdss_core::replay::clinician::ClinicianProfile;
use vdss_core::replay::study::{run_regret_study, Variant};
use vdss_core::safety::check_proposal;
use vdss_core::workflow::EngineConfig;

fn context(i: usize) -> Vec<f64> {
    (0..FEATURE_DIM).map(|j| ((i * 7 + j * 3) % 11) as f64 / 11.0 - 0.5).collect()
}

fn bandit(c: &mut Criterion) {
    let signal = PreferenceSignal {
        evidenced_by_accept: BTreeSet::from([PreferenceCategory::ConservativeSmallStep, PreferenceCategory::PrioOxygenation]),
        evidenced_only_by_reject: BTreeSet::from([PreferenceCategory::ModeLevelChange]),
    };
    let state = PreferenceState::fresh("bench", Default::default());
    let x = context(1);
    c.bench_function("bandit_update", |b| b.iter(|| apply_signal(black_box(&state), black_box(&x), &signal).unwrap()));

    let mut warm = state.clone();
    for i in 0..50 {
        warm = apply_signal(&warm, &context(i), &signal).unwrap();
    }
    c.bench_function("preference_scores", |b| b.iter(|| preference_scores(black_box(&warm), black_box(&x)).unwrap()));
}

fn safety(c: &mut Criterion) {
    let registry = ModeRegistry::default();
    let current = VentilatorSettings::new("PRVC")
        .with(Parameter::Peep, 10.0)
        .with(Parameter::Fio2, 60.0)
        .with(Parameter::RespRateSet, 18.0);
    let proposal = Proposal {
        cycle_id: "bench".into(),
        round_index: 1,
        strategy: PriorityId::ALL[0],
        mode_change: None,
        setting_updates: BTreeMap::from([(Parameter::Fio2, 50.0), (Parameter::Peep, 12.0)]),
        category_tags: BTreeSet::new(),
        rationale: String::new(),
    };
    c.bench_function("safety_check", |b| b.iter(|| check_proposal(black_box(&proposal), &current, &registry)));
}

fn cycles(c: &mut Criterion) {
    let profile = ClinicianProfile::conservative(0);
    let config = EngineConfig::default();
    let mut g = c.benchmark_group("study");
    g.sample_size(10);
    g.bench_function("20_cycles", |b| b.iter(|| run_regret_study(20, &profile, &config, Variant::Full, 0).unwrap()));
    g.finish();
}

criterion_group!(benches, bandit, safety, cycles);
criterion_main!(benches);
