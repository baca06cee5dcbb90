//! Synthetic, non-clinical cohort generator.
//!
//! Encounters follow a small stochastic transition model: the bedside state
//! drifts, responds weakly to FiO2/PEEP/rate changes, and a rule-of-thumb
//! policy adjusts the settings. The output exists to make the harness
//! runnable; it carries no clinical meaning.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::agents::waveform::{generate_waveform, WaveformSpec, WaveformTemplate};
use crate::contracts::{mask_settings, ModeRegistry, Parameter, PatientState, VentilatorSettings, WaveformSegment};
use crate::workflow::CycleInput;

use super::TrajectoryRecord;

pub const SYNTH_MODES: [&str; 5] = ["VC", "PC", "PRVC", "SIMV", "PSV"];

const WAVEFORM_PREFIX: &str = "synth";
const WAVEFORM_SNR_DB: f64 = 30.0;

fn template_name(t: WaveformTemplate) -> &'static str {
    match t {
        WaveformTemplate::Clean => "clean",
        WaveformTemplate::Sawtooth => "sawtooth",
        WaveformTemplate::Scooped => "scooped",
    }
}

pub fn waveform_ref(template: WaveformTemplate, seed: u64) -> String {
    format!("{WAVEFORM_PREFIX}:{}:{seed}", template_name(template))
}

/// Regenerate the segment behind a `synth:<template>:<seed>` reference.
pub fn resolve_waveform(reference: &str) -> Option<WaveformSegment> {
    let mut parts = reference.split(':');
    if parts.next()? != WAVEFORM_PREFIX {
        return None;
    }
    let template = match parts.next()? {
        "clean" => WaveformTemplate::Clean,
        "sawtooth" => WaveformTemplate::Sawtooth,
        "scooped" => WaveformTemplate::Scooped,
        _ => return None,
    };
    let seed = parts.next()?.parse().ok()?;
    if parts.next().is_some() {
        return None;
    }
    let mut segment = generate_waveform(&WaveformSpec {
        template,
        snr_db: Some(WAVEFORM_SNR_DB),
        seed,
        ..WaveformSpec::default()
    });
    segment.segment_id = reference.to_string();
    Some(segment)
}

fn pick_template(rng: &mut ChaCha8Rng) -> WaveformTemplate {
    let u: f64 = rng.gen();
    if u < 0.15 {
        WaveformTemplate::Sawtooth
    } else if u < 0.25 {
        WaveformTemplate::Scooped
    } else {
        WaveformTemplate::Clean
    }
}

fn round_to(x: f64, step: f64) -> f64 {
    (x / step).round() * step
}

fn initial_settings(rng: &mut ChaCha8Rng, mode: &str, registry: &ModeRegistry) -> VentilatorSettings {
    let full = VentilatorSettings::new(mode)
        .with(Parameter::Peep, rng.gen_range(5..=12) as f64)
        .with(Parameter::Fio2, round_to(rng.gen_range(30.0..80.0), 5.0))
        .with(Parameter::PressureSupport, rng.gen_range(5..=15) as f64)
        .with(Parameter::InspiratoryPressure, rng.gen_range(10..=25) as f64)
        .with(Parameter::RespRateSet, rng.gen_range(12..=24) as f64);
    clamp(mask_settings(&full, registry).expect("synthetic modes are registered"), registry)
}

fn clamp(mut s: VentilatorSettings, registry: &ModeRegistry) -> VentilatorSettings {
    let spec = registry.mode(&s.mode).expect("registered mode").clone();
    for (p, v) in s.clone().present() {
        s.set(p, Some(spec.bounds[&p].clamp(v)));
    }
    s
}

fn initial_state(rng: &mut ChaCha8Rng, t: f64) -> PatientState {
    PatientState {
        timestamp: t,
        spo2: Some(rng.gen_range(86..=99) as f64),
        heart_rate: Some(rng.gen_range(70..=125) as f64),
        map: Some(rng.gen_range(55..=90) as f64),
        ph: Some(round_to(rng.gen_range(7.22..7.46), 0.01)),
        paco2: Some(rng.gen_range(33..=60) as f64),
        pao2: Some(rng.gen_range(60..=160) as f64),
        tidal_volume_obs: Some(round_to(rng.gen_range(340.0..560.0), 10.0)),
        resp_rate_obs: Some(rng.gen_range(14..=32) as f64),
        weight_kg: rng.gen_range(50..=100) as f64,
        waveform_ref: None,
    }
}

/// Rule-of-thumb next settings for a synthetic encounter.
fn next_settings(
    rng: &mut ChaCha8Rng,
    state: &PatientState,
    s: &VentilatorSettings,
    registry: &ModeRegistry,
) -> VentilatorSettings {
    let mut n = s.clone();
    let bump = |n: &mut VentilatorSettings, p: Parameter, d: f64| {
        if let Some(v) = n.get(p) {
            n.set(p, Some(v + d));
        }
    };
    let spo2 = state.spo2.unwrap_or(95.0);
    if spo2 < 92.0 {
        bump(&mut n, Parameter::Fio2, 10.0);
        if rng.gen_bool(0.5) {
            bump(&mut n, Parameter::Peep, 2.0);
        }
    } else if spo2 > 97.0 && n.fio2.is_some_and(|f| f > 40.0) {
        bump(&mut n, Parameter::Fio2, -10.0);
    }
    if state.ph.is_some_and(|ph| ph < 7.32) {
        bump(&mut n, Parameter::RespRateSet, 2.0);
    }
    if rng.gen_bool(0.15) {
        bump(&mut n, Parameter::Peep, if rng.gen_bool(0.5) { 2.0 } else { -2.0 });
    }
    if rng.gen_bool(0.2) {
        bump(&mut n, Parameter::PressureSupport, -2.0);
        bump(&mut n, Parameter::InspiratoryPressure, if rng.gen_bool(0.5) { 2.0 } else { -2.0 });
    }
    if n.mode.as_str() != "PSV" && n.fio2.is_some_and(|f| f <= 40.0) && rng.gen_bool(0.2) {
        let mut psv = VentilatorSettings::new("PSV");
        for p in [Parameter::Peep, Parameter::Fio2] {
            psv.set(p, n.get(p));
        }
        psv.set(Parameter::PressureSupport, Some(rng.gen_range(8..=14) as f64));
        n = psv;
    }
    clamp(n, registry)
}

fn next_state(rng: &mut ChaCha8Rng, prev: &PatientState, before: &VentilatorSettings, after: &VentilatorSettings, t: f64) -> PatientState {
    let d = |p: Parameter| after.get(p).unwrap_or(0.0) - before.get(p).unwrap_or(0.0);
    let mut s = prev.clone();
    s.timestamp = t;
    let jitter = |rng: &mut ChaCha8Rng, x: f64| x + rng.gen_range(-x..=x);
    s.spo2 = prev
        .spo2
        .map(|v| (v + 0.15 * d(Parameter::Fio2) + 0.5 * d(Parameter::Peep) + jitter(rng, 1.5)).round().clamp(70.0, 100.0));
    s.ph = prev
        .ph
        .map(|v| round_to((v + 0.01 * d(Parameter::RespRateSet) + jitter(rng, 0.02)).clamp(7.0, 7.6), 0.01));
    s.paco2 = prev
        .paco2
        .map(|v| (v - 1.5 * d(Parameter::RespRateSet) + jitter(rng, 2.0)).round().clamp(25.0, 90.0));
    s.pao2 = prev
        .pao2
        .map(|v| (v + 1.2 * d(Parameter::Fio2) + jitter(rng, 8.0)).round().clamp(40.0, 300.0));
    s.heart_rate = prev.heart_rate.map(|v| (v + jitter(rng, 4.0)).round().clamp(40.0, 180.0));
    s.map = prev.map.map(|v| (v - 0.8 * d(Parameter::Peep) + jitter(rng, 3.0)).round().clamp(40.0, 120.0));
    s.resp_rate_obs = prev.resp_rate_obs.map(|v| (v + jitter(rng, 2.0)).round().clamp(6.0, 45.0));
    s
}

/// `n_encounters` synthetic encounters of 6 to 12 hourly records each.
pub fn synth_trajectories(n_encounters: usize, seed: u64, registry: &ModeRegistry) -> Vec<TrajectoryRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for e in 0..n_encounters {
        let encounter_id = format!("syn-{e:04}");
        let len = rng.gen_range(6..=12);
        let mode = *SYNTH_MODES.choose(&mut rng).expect("non-empty");
        let mut settings = initial_settings(&mut rng, mode, registry);
        let mut state = initial_state(&mut rng, 0.0);
        for k in 0..len {
            let mut s = state.clone();
            s.waveform_ref = Some(waveform_ref(pick_template(&mut rng), rng.gen()));
            out.push(TrajectoryRecord {
                encounter_id: encounter_id.clone(),
                state: s,
                settings: settings.clone(),
            });
            let next = next_settings(&mut rng, &state, &settings, registry);
            state = next_state(&mut rng, &state, &settings, &next, 3600.0 * (k + 1) as f64);
            settings = next;
        }
    }
    out
}

/// Abnormal bedside states for regret studies: one dominant problem per
/// cycle, a random mode, and a waveform segment.
pub fn study_inputs(n: usize, seed: u64, clinician_id: &str, registry: &ModeRegistry) -> Vec<CycleInput> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let mut state = PatientState::nominal(3600.0 * i as f64);
            match rng.gen_range(0..5) {
                0 => state.spo2 = Some(rng.gen_range(85..=91) as f64),
                1 => {
                    state.spo2 = Some(rng.gen_range(98..=100) as f64);
                    state.pao2 = Some(rng.gen_range(130..=220) as f64);
                }
                2 => {
                    state.ph = Some(round_to(rng.gen_range(7.18..7.30), 0.01));
                    state.paco2 = Some(rng.gen_range(50..=68) as f64);
                }
                3 => state.map = Some(rng.gen_range(48..=61) as f64),
                _ => state.resp_rate_obs = Some(rng.gen_range(33..=40) as f64),
            }
            let mode = *SYNTH_MODES.choose(&mut rng).expect("non-empty");
            let settings = initial_settings(&mut rng, mode, registry);
            let template = pick_template(&mut rng);
            let wf_seed: u64 = rng.gen();
            let reference = waveform_ref(template, wf_seed);
            state.waveform_ref = Some(reference.clone());
            CycleInput {
                encounter_id: format!("study-{i:03}"),
                clinician_id: clinician_id.to_string(),
                state,
                settings,
                waveform: resolve_waveform(&reference),
            }
        })
        .collect()
}
