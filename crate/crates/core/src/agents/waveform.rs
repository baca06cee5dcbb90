//! Synthetic pressure/flow traces and the deterministic cue extractor.
//!
//! The generator draws pressure-controlled breaths with an optional
//! distortion (expiratory flow oscillation for secretions, a sagging
//! inspiratory plateau for flow starvation) plus Gaussian noise at a chosen
//! SNR. The extractor segments breaths from smoothed pressure and tests each
//! distortion directly, so the two are tuned against each other.

use std::collections::BTreeSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr_normal::standard_normal;

use crate::contracts::{AsynchronyPattern, WaveformCues, WaveformQuality, WaveformSegment};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WaveformTemplate {
    Clean,
    Sawtooth,
    Scooped,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WaveformSpec {
    pub template: WaveformTemplate,
    pub breaths: usize,
    pub sample_rate_hz: f64,
    pub resp_rate: f64,
    pub peep: f64,
    pub driving_pressure: f64,
    /// Noise level relative to each channel's signal power; `None` is noiseless.
    pub snr_db: Option<f64>,
    /// Fraction of samples dropped to `null`.
    pub missing_ratio: f64,
    pub seed: u64,
}

impl Default for WaveformSpec {
    fn default() -> Self {
        WaveformSpec {
            template: WaveformTemplate::Clean,
            breaths: 8,
            sample_rate_hz: 100.0,
            resp_rate: 15.0,
            peep: 8.0,
            driving_pressure: 15.0,
            snr_db: None,
            missing_ratio: 0.0,
            seed: 0,
        }
    }
}

const PEAK_FLOW: f64 = 60.0;
const FLOW_TAU_S: f64 = 0.25;
const SAWTOOTH_HZ: f64 = 6.0;
const SAWTOOTH_AMPLITUDE: f64 = 8.0;
/// Depth of the plateau sag as a fraction of the driving pressure.
const SCOOP_DEPTH: f64 = 0.35;

/// Draw a segment from `spec`. Deterministic in `spec.seed`.
pub fn generate_waveform(spec: &WaveformSpec) -> WaveformSegment {
    let fs = spec.sample_rate_hz;
    let period = 60.0 / spec.resp_rate;
    let ti = period / 3.0;
    let n = (spec.breaths as f64 * period * fs).round() as usize;
    let mut pressure = Vec::with_capacity(n);
    let mut flow = Vec::with_capacity(n);
    for i in 0..n {
        let t = i as f64 / fs;
        let tb = t % period;
        if tb < ti {
            let mut p = spec.peep + spec.driving_pressure;
            if spec.template == WaveformTemplate::Scooped {
                p -= SCOOP_DEPTH * spec.driving_pressure * (std::f64::consts::PI * tb / ti).sin();
            }
            pressure.push(p);
            flow.push(PEAK_FLOW * (-tb / FLOW_TAU_S).exp());
        } else {
            let te = tb - ti;
            pressure.push(spec.peep);
            let mut f = -PEAK_FLOW * (-te / FLOW_TAU_S).exp();
            if spec.template == WaveformTemplate::Sawtooth {
                f += SAWTOOTH_AMPLITUDE * (2.0 * std::f64::consts::PI * SAWTOOTH_HZ * te).sin();
            }
            flow.push(f);
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    if let Some(snr) = spec.snr_db {
        for ch in [&mut pressure, &mut flow] {
            let sigma = (variance(ch) / 10f64.powf(snr / 10.0)).sqrt();
            for v in ch.iter_mut() {
                *v += sigma * standard_normal(&mut rng);
            }
        }
    }
    let mut drop = |v: Vec<f64>| -> Vec<Option<f64>> {
        v.into_iter()
            .map(|x| {
                if spec.missing_ratio > 0.0 && rand::Rng::gen_bool(&mut rng, spec.missing_ratio.min(1.0)) {
                    None
                } else {
                    Some(x)
                }
            })
            .collect()
    };
    let pressure = drop(pressure);
    let flow = drop(flow);
    WaveformSegment {
        segment_id: format!("synthetic-{:?}-{}", spec.template, spec.seed).to_lowercase(),
        sample_rate_hz: fs,
        pressure,
        flow,
        image_ref: None,
    }
}

/// Thresholds of the cue extractor.
#[derive(Debug, Clone, PartialEq)]
pub struct CueDetector {
    /// Pressure smoothing window for breath segmentation, seconds.
    pub smoothing_s: f64,
    /// Shortest inspiration or expiration accepted by segmentation, seconds.
    pub min_phase_s: f64,
    /// High-pass window for expiratory flow, seconds.
    pub highpass_s: f64,
    /// Expiratory time skipped after each breath's release, seconds.
    pub expiratory_settle_s: f64,
    /// Minimum hysteresis band for flow zero crossings, L/min.
    pub min_crossing_band: f64,
    /// Zero crossings per expiratory second that count as sawtooth.
    pub sawtooth_crossing_rate: f64,
    /// Plateau curvature (cmH2O over the normalised plateau) that counts as scooped.
    pub scoop_curvature: f64,
    /// t-statistic the curvature estimate must also reach.
    pub scoop_t: f64,
}

impl Default for CueDetector {
    fn default() -> Self {
        CueDetector {
            smoothing_s: 0.3,
            min_phase_s: 0.4,
            highpass_s: 0.25,
            expiratory_settle_s: 0.4,
            min_crossing_band: 1.5,
            sawtooth_crossing_rate: 4.0,
            scoop_curvature: 1.0,
            scoop_t: 3.0,
        }
    }
}

struct Breath {
    insp: (usize, usize),
    exp: (usize, usize),
}

impl CueDetector {
    pub fn extract(&self, segment: &WaveformSegment) -> WaveformCues {
        let n = segment.pressure.len().min(segment.flow.len());
        if n == 0 || !(segment.sample_rate_hz > 0.0) {
            return unusable("empty segment");
        }
        let missing = segment.pressure[..n]
            .iter()
            .chain(&segment.flow[..n])
            .filter(|v| v.map_or(true, |x| !x.is_finite()))
            .count() as f64
            / (2 * n) as f64;
        let quality = if missing < 0.05 {
            WaveformQuality::Good
        } else if missing < 0.3 {
            WaveformQuality::Degraded
        } else {
            WaveformQuality::Unusable
        };
        if quality == WaveformQuality::Unusable {
            return unusable("too many missing samples");
        }
        let fs = segment.sample_rate_hz;
        let pressure = interpolate(&segment.pressure[..n]);
        let flow = interpolate(&segment.flow[..n]);

        let smooth = moving_average(&pressure, window(self.smoothing_s, fs));
        let breaths = segment_breaths(&smooth, window(self.min_phase_s, fs));
        if breaths.len() < 2 {
            return WaveformCues {
                quality,
                asynchrony_patterns: BTreeSet::from([AsynchronyPattern::None]),
                suspicious_events: vec!["fewer than two breaths".into()],
                observed_state: "breath segmentation failed".into(),
                uncertainty: 1.0,
            };
        }

        let noise_p = noise_sigma(&pressure);
        let noise_f = noise_sigma(&flow);
        let r = (noise_p / variance(&smooth).sqrt().max(1e-12)).max(
            noise_f / variance(&moving_average(&flow, window(self.smoothing_s, fs))).sqrt().max(1e-12),
        );
        let uncertainty = missing.max(2.0 * r * r / (1.0 + 2.0 * r * r)).clamp(0.0, 1.0);

        let mut patterns = BTreeSet::new();
        let mut events = Vec::new();
        let rate = self.crossing_rate(&flow, &breaths, fs, noise_f);
        if rate >= self.sawtooth_crossing_rate {
            patterns.insert(AsynchronyPattern::Sawtooth);
            events.push(format!("expiratory flow oscillation, {rate:.1} crossings/s"));
        }
        let (curv, t) = plateau_curvature(&pressure, &breaths);
        if curv >= self.scoop_curvature && t >= self.scoop_t {
            patterns.insert(AsynchronyPattern::ScoopedPlateau);
            events.push(format!("inspiratory plateau sag, curvature {curv:.2} (t={t:.1})"));
        }
        if patterns.is_empty() {
            patterns.insert(AsynchronyPattern::None);
        }
        WaveformCues {
            quality,
            asynchrony_patterns: patterns,
            suspicious_events: events,
            observed_state: format!("{} breaths segmented", breaths.len()),
            uncertainty,
        }
    }

    fn crossing_rate(&self, flow: &[f64], breaths: &[Breath], fs: f64, noise: f64) -> f64 {
        let hp: Vec<f64> = {
            let ma = moving_average(flow, window(self.highpass_s, fs));
            flow.iter().zip(&ma).map(|(f, m)| f - m).collect()
        };
        let band = self.min_crossing_band.max(3.0 * noise);
        let settle = (self.expiratory_settle_s * fs).round() as usize;
        let mut crossings = 0usize;
        let mut duration = 0.0;
        for b in breaths {
            let (s, e) = (b.exp.0 + settle, b.exp.1);
            if e <= s {
                continue;
            }
            duration += (e - s) as f64 / fs;
            let mut side = 0i8;
            for &v in &hp[s..e] {
                let now = if v > band {
                    1
                } else if v < -band {
                    -1
                } else {
                    0
                };
                if now != 0 {
                    if side != 0 && now != side {
                        crossings += 1;
                    }
                    side = now;
                }
            }
        }
        if duration > 0.0 {
            crossings as f64 / duration
        } else {
            0.0
        }
    }
}

/// Extract cues with the default detector.
pub fn scripted_waveform_cues(segment: &WaveformSegment) -> WaveformCues {
    CueDetector::default().extract(segment)
}

fn unusable(reason: &str) -> WaveformCues {
    WaveformCues {
        quality: WaveformQuality::Unusable,
        asynchrony_patterns: BTreeSet::from([AsynchronyPattern::None]),
        suspicious_events: vec![reason.to_string()],
        observed_state: String::new(),
        uncertainty: 1.0,
    }
}

fn window(seconds: f64, fs: f64) -> usize {
    ((seconds * fs).round() as usize).max(1)
}

fn variance(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    let m = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64
}

/// Linear interpolation over missing samples; edges take the nearest value.
fn interpolate(v: &[Option<f64>]) -> Vec<f64> {
    let known: Vec<(usize, f64)> = v
        .iter()
        .enumerate()
        .filter_map(|(i, x)| x.filter(|x| x.is_finite()).map(|x| (i, x)))
        .collect();
    if known.is_empty() {
        return vec![0.0; v.len()];
    }
    let mut out = Vec::with_capacity(v.len());
    let mut k = 0;
    for i in 0..v.len() {
        while k + 1 < known.len() && known[k + 1].0 <= i {
            k += 1;
        }
        let (i0, x0) = known[k];
        if i <= i0 || k + 1 == known.len() {
            out.push(if i < i0 { known[0].1 } else { x0 });
        } else {
            let (i1, x1) = known[k + 1];
            out.push(x0 + (x1 - x0) * (i - i0) as f64 / (i1 - i0) as f64);
        }
    }
    out
}

/// Centered moving average with shrinking windows at the edges.
fn moving_average(v: &[f64], w: usize) -> Vec<f64> {
    let n = v.len();
    let mut prefix = vec![0.0; n + 1];
    for i in 0..n {
        prefix[i + 1] = prefix[i] + v[i];
    }
    let half = w / 2;
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(n);
            (prefix[hi] - prefix[lo]) / (hi - lo) as f64
        })
        .collect()
}

/// Robust noise level from second differences, which cancel slow signal.
fn noise_sigma(v: &[f64]) -> f64 {
    if v.len() < 3 {
        return 0.0;
    }
    let mut d: Vec<f64> = v.windows(3).map(|w| (w[2] - 2.0 * w[1] + w[0]).abs()).collect();
    d.sort_by(f64::total_cmp);
    let mad = d[d.len() / 2];
    mad / 0.6745 / 6f64.sqrt()
}

fn percentile(v: &[f64], q: f64) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s[((s.len() - 1) as f64 * q).round() as usize]
}

/// Breaths (inspiration followed by expiration) from smoothed pressure,
/// using a hysteresis band around the low/high midpoint. Transitions closer
/// than `min_phase` samples to the previous one are treated as noise. The
/// last breath's expiration runs to the end of the trace.
fn segment_breaths(smooth: &[f64], min_phase: usize) -> Vec<Breath> {
    let lo = percentile(smooth, 0.1);
    let hi = percentile(smooth, 0.9);
    let span = hi - lo;
    if !(span > 1.0) {
        return Vec::new();
    }
    let up = lo + 0.6 * span;
    let down = lo + 0.4 * span;
    let mut high = smooth[0] > up;
    // A trace that opens mid-inspiration starts its first breath at 0.
    let mut edges: Vec<(usize, bool)> = if high { vec![(0, true)] } else { Vec::new() };
    let mut last = 0usize;
    for (i, &p) in smooth.iter().enumerate() {
        let flip = if !high { p > up } else { p < down };
        if flip && (edges.is_empty() || i - last >= min_phase) {
            high = !high;
            last = i;
            edges.push((i, high));
        }
    }
    let mut out = Vec::new();
    for (k, &(start, rising)) in edges.iter().enumerate() {
        if !rising {
            continue;
        }
        let Some(&(fall, false)) = edges.get(k + 1) else { continue };
        let end = edges.get(k + 2).map_or(smooth.len(), |e| e.0);
        if fall - start >= min_phase && end - fall >= min_phase {
            out.push(Breath {
                insp: (start, fall),
                exp: (fall, end),
            });
        }
    }
    out
}

/// Pooled quadratic coefficient of raw pressure over the inner 80% of each
/// inspiratory plateau, with time normalised to [-1, 1] and a separate
/// intercept per breath. Positive means the plateau sags in the middle.
/// Returns the coefficient and its t-statistic.
fn plateau_curvature(pressure: &[f64], breaths: &[Breath]) -> (f64, f64) {
    let mut xs: Vec<(f64, f64, f64)> = Vec::new();
    for b in breaths {
        let (s, e) = b.insp;
        let len = e - s;
        if len < 10 {
            continue;
        }
        let trim = len / 10;
        let (s, e) = (s + trim, e - trim);
        let seg: Vec<(f64, f64)> = (s..e)
            .map(|i| {
                let t = 2.0 * (i - s) as f64 / (e - s - 1).max(1) as f64 - 1.0;
                (t, pressure[i])
            })
            .collect();
        // Remove the breath's own intercept and linear trend before pooling.
        let m = seg.len() as f64;
        let mt2 = seg.iter().map(|(t, _)| t * t).sum::<f64>() / m;
        let mp = seg.iter().map(|(_, p)| p).sum::<f64>() / m;
        let st = seg.iter().map(|(t, _)| t * t).sum::<f64>();
        let slope = seg.iter().map(|(t, p)| t * p).sum::<f64>() / st;
        for (t, p) in seg {
            xs.push((t * t - mt2, p - mp - slope * t, t));
        }
    }
    if xs.len() < 4 {
        return (0.0, 0.0);
    }
    let sxx = xs.iter().map(|(x, _, _)| x * x).sum::<f64>();
    if sxx <= 0.0 {
        return (0.0, 0.0);
    }
    let c = xs.iter().map(|(x, y, _)| x * y).sum::<f64>() / sxx;
    let resid = xs.iter().map(|(x, y, _)| (y - c * x).powi(2)).sum::<f64>();
    let dof = (xs.len() as f64 - 2.0 - breaths.len() as f64).max(1.0);
    let se = (resid / dof / sxx).sqrt();
    let t = if se > 0.0 { c / se } else if c > 0.0 { f64::INFINITY } else { 0.0 };
    (c, t)
}

/// Standard normal draws by Box-Muller, kept local so the generator has no
/// extra dependency.
mod rand_distr_normal {
    use rand::Rng;

    pub fn standard_normal<R: Rng>(rng: &mut R) -> f64 {
        let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
        let u2: f64 = rng.gen();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(template: WaveformTemplate, snr_db: Option<f64>, seed: u64) -> WaveformSpec {
        WaveformSpec {
            template,
            snr_db,
            seed,
            ..Default::default()
        }
    }

    #[test]
    fn clean_square_wave_has_no_pattern() {
        let cues = scripted_waveform_cues(&generate_waveform(&spec(WaveformTemplate::Clean, None, 0)));
        assert_eq!(cues.quality, WaveformQuality::Good);
        assert_eq!(cues.asynchrony_patterns, BTreeSet::from([AsynchronyPattern::None]));
        assert!(cues.uncertainty < 0.05);
    }

    #[test]
    fn sawtooth_template_is_detected() {
        let cues = scripted_waveform_cues(&generate_waveform(&spec(WaveformTemplate::Sawtooth, None, 0)));
        assert!(cues.asynchrony_patterns.contains(&AsynchronyPattern::Sawtooth));
        assert!(!cues.asynchrony_patterns.contains(&AsynchronyPattern::ScoopedPlateau));
    }

    #[test]
    fn scooped_template_at_zero_db_is_detected_with_high_uncertainty() {
        for seed in 0..10 {
            let cues = scripted_waveform_cues(&generate_waveform(&spec(WaveformTemplate::Scooped, Some(0.0), seed)));
            assert!(cues.asynchrony_patterns.contains(&AsynchronyPattern::ScoopedPlateau), "seed {seed}: {cues:?}");
            assert!(cues.uncertainty > 0.5, "seed {seed}: {}", cues.uncertainty);
        }
    }

    #[test]
    fn clean_template_at_zero_db_is_not_scooped() {
        for seed in 0..20 {
            let cues = scripted_waveform_cues(&generate_waveform(&spec(WaveformTemplate::Clean, Some(0.0), seed)));
            assert!(!cues.asynchrony_patterns.contains(&AsynchronyPattern::ScoopedPlateau), "seed {seed}");
        }
    }

    #[test]
    fn empty_segment_is_unusable() {
        let seg = WaveformSegment {
            segment_id: "e".into(),
            sample_rate_hz: 100.0,
            pressure: vec![],
            flow: vec![],
            image_ref: None,
        };
        let cues = scripted_waveform_cues(&seg);
        assert_eq!(cues.quality, WaveformQuality::Unusable);
        assert_eq!(cues.asynchrony_patterns, BTreeSet::from([AsynchronyPattern::None]));
        assert_eq!(cues.uncertainty, 1.0);
    }

    #[test]
    fn missing_samples_degrade_quality() {
        let mut s = spec(WaveformTemplate::Clean, None, 3);
        s.missing_ratio = 0.1;
        let cues = scripted_waveform_cues(&generate_waveform(&s));
        assert_eq!(cues.quality, WaveformQuality::Degraded);
        assert!(cues.uncertainty >= 0.05);
        s.missing_ratio = 0.5;
        assert_eq!(scripted_waveform_cues(&generate_waveform(&s)).quality, WaveformQuality::Unusable);
    }

    /// Generator label versus detector output across a noise sweep. At
    /// moderate noise every template is recovered exactly.
    #[test]
    fn generator_sweep_recovers_labels() {
        for template in [WaveformTemplate::Clean, WaveformTemplate::Sawtooth, WaveformTemplate::Scooped] {
            for snr in [40.0, 30.0, 20.0] {
                for seed in 0..5 {
                    let cues = scripted_waveform_cues(&generate_waveform(&spec(template, Some(snr), seed)));
                    let expected = match template {
                        WaveformTemplate::Clean => AsynchronyPattern::None,
                        WaveformTemplate::Sawtooth => AsynchronyPattern::Sawtooth,
                        WaveformTemplate::Scooped => AsynchronyPattern::ScoopedPlateau,
                    };
                    assert_eq!(
                        cues.asynchrony_patterns,
                        BTreeSet::from([expected]),
                        "{template:?} snr {snr} seed {seed}"
                    );
                }
            }
        }
    }

    #[test]
    fn generation_is_seeded() {
        let a = generate_waveform(&spec(WaveformTemplate::Scooped, Some(10.0), 9));
        let b = generate_waveform(&spec(WaveformTemplate::Scooped, Some(10.0), 9));
        assert_eq!(a, b);
    }
}
