//! Next-step prediction metrics in z-scored units.

use std::collections::BTreeMap;

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::contracts::{ModeRegistry, Parameter, VentilatorSettings};

/// Dataset-wide location and scale of one parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct ParamStat {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

pub type NormStats = BTreeMap<Parameter, ParamStat>;

/// One replayed step: what was set, what the engine predicted, and what the
/// clinicians actually set next.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairOutcome {
    pub encounter_id: String,
    pub index: usize,
    pub current: VentilatorSettings,
    pub predicted: VentilatorSettings,
    pub actual: VentilatorSettings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct ParamMetrics {
    pub n: usize,
    pub mse: f64,
    pub mae: f64,
    /// Absent when the actual values of this parameter do not vary.
    pub r2: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct ReplayMetrics {
    pub mse: f64,
    pub mae: f64,
    /// Mean of the defined per-parameter R² values.
    pub r2: Option<f64>,
    pub n_pairs: usize,
    pub n_terms: usize,
    /// Share of pairs whose predicted mode equals the recorded next mode.
    pub mode_accuracy: f64,
    pub per_parameter: BTreeMap<Parameter, ParamMetrics>,
}

pub(crate) fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Predicted value of `p` for a pair: the prediction if it carries the
/// parameter, else the value left in place.
pub(crate) fn predicted_value(pair: &PairOutcome, p: Parameter, registry: &ModeRegistry) -> f64 {
    pair.predicted
        .get(p)
        .unwrap_or_else(|| registry.baseline(&pair.current, p))
}

/// (actual, predicted) raw values per parameter. A parameter enters only
/// when it is applicable in both the current and the recorded next mode and
/// the dataset has statistics for it.
pub(crate) fn terms(
    pairs: &[PairOutcome],
    stats: &NormStats,
    registry: &ModeRegistry,
) -> BTreeMap<Parameter, Vec<(f64, f64)>> {
    let mut out: BTreeMap<Parameter, Vec<(f64, f64)>> = BTreeMap::new();
    for pair in pairs {
        for p in Parameter::ALL {
            if !stats.contains_key(&p)
                || !registry.is_applicable(&pair.current.mode, p)
                || !registry.is_applicable(&pair.actual.mode, p)
            {
                continue;
            }
            let Some(actual) = pair.actual.get(p) else { continue };
            out.entry(p).or_default().push((actual, predicted_value(pair, p, registry)));
        }
    }
    out
}

pub fn compute_metrics(pairs: &[PairOutcome], stats: &NormStats, registry: &ModeRegistry) -> ReplayMetrics {
    let mut per_parameter = BTreeMap::new();
    let (mut sq, mut abs, mut n_terms) = (0.0, 0.0, 0usize);
    for (p, values) in terms(pairs, stats, registry) {
        let s = stats[&p];
        let (mut p_sq, mut p_abs) = (0.0, 0.0);
        for &(a, y) in &values {
            let d = (y - a) / s.std;
            p_sq += d * d;
            p_abs += d.abs();
        }
        // R² is scale-free, so it is computed on raw values; this keeps the
        // mean predictor at exactly zero.
        let actuals: Vec<f64> = values.iter().map(|v| v.0).collect();
        let m = mean(&actuals);
        let ss_tot: f64 = actuals.iter().map(|a| (a - m) * (a - m)).sum();
        let ss_res: f64 = values.iter().map(|&(a, y)| (a - y) * (a - y)).sum();
        let r2 = (ss_tot > 0.0).then(|| 1.0 - ss_res / ss_tot);
        sq += p_sq;
        abs += p_abs;
        n_terms += values.len();
        per_parameter.insert(
            p,
            ParamMetrics {
                n: values.len(),
                mse: p_sq / values.len() as f64,
                mae: p_abs / values.len() as f64,
                r2,
            },
        );
    }
    let r2s: Vec<f64> = per_parameter.values().filter_map(|m: &ParamMetrics| m.r2).collect();
    let mode_hits = pairs.iter().filter(|p| p.predicted.mode == p.actual.mode).count();
    ReplayMetrics {
        mse: if n_terms == 0 { 0.0 } else { sq / n_terms as f64 },
        mae: if n_terms == 0 { 0.0 } else { abs / n_terms as f64 },
        r2: (!r2s.is_empty()).then(|| mean(&r2s)),
        n_pairs: pairs.len(),
        n_terms,
        mode_accuracy: if pairs.is_empty() { 0.0 } else { mode_hits as f64 / pairs.len() as f64 },
        per_parameter,
    }
}

/// Predictions equal to the mean of the recorded next values, per
/// parameter, over the terms that enter the metric.
pub fn mean_predictions(pairs: &[PairOutcome], stats: &NormStats, registry: &ModeRegistry) -> Vec<PairOutcome> {
    let means: BTreeMap<Parameter, f64> = terms(pairs, stats, registry)
        .into_iter()
        .map(|(p, v)| (p, mean(&v.iter().map(|x| x.0).collect::<Vec<_>>())))
        .collect();
    pairs
        .iter()
        .map(|pair| {
            let mut predicted = pair.actual.clone();
            for (&p, &m) in &means {
                if predicted.get(p).is_some() {
                    predicted.set(p, Some(m));
                }
            }
            PairOutcome {
                predicted,
                ..pair.clone()
            }
        })
        .collect()
}
