//! Trajectory replay: dataset ingestion, next-step prediction metrics,
//! simulated clinicians and regret studies.

pub mod clinician;
pub mod metrics;
pub mod study;
pub mod synth;

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::{Arc, Mutex};

use rayon::prelude::*;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::agents::{AgentBackend, AgentRuntime, FaultInjecting, RetryPolicy, ScriptedBackend};
use crate::contracts::{check_value, CycleStatus, ModeId, ModeRegistry, Parameter, PatientState, ValidationContext, VentilatorSettings};
use crate::memory::LongTermLog;
use crate::workflow::{CycleInput, Engine, EngineConfig};

use clinician::AutoAccept;
pub use metrics::{compute_metrics, NormStats, PairOutcome, ParamStat, ReplayMetrics};
pub use synth::resolve_waveform;

/// Clinician id under which replayed cycles are recorded.
pub const REPLAY_CLINICIAN: &str = "replay";

/// One time-stamped observation with the settings in force.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryRecord {
    pub encounter_id: String,
    pub state: PatientState,
    pub settings: VentilatorSettings,
}

/// Flat CSV layout of a record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CsvRow {
    encounter_id: String,
    timestamp: f64,
    spo2: Option<f64>,
    heart_rate: Option<f64>,
    map: Option<f64>,
    ph: Option<f64>,
    paco2: Option<f64>,
    pao2: Option<f64>,
    tidal_volume_obs: Option<f64>,
    resp_rate_obs: Option<f64>,
    weight_kg: f64,
    #[serde(default)]
    waveform_ref: Option<String>,
    mode: String,
    peep: Option<f64>,
    fio2: Option<f64>,
    pressure_support: Option<f64>,
    inspiratory_pressure: Option<f64>,
    resp_rate_set: Option<f64>,
}

impl From<CsvRow> for TrajectoryRecord {
    fn from(r: CsvRow) -> Self {
        TrajectoryRecord {
            encounter_id: r.encounter_id,
            state: PatientState {
                timestamp: r.timestamp,
                spo2: r.spo2,
                heart_rate: r.heart_rate,
                map: r.map,
                ph: r.ph,
                paco2: r.paco2,
                pao2: r.pao2,
                tidal_volume_obs: r.tidal_volume_obs,
                resp_rate_obs: r.resp_rate_obs,
                weight_kg: r.weight_kg,
                waveform_ref: r.waveform_ref.filter(|s| !s.is_empty()),
            },
            settings: VentilatorSettings {
                mode: ModeId(r.mode),
                peep: r.peep,
                fio2: r.fio2,
                pressure_support: r.pressure_support,
                inspiratory_pressure: r.inspiratory_pressure,
                resp_rate_set: r.resp_rate_set,
            },
        }
    }
}

impl From<&TrajectoryRecord> for CsvRow {
    fn from(r: &TrajectoryRecord) -> Self {
        let s = &r.state;
        CsvRow {
            encounter_id: r.encounter_id.clone(),
            timestamp: s.timestamp,
            spo2: s.spo2,
            heart_rate: s.heart_rate,
            map: s.map,
            ph: s.ph,
            paco2: s.paco2,
            pao2: s.pao2,
            tidal_volume_obs: s.tidal_volume_obs,
            resp_rate_obs: s.resp_rate_obs,
            weight_kg: s.weight_kg,
            waveform_ref: s.waveform_ref.clone(),
            mode: r.settings.mode.0.clone(),
            peep: r.settings.peep,
            fio2: r.settings.fio2,
            pressure_support: r.settings.pressure_support,
            inspiratory_pressure: r.settings.inspiratory_pressure,
            resp_rate_set: r.settings.resp_rate_set,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct SkippedRow {
    /// 1-based line number in the source file.
    pub line: u64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Encounter {
    pub encounter_id: String,
    /// Ordered by timestamp.
    pub records: Vec<TrajectoryRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryDataset {
    pub encounters: Vec<Encounter>,
    pub stats: NormStats,
    pub skipped: Vec<SkippedRow>,
    /// Encounters with fewer than two valid records.
    pub dropped_encounters: Vec<String>,
}

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("no valid encounters ({skipped} rows skipped)")]
    NoEncounters { skipped: usize },
    #[error("zero variance for {0}")]
    ZeroVariance(Parameter),
}

impl TrajectoryDataset {
    /// Validate, group and normalize already-parsed records. Invalid records
    /// are skipped and reported with their position (1-based) in `records`.
    pub fn from_records(records: Vec<TrajectoryRecord>, registry: &ModeRegistry) -> Result<Self, DatasetError> {
        let numbered = records.into_iter().enumerate().map(|(i, r)| (i as u64 + 1, Ok(r))).collect();
        Self::build(numbered, registry)
    }

    fn build(rows: NumberedRows, registry: &ModeRegistry) -> Result<Self, DatasetError> {
        let (records, skipped) = validate_rows(rows, registry);
        let mut grouped: BTreeMap<String, Vec<TrajectoryRecord>> = BTreeMap::new();
        for r in records {
            grouped.entry(r.encounter_id.clone()).or_default().push(r);
        }
        let mut encounters = Vec::new();
        let mut dropped_encounters = Vec::new();
        for (encounter_id, mut records) in grouped {
            if records.len() < 2 {
                dropped_encounters.push(encounter_id);
                continue;
            }
            records.sort_by(|a, b| a.state.timestamp.total_cmp(&b.state.timestamp));
            encounters.push(Encounter { encounter_id, records });
        }
        if encounters.is_empty() {
            return Err(DatasetError::NoEncounters { skipped: skipped.len() });
        }
        let stats = normalization_stats(&encounters)?;
        Ok(TrajectoryDataset {
            encounters,
            stats,
            skipped,
            dropped_encounters,
        })
    }

    pub fn n_records(&self) -> usize {
        self.encounters.iter().map(|e| e.records.len()).sum()
    }

    pub fn n_pairs(&self) -> usize {
        self.encounters.iter().map(|e| e.records.len() - 1).sum()
    }
}

type NumberedRows = Vec<(u64, Result<TrajectoryRecord, String>)>;

fn validate_rows(rows: NumberedRows, registry: &ModeRegistry) -> (Vec<TrajectoryRecord>, Vec<SkippedRow>) {
    let ctx = ValidationContext::with_registry(registry);
    let mut ok = Vec::new();
    let mut skipped = Vec::new();
    for (line, row) in rows {
        let checked = row.and_then(|r| {
            check_value(&r.state, ctx).map_err(|e| format!("state: {e}"))?;
            check_value(&r.settings, ctx).map_err(|e| format!("settings: {e}"))?;
            if r.encounter_id.is_empty() {
                return Err("empty encounter_id".into());
            }
            Ok(r)
        });
        match checked {
            Ok(r) => ok.push(r),
            Err(error) => skipped.push(SkippedRow { line, error }),
        }
    }
    (ok, skipped)
}

/// Parse and validate a trajectory file without grouping or normalizing it.
pub fn read_records(path: impl AsRef<Path>, registry: &ModeRegistry) -> Result<(Vec<TrajectoryRecord>, Vec<SkippedRow>), DatasetError> {
    Ok(validate_rows(parse_file(path.as_ref())?, registry))
}

fn parse_file(path: &Path) -> Result<NumberedRows, DatasetError> {
    let is_csv = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    if is_csv {
        parse_csv(File::open(path)?)
    } else {
        parse_jsonl(BufReader::new(File::open(path)?))
    }
}

/// Population mean and standard deviation of every parameter that appears
/// in the dataset.
pub fn normalization_stats(encounters: &[Encounter]) -> Result<NormStats, DatasetError> {
    let mut values: BTreeMap<Parameter, Vec<f64>> = BTreeMap::new();
    for r in encounters.iter().flat_map(|e| &e.records) {
        for (p, v) in r.settings.present() {
            values.entry(p).or_default().push(v);
        }
    }
    let mut stats = NormStats::new();
    for (p, xs) in values {
        let n = xs.len();
        let mean = metrics::mean(&xs);
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
        if var <= 0.0 {
            return Err(DatasetError::ZeroVariance(p));
        }
        stats.insert(p, ParamStat { mean, std: var.sqrt(), n });
    }
    Ok(stats)
}

/// Load a `.csv` file, or JSON lines otherwise.
pub fn load_trajectories(path: impl AsRef<Path>, registry: &ModeRegistry) -> Result<TrajectoryDataset, DatasetError> {
    TrajectoryDataset::build(parse_file(path.as_ref())?, registry)
}

fn parse_jsonl(reader: impl BufRead) -> Result<NumberedRows, DatasetError> {
    let mut rows = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed = serde_json::from_str::<TrajectoryRecord>(&line).map_err(|e| e.to_string());
        rows.push((i as u64 + 1, parsed));
    }
    Ok(rows)
}

fn parse_csv(reader: impl std::io::Read) -> Result<NumberedRows, DatasetError> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let mut rows = Vec::new();
    for result in rdr.records() {
        let rec = result?;
        let line = rec.position().map_or(0, |p| p.line());
        let parsed = rec
            .deserialize::<CsvRow>(Some(&headers))
            .map(TrajectoryRecord::from)
            .map_err(|e| e.to_string());
        rows.push((line, parsed));
    }
    Ok(rows)
}

pub fn write_jsonl(records: &[TrajectoryRecord], mut out: impl Write) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn write_csv(records: &[TrajectoryRecord], out: impl Write) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(CsvRow::from(r))?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayOptions {
    pub config: EngineConfig,
    pub no_img: bool,
    pub no_pref: bool,
    /// Per-call probability of a corrupted agent output.
    pub fault_rate: f64,
    pub retries: u32,
    pub seed: u64,
    pub parallel: bool,
}

impl Default for ReplayOptions {
    fn default() -> Self {
        ReplayOptions {
            config: EngineConfig::default(),
            no_img: false,
            no_pref: false,
            fault_rate: 0.0,
            retries: RetryPolicy::default().max_retries,
            seed: 0,
            parallel: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayFailure {
    pub encounter_id: String,
    pub index: usize,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayReport {
    pub metrics: ReplayMetrics,
    pub pairs_attempted: usize,
    pub completion_failures: usize,
    pub completion_failure_rate: f64,
    pub status_counts: BTreeMap<CycleStatus, usize>,
    pub failures: Vec<ReplayFailure>,
    pub skipped_rows: usize,
}

#[derive(Debug, thiserror::Error)]
pub enum ReplayError {
    #[error("replay setup: {0}")]
    Setup(String),
}

struct EncounterOutcome {
    pairs: Vec<PairOutcome>,
    statuses: Vec<CycleStatus>,
    failures: Vec<ReplayFailure>,
}

fn encounter_seed(seed: u64, index: usize) -> u64 {
    seed ^ (index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

fn replay_encounter(
    idx: usize,
    enc: &Encounter,
    registry: &Arc<ModeRegistry>,
    opts: &ReplayOptions,
) -> Result<EncounterOutcome, ReplayError> {
    let scripted: Arc<dyn AgentBackend> = Arc::new(ScriptedBackend::new(registry.clone()));
    let backend: Arc<dyn AgentBackend> = if opts.fault_rate > 0.0 {
        Arc::new(
            FaultInjecting::new(scripted, opts.fault_rate, encounter_seed(opts.seed, idx))
                .map_err(|e| ReplayError::Setup(e.to_string()))?,
        )
    } else {
        scripted
    };
    let policy = RetryPolicy::new(opts.retries, 0).map_err(|e| ReplayError::Setup(e.to_string()))?;
    let runtime = Arc::new(AgentRuntime::new(backend, registry.clone(), policy));
    let mut config = opts.config.clone();
    config.enable_waveform &= !opts.no_img;
    config.enable_preference &= !opts.no_pref;
    config.seed = encounter_seed(opts.seed, idx);
    let engine = Engine::new(runtime, Arc::new(Mutex::new(LongTermLog::in_memory())), config)
        .map_err(|e| ReplayError::Setup(e.to_string()))?;

    let mut out = EncounterOutcome {
        pairs: Vec::new(),
        statuses: Vec::new(),
        failures: Vec::new(),
    };
    for (i, w) in enc.records.windows(2).enumerate() {
        let (cur, next) = (&w[0], &w[1]);
        let waveform = if opts.no_img {
            None
        } else {
            cur.state.waveform_ref.as_deref().and_then(resolve_waveform)
        };
        let input = CycleInput {
            encounter_id: enc.encounter_id.clone(),
            clinician_id: REPLAY_CLINICIAN.into(),
            state: cur.state.clone(),
            settings: cur.settings.clone(),
            waveform,
        };
        let predicted = match engine.run_cycle(input, &mut AutoAccept) {
            Ok(closed) => {
                out.statuses.push(closed.record.status);
                match closed.record.status {
                    CycleStatus::Accepted => closed.record.accepted_settings.clone(),
                    CycleStatus::Hold | CycleStatus::Exhausted => Some(cur.settings.clone()),
                    CycleStatus::Failed => {
                        out.failures.push(ReplayFailure {
                            encounter_id: enc.encounter_id.clone(),
                            index: i,
                            error: closed.record.failure.clone().unwrap_or_default(),
                        });
                        None
                    }
                }
            }
            Err(e) => {
                out.statuses.push(CycleStatus::Failed);
                out.failures.push(ReplayFailure {
                    encounter_id: enc.encounter_id.clone(),
                    index: i,
                    error: e.to_string(),
                });
                None
            }
        };
        if let Some(predicted) = predicted {
            out.pairs.push(PairOutcome {
                encounter_id: enc.encounter_id.clone(),
                index: i,
                current: cur.settings.clone(),
                predicted,
                actual: next.settings.clone(),
            });
        }
    }
    Ok(out)
}

/// Run the engine on every consecutive record pair with an auto-accepting
/// reviewer and score the accepted settings against the recorded next ones.
pub fn replay_next_step(
    dataset: &TrajectoryDataset,
    registry: Arc<ModeRegistry>,
    opts: &ReplayOptions,
) -> Result<ReplayReport, ReplayError> {
    let run = |(i, e): (usize, &Encounter)| replay_encounter(i, e, &registry, opts);
    let outcomes: Vec<EncounterOutcome> = if opts.parallel {
        dataset.encounters.par_iter().enumerate().map(run).collect::<Result<_, _>>()?
    } else {
        dataset.encounters.iter().enumerate().map(run).collect::<Result<_, _>>()?
    };
    let mut pairs = Vec::new();
    let mut failures = Vec::new();
    let mut status_counts = BTreeMap::new();
    for o in outcomes {
        pairs.extend(o.pairs);
        failures.extend(o.failures);
        for s in o.statuses {
            *status_counts.entry(s).or_insert(0) += 1;
        }
    }
    let attempted = dataset.n_pairs();
    Ok(ReplayReport {
        metrics: compute_metrics(&pairs, &dataset.stats, &registry),
        pairs_attempted: attempted,
        completion_failures: failures.len(),
        completion_failure_rate: if attempted == 0 { 0.0 } else { failures.len() as f64 / attempted as f64 },
        status_counts,
        failures,
        skipped_rows: dataset.skipped.len(),
    })
}

#[cfg(test)]
mod tests;
