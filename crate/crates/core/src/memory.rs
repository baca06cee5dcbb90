//! Layered memory: an append-only long-term log of cycle records, notes and
//! preference snapshots, plus the short-term context window derived from it.
//!
//! The log is newline-delimited JSON, one envelope per line. A batch of
//! envelopes is written with a single write and synced before the call
//! returns; if the write fails the file is truncated back to its previous
//! length so no partial batch is ever visible.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::bandit::{apply_signal, BanditParams, PreferenceState};
use crate::contracts::{validate, CycleRecord, CycleStatus, ValidationContext, VentilatorSettings};

pub const DEFAULT_CONTEXT_NOTES: usize = 3;

#[derive(Debug, thiserror::Error)]
pub enum MemoryError {
    #[error("storage error: {0}")]
    Io(#[from] std::io::Error),
    #[error("integrity check failed at offset {offset}: content hash mismatch")]
    Integrity { offset: u64 },
    #[error("corrupt log line {line}: {message}")]
    Corrupt { line: usize, message: String },
    #[error("invalid {kind} payload: {message}")]
    InvalidPayload { kind: RecordKind, message: String },
    #[error("cannot decode {kind} at offset {offset}: {message}")]
    Decode { kind: RecordKind, offset: u64, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum RecordKind {
    CycleRecord,
    PreferenceSnapshot,
    Note,
}

impl std::fmt::Display for RecordKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RecordKind::CycleRecord => "cycle_record",
            RecordKind::PreferenceSnapshot => "preference_snapshot",
            RecordKind::Note => "note",
        })
    }
}

/// One line of the long-term log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct Envelope {
    pub offset: u64,
    /// Logical time taken from the patient state of the cycle.
    pub timestamp: f64,
    pub kind: RecordKind,
    pub payload: Value,
    pub content_hash: String,
}

impl Envelope {
    pub fn verify(&self) -> Result<(), MemoryError> {
        if content_hash(&self.payload) == self.content_hash {
            Ok(())
        } else {
            Err(MemoryError::Integrity { offset: self.offset })
        }
    }

    fn decode<T: serde::de::DeserializeOwned>(&self) -> Result<T, MemoryError> {
        serde_json::from_value(self.payload.clone()).map_err(|e| MemoryError::Decode {
            kind: self.kind,
            offset: self.offset,
            message: e.to_string(),
        })
    }
}

/// Payload of a `note` envelope.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct NoteEntry {
    pub cycle_id: String,
    pub encounter_id: String,
    pub clinician_id: String,
    pub note: String,
}

/// Payload of a `preference_snapshot` envelope: the clinician's state right
/// after the update made at the close of `cycle_id`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct PreferenceSnapshot {
    pub clinician_id: String,
    pub encounter_id: String,
    pub cycle_id: String,
    pub state: PreferenceState,
}

/// An envelope before it has an offset.
#[derive(Debug, Clone, PartialEq)]
pub struct PendingEntry {
    pub kind: RecordKind,
    pub timestamp: f64,
    pub payload: Value,
}

impl PendingEntry {
    pub fn cycle_record(record: &CycleRecord) -> Self {
        PendingEntry {
            kind: RecordKind::CycleRecord,
            timestamp: record.context.current_state.timestamp,
            payload: serde_json::to_value(record).expect("cycle record serializes"),
        }
    }

    pub fn note(entry: &NoteEntry, timestamp: f64) -> Self {
        PendingEntry {
            kind: RecordKind::Note,
            timestamp,
            payload: serde_json::to_value(entry).expect("note serializes"),
        }
    }

    pub fn snapshot(snapshot: &PreferenceSnapshot, timestamp: f64) -> Self {
        PendingEntry {
            kind: RecordKind::PreferenceSnapshot,
            timestamp,
            payload: serde_json::to_value(snapshot).expect("snapshot serializes"),
        }
    }

    fn validate(&self) -> Result<(), MemoryError> {
        let invalid = |message: String| MemoryError::InvalidPayload {
            kind: self.kind,
            message,
        };
        if !self.timestamp.is_finite() {
            return Err(invalid("timestamp must be finite".into()));
        }
        match self.kind {
            RecordKind::CycleRecord => validate::<CycleRecord>(&self.payload, ValidationContext::default())
                .map(|_| ())
                .map_err(|e| invalid(e.to_string())),
            RecordKind::Note => serde_json::from_value::<NoteEntry>(self.payload.clone())
                .map(|_| ())
                .map_err(|e| invalid(e.to_string())),
            RecordKind::PreferenceSnapshot => {
                let s: PreferenceSnapshot =
                    serde_json::from_value(self.payload.clone()).map_err(|e| invalid(e.to_string()))?;
                if s.state.arms.len() != crate::contracts::PreferenceCategory::COUNT {
                    return Err(invalid("snapshot must hold all twelve arms".into()));
                }
                Ok(())
            }
        }
    }
}

/// Hex SHA-256 of the canonical encoding: compact JSON with object keys in
/// sorted order.
pub fn content_hash(payload: &Value) -> String {
    let bytes = serde_json::to_vec(payload).expect("json value serializes");
    hex::encode(Sha256::digest(bytes))
}

/// Byte sink behind the log. The file sink is the production one; the
/// in-memory sink backs simulations and tests.
pub trait LogSink: Send {
    fn len(&mut self) -> std::io::Result<u64>;
    fn write_all_synced(&mut self, bytes: &[u8]) -> std::io::Result<()>;
    fn truncate(&mut self, len: u64) -> std::io::Result<()>;
}

#[derive(Debug, Default)]
pub struct MemorySink {
    pub bytes: Vec<u8>,
}

impl LogSink for MemorySink {
    fn len(&mut self) -> std::io::Result<u64> {
        Ok(self.bytes.len() as u64)
    }

    fn write_all_synced(&mut self, bytes: &[u8]) -> std::io::Result<()> {
        self.bytes.extend_from_slice(bytes);
        Ok(())
    }

    fn truncate(&mut self, len: u64) -> std::io::Result<()> {
        self.bytes.truncate(len as usize);
        Ok(())
    }
}

#[derive(Debug)]
pub struct FileSink {
    file: File,
}

impl LogSink for FileSink {
    fn len(&mut self) -> std::io::Result<u64> {
        Ok(self.file.metadata()?.len())
    }

    fn write_all_synced(&mut self, bytes: &[u8]) -> std::io::Result<()> {
        self.file.seek(SeekFrom::End(0))?;
        self.file.write_all(bytes)?;
        self.file.sync_data()
    }

    fn truncate(&mut self, len: u64) -> std::io::Result<()> {
        self.file.set_len(len)?;
        self.file.sync_data()
    }
}

/// Recent notes and last accepted settings for one encounter.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct ShortTermContext {
    /// Most recent first.
    pub notes: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub last_accepted_settings: Option<VentilatorSettings>,
}

/// Everything the log holds about one encounter, in log order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct AuditTrail {
    pub encounter_id: String,
    pub entries: Vec<Envelope>,
}

/// Append-only long-term log with an in-memory index.
pub struct LongTermLog {
    sink: Box<dyn LogSink>,
    path: Option<PathBuf>,
    entries: Vec<Envelope>,
    by_encounter: BTreeMap<String, Vec<usize>>,
    snapshots: BTreeMap<String, Vec<usize>>,
    cycles: BTreeMap<String, usize>,
    recovered_bytes: u64,
}

impl std::fmt::Debug for LongTermLog {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LongTermLog")
            .field("path", &self.path)
            .field("entries", &self.entries.len())
            .finish()
    }
}

impl LongTermLog {
    pub fn in_memory() -> Self {
        Self::with_sink(Box::<MemorySink>::default())
    }

    pub fn with_sink(sink: Box<dyn LogSink>) -> Self {
        LongTermLog {
            sink,
            path: None,
            entries: Vec::new(),
            by_encounter: BTreeMap::new(),
            snapshots: BTreeMap::new(),
            cycles: BTreeMap::new(),
            recovered_bytes: 0,
        }
    }

    /// Open or create a log file. A torn final line (no terminating newline)
    /// is cut off; any other unreadable line is an error.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, MemoryError> {
        let path = path.as_ref();
        let mut file = OpenOptions::new().read(true).append(true).create(true).open(path)?;
        let mut raw = Vec::new();
        file.read_to_end(&mut raw)?;

        let valid_len = raw.iter().rposition(|b| *b == b'\n').map_or(0, |i| i + 1);
        let mut log = Self::with_sink(Box::new(FileSink { file }));
        log.path = Some(path.to_path_buf());
        for (i, line) in raw[..valid_len].split(|b| *b == b'\n').enumerate() {
            if line.is_empty() {
                continue;
            }
            let env: Envelope = serde_json::from_slice(line).map_err(|e| MemoryError::Corrupt {
                line: i + 1,
                message: e.to_string(),
            })?;
            if env.offset != log.entries.len() as u64 {
                return Err(MemoryError::Corrupt {
                    line: i + 1,
                    message: format!("expected offset {}, found {}", log.entries.len(), env.offset),
                });
            }
            log.index(env);
        }
        if valid_len < raw.len() {
            log.recovered_bytes = (raw.len() - valid_len) as u64;
            tracing::warn!(path = %path.display(), bytes = log.recovered_bytes, "dropping torn tail of log");
            log.sink.truncate(valid_len as u64)?;
        }
        Ok(log)
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    /// Bytes discarded from a torn tail when the log was opened.
    pub fn recovered_bytes(&self) -> u64 {
        self.recovered_bytes
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[Envelope] {
        &self.entries
    }

    pub fn get(&self, offset: u64) -> Option<&Envelope> {
        self.entries.get(offset as usize)
    }

    fn index(&mut self, env: Envelope) {
        let i = self.entries.len();
        let str_field = |k: &str| env.payload.get(k).and_then(Value::as_str).map(str::to_string);
        if let Some(enc) = str_field("encounter_id") {
            self.by_encounter.entry(enc).or_default().push(i);
        }
        match env.kind {
            RecordKind::PreferenceSnapshot => {
                if let Some(d) = str_field("clinician_id") {
                    self.snapshots.entry(d).or_default().push(i);
                }
            }
            RecordKind::CycleRecord => {
                if let Some(c) = str_field("cycle_id") {
                    self.cycles.insert(c, i);
                }
            }
            RecordKind::Note => {}
        }
        self.entries.push(env);
    }

    pub fn append(&mut self, entry: PendingEntry) -> Result<u64, MemoryError> {
        Ok(self.append_batch(vec![entry])?[0])
    }

    /// Append several envelopes as one unit: either all become visible or
    /// none do.
    pub fn append_batch(&mut self, batch: Vec<PendingEntry>) -> Result<Vec<u64>, MemoryError> {
        for e in &batch {
            e.validate()?;
        }
        let start = self.entries.len() as u64;
        let envelopes: Vec<Envelope> = batch
            .into_iter()
            .enumerate()
            .map(|(i, e)| Envelope {
                offset: start + i as u64,
                timestamp: e.timestamp,
                kind: e.kind,
                content_hash: content_hash(&e.payload),
                payload: e.payload,
            })
            .collect();
        let mut bytes = Vec::new();
        for env in &envelopes {
            serde_json::to_writer(&mut bytes, env).expect("envelope serializes");
            bytes.push(b'\n');
        }
        let before = self.sink.len()?;
        if let Err(e) = self.sink.write_all_synced(&bytes) {
            self.sink.truncate(before)?;
            return Err(e.into());
        }
        let offsets = envelopes.iter().map(|e| e.offset).collect();
        for env in envelopes {
            self.index(env);
        }
        Ok(offsets)
    }

    /// Check every stored hash.
    pub fn verify(&self) -> Result<(), MemoryError> {
        self.entries.iter().try_for_each(Envelope::verify)
    }

    /// The `n` most recent notes for `encounter`, most recent first, plus
    /// the encounter's last accepted settings.
    pub fn context_window(&self, encounter: &str, n: usize) -> ShortTermContext {
        let Some(idx) = self.by_encounter.get(encounter) else {
            return ShortTermContext::default();
        };
        let notes = idx
            .iter()
            .rev()
            .map(|&i| &self.entries[i])
            .filter(|e| e.kind == RecordKind::Note)
            .filter_map(|e| e.payload.get("note").and_then(Value::as_str).map(str::to_string))
            .take(n)
            .collect();
        let last_accepted_settings = idx
            .iter()
            .rev()
            .map(|&i| &self.entries[i])
            .filter(|e| e.kind == RecordKind::CycleRecord)
            .find_map(|e| e.decode::<CycleRecord>().ok().and_then(|r| r.accepted_settings));
        ShortTermContext {
            notes,
            last_accepted_settings,
        }
    }

    /// Offsets of the cycle records already logged for `encounter`.
    pub fn cycle_offsets(&self, encounter: &str) -> Vec<u64> {
        self.by_encounter
            .get(encounter)
            .into_iter()
            .flatten()
            .filter(|&&i| self.entries[i].kind == RecordKind::CycleRecord)
            .map(|&i| i as u64)
            .collect()
    }

    pub fn cycle_record(&self, cycle_id: &str) -> Result<Option<CycleRecord>, MemoryError> {
        let Some(&i) = self.cycles.get(cycle_id) else {
            return Ok(None);
        };
        let env = &self.entries[i];
        env.verify()?;
        env.decode().map(Some)
    }

    /// Every cycle record in log order, hash-checked.
    pub fn cycle_records(&self) -> Result<Vec<CycleRecord>, MemoryError> {
        self.entries
            .iter()
            .filter(|e| e.kind == RecordKind::CycleRecord)
            .map(|e| {
                e.verify()?;
                e.decode()
            })
            .collect()
    }

    /// Latest snapshot for `clinician`, or a fresh state when there is none.
    pub fn load_preference_state(&self, clinician: &str, params: BanditParams) -> Result<PreferenceState, MemoryError> {
        match self.snapshots.get(clinician).and_then(|v| v.last()) {
            None => Ok(PreferenceState::fresh(clinician, params)),
            Some(&i) => {
                let env = &self.entries[i];
                env.verify()?;
                Ok(env.decode::<PreferenceSnapshot>()?.state)
            }
        }
    }

    /// Rebuild `clinician`'s state from the cycle records alone.
    pub fn replay_preference_state(
        &self,
        clinician: &str,
        params: BanditParams,
        apply_hold_updates: bool,
    ) -> Result<PreferenceState, MemoryError> {
        let mut state = PreferenceState::fresh(clinician, params);
        for r in self.cycle_records()? {
            if r.clinician_id != clinician {
                continue;
            }
            let applies = match r.status {
                CycleStatus::Accepted => true,
                CycleStatus::Hold => apply_hold_updates && !r.preference_signal.is_empty(),
                _ => false,
            };
            if applies {
                state = apply_signal(&state, &r.context.feature_vector, &r.preference_signal).map_err(|e| {
                    MemoryError::Decode {
                        kind: RecordKind::CycleRecord,
                        offset: self.cycles[&r.cycle_id] as u64,
                        message: e.to_string(),
                    }
                })?;
            }
        }
        Ok(state)
    }

    /// Hash-checked evidence trail for one encounter.
    pub fn audit_trail(&self, encounter: &str) -> Result<AuditTrail, MemoryError> {
        let entries = self
            .by_encounter
            .get(encounter)
            .into_iter()
            .flatten()
            .map(|&i| {
                let e = &self.entries[i];
                e.verify()?;
                Ok(e.clone())
            })
            .collect::<Result<Vec<_>, MemoryError>>()?;
        Ok(AuditTrail {
            encounter_id: encounter.to_string(),
            entries,
        })
    }

    /// Clinicians with at least one snapshot.
    pub fn clinicians(&self) -> Vec<String> {
        self.snapshots.keys().cloned().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contracts::{CycleContext, PatientState, PreferenceSignal, FEATURE_DIM};

    fn hold_record(cycle: &str, encounter: &str) -> CycleRecord {
        CycleRecord {
            cycle_id: cycle.into(),
            encounter_id: encounter.into(),
            clinician_id: "d1".into(),
            context: CycleContext {
                current_state: PatientState::nominal(10.0),
                current_settings: VentilatorSettings::new("PRVC"),
                short_term: vec![],
                long_term_refs: vec![],
                feature_vector: vec![0.0; FEATURE_DIM],
            },
            trace: vec![],
            rounds: 0,
            accepted_settings: None,
            note: "hold".into(),
            preference_signal: PreferenceSignal::default(),
            status: CycleStatus::Hold,
            evidence: Default::default(),
            failure: None,
        }
    }

    fn note(encounter: &str, i: usize) -> PendingEntry {
        PendingEntry::note(
            &NoteEntry {
                cycle_id: format!("{encounter}-c{i}"),
                encounter_id: encounter.into(),
                clinician_id: "d1".into(),
                note: format!("note {i}"),
            },
            i as f64,
        )
    }

    fn snapshot(updates: u64) -> PendingEntry {
        let mut state = PreferenceState::fresh("d1", BanditParams::default());
        state.update_count = updates;
        PendingEntry::snapshot(
            &PreferenceSnapshot {
                clinician_id: "d1".into(),
                encounter_id: "e1".into(),
                cycle_id: "e1-c0".into(),
                state,
            },
            0.0,
        )
    }

    #[test]
    fn offsets_start_at_zero_and_increase() {
        let mut log = LongTermLog::in_memory();
        assert_eq!(log.append(PendingEntry::cycle_record(&hold_record("c0", "e1"))).unwrap(), 0);
        assert_eq!(log.append(note("e1", 1)).unwrap(), 1);
    }

    #[test]
    fn stored_hash_matches_recomputation() {
        let mut log = LongTermLog::in_memory();
        log.append(note("e1", 1)).unwrap();
        let env = log.get(0).unwrap();
        let recomputed = hex::encode(Sha256::digest(serde_json::to_string(&env.payload).unwrap().as_bytes()));
        assert_eq!(env.content_hash, recomputed);
    }

    #[test]
    fn invalid_payload_is_refused() {
        let mut log = LongTermLog::in_memory();
        let mut bad = PendingEntry::cycle_record(&hold_record("c0", "e1"));
        bad.payload["rounds"] = 4.into();
        assert!(matches!(log.append(bad), Err(MemoryError::InvalidPayload { .. })));
        assert!(log.is_empty());
    }

    #[test]
    fn context_window_cases() {
        let mut log = LongTermLog::in_memory();
        assert_eq!(log.context_window("e1", 3), ShortTermContext::default());
        for i in 1..=5 {
            log.append(note("e1", i)).unwrap();
            log.append(note("e2", i)).unwrap();
        }
        let ctx = log.context_window("e1", 3);
        assert_eq!(ctx.notes, vec!["note 5", "note 4", "note 3"]);
        assert_eq!(log.context_window("e2", 10).notes.len(), 5);
        assert!(log.context_window("e3", 3).notes.is_empty());
    }

    #[test]
    fn unknown_clinician_gets_fresh_state() {
        let log = LongTermLog::in_memory();
        let s = log.load_preference_state("nobody", BanditParams::default()).unwrap();
        assert_eq!(s.update_count, 0);
        assert_eq!(s, PreferenceState::fresh("nobody", BanditParams::default()));
    }

    #[test]
    fn latest_snapshot_wins() {
        let mut log = LongTermLog::in_memory();
        for i in 0..10 {
            if i == 3 {
                log.append(snapshot(3)).unwrap();
            } else if i == 9 {
                log.append(snapshot(9)).unwrap();
            } else {
                log.append(note("e1", i)).unwrap();
            }
        }
        let s = log.load_preference_state("d1", BanditParams::default()).unwrap();
        assert_eq!(s.update_count, 9);
    }

    #[test]
    fn tampered_snapshot_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.ndjson");
        {
            let mut log = LongTermLog::open(&path).unwrap();
            log.append(note("e1", 0)).unwrap();
            log.append(snapshot(7)).unwrap();
        }
        let text = std::fs::read_to_string(&path).unwrap();
        let tampered = text.replacen("\"update_count\":7", "\"update_count\":8", 1);
        assert_ne!(text, tampered);
        std::fs::write(&path, tampered).unwrap();
        let log = LongTermLog::open(&path).unwrap();
        match log.load_preference_state("d1", BanditParams::default()) {
            Err(MemoryError::Integrity { offset }) => assert_eq!(offset, 1),
            other => panic!("expected integrity error, got {other:?}"),
        }
    }

    #[test]
    fn torn_tail_is_dropped_and_log_continues() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.ndjson");
        {
            let mut log = LongTermLog::open(&path).unwrap();
            log.append(note("e1", 0)).unwrap();
            log.append(note("e1", 1)).unwrap();
        }
        let full = std::fs::read(&path).unwrap();
        let first_line = full.iter().position(|b| *b == b'\n').unwrap() + 1;
        std::fs::write(&path, &full[..first_line + 20]).unwrap();

        let mut log = LongTermLog::open(&path).unwrap();
        assert_eq!(log.len(), 1);
        assert_eq!(log.recovered_bytes(), 20);
        assert_eq!(log.append(note("e1", 2)).unwrap(), 1);
        drop(log);
        let log = LongTermLog::open(&path).unwrap();
        assert_eq!(log.len(), 2);
        log.verify().unwrap();
    }

    #[test]
    fn corrupt_middle_line_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.ndjson");
        std::fs::write(&path, "{not json}\n").unwrap();
        assert!(matches!(LongTermLog::open(&path), Err(MemoryError::Corrupt { line: 1, .. })));
    }

    struct FailingSink {
        inner: MemorySink,
    }

    impl LogSink for FailingSink {
        fn len(&mut self) -> std::io::Result<u64> {
            self.inner.len()
        }
        fn write_all_synced(&mut self, bytes: &[u8]) -> std::io::Result<()> {
            // Half the batch lands before the device gives up.
            self.inner.bytes.extend_from_slice(&bytes[..bytes.len() / 2]);
            Err(std::io::Error::new(std::io::ErrorKind::Other, "disk full"))
        }
        fn truncate(&mut self, len: u64) -> std::io::Result<()> {
            self.inner.truncate(len)
        }
    }

    #[test]
    fn failed_batch_leaves_nothing_visible() {
        let mut log = LongTermLog::with_sink(Box::new(FailingSink { inner: MemorySink::default() }));
        let err = log.append_batch(vec![note("e1", 0), note("e1", 1)]).unwrap_err();
        assert!(matches!(err, MemoryError::Io(_)));
        assert!(log.is_empty());
        assert_eq!(log.sink.len().unwrap(), 0);
    }

    #[test]
    fn appends_never_rewrite_existing_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.ndjson");
        let mut log = LongTermLog::open(&path).unwrap();
        log.append(note("e1", 0)).unwrap();
        let before = std::fs::read(&path).unwrap();
        log.append_batch(vec![note("e1", 1), snapshot(1)]).unwrap();
        let after = std::fs::read(&path).unwrap();
        assert!(after.starts_with(&before));
        assert!(after.len() > before.len());
    }

    #[test]
    fn audit_trail_filters_by_encounter() {
        let mut log = LongTermLog::in_memory();
        log.append(note("e1", 0)).unwrap();
        log.append(note("e2", 0)).unwrap();
        log.append(PendingEntry::cycle_record(&hold_record("e1-c0", "e1"))).unwrap();
        let trail = log.audit_trail("e1").unwrap();
        assert_eq!(trail.entries.iter().map(|e| e.offset).collect::<Vec<_>>(), vec![0, 2]);
        assert_eq!(log.cycle_offsets("e1"), vec![2]);
        assert!(log.cycle_record("e1-c0").unwrap().is_some());
    }
}
