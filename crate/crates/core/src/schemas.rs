//! Versioned JSON Schemas for every contract and API payload.

use std::collections::BTreeMap;
use std::io;
use std::path::Path;

use serde_json::Value;

use crate::contracts::{json_schema, SchemaId};
use crate::replay::TrajectoryRecord;
use crate::service::{
    CycleTrail, CycleView, DatasetLoadRequest, DatasetLoadResponse, ErrorBody, FeedbackSubmission, PreferenceView,
    RegretView, StartCycleRequest,
};
use crate::workflow::{CycleInput, PendingReview};

pub const SCHEMA_VERSION: &str = "v1";

fn with_id(schema: schemars::schema::RootSchema, name: &str) -> Value {
    let mut value = serde_json::to_value(schema).expect("schema serializes");
    if let Value::Object(map) = &mut value {
        map.insert("$id".into(), Value::String(format!("vdss/{SCHEMA_VERSION}/{name}.json")));
    }
    value
}

/// Schema name to schema, contracts first.
pub fn all_schemas() -> BTreeMap<String, Value> {
    let mut out: BTreeMap<String, Value> = SchemaId::all().into_iter().map(|id| (id.name(), json_schema(id))).collect();
    let api = [
        ("api.cycle_input", schemars::schema_for!(CycleInput)),
        ("api.pending_review", schemars::schema_for!(PendingReview)),
        ("api.start_cycle_request", schemars::schema_for!(StartCycleRequest)),
        ("api.cycle_view", schemars::schema_for!(CycleView)),
        ("api.feedback_submission", schemars::schema_for!(FeedbackSubmission)),
        ("api.cycle_trail", schemars::schema_for!(CycleTrail)),
        ("api.preference_view", schemars::schema_for!(PreferenceView)),
        ("api.regret_view", schemars::schema_for!(RegretView)),
        ("api.dataset_load_request", schemars::schema_for!(DatasetLoadRequest)),
        ("api.dataset_load_response", schemars::schema_for!(DatasetLoadResponse)),
        ("api.error", schemars::schema_for!(ErrorBody)),
        ("trajectory_record", schemars::schema_for!(TrajectoryRecord)),
    ];
    for (name, schema) in api {
        out.insert(name.to_string(), with_id(schema, name));
    }
    out
}

pub fn render(schema: &Value) -> String {
    let mut s = serde_json::to_string_pretty(schema).expect("schema serializes");
    s.push('\n');
    s
}

/// Write `<dir>/<name>.json` for every schema; returns the count.
pub fn write_all(dir: &Path) -> io::Result<usize> {
    std::fs::create_dir_all(dir)?;
    let all = all_schemas();
    for (name, schema) in &all {
        std::fs::write(dir.join(format!("{name}.json")), render(schema))?;
    }
    Ok(all.len())
}
