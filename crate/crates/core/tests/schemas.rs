use std::path::PathBuf;

use vdss_core::schemas::{all_schemas, render};

fn schema_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../schemas/v1")
}

#[test]
fn checked_in_schemas_match_the_types() {
    let dir = schema_dir();
    let all = all_schemas();
    for (name, schema) in &all {
        let path = dir.join(format!("{name}.json"));
        let on_disk = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}; run `vdss schemas`", path.display()));
        assert_eq!(on_disk, render(schema), "{name} is stale; run `vdss schemas`");
    }
    let files = std::fs::read_dir(&dir).unwrap().filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "json")).count();
    assert_eq!(files, all.len(), "schemas/v1 holds files no type produces");
}
