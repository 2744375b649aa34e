use std::path::Path;
use std::process::{Command, Output};

use geoskill_core::fixtures::AndorraCase;
use geoskill_core::skill_model::LibraryStore;
use serde_json::{json, Value};

fn geoskill(dir: &Path, script: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_geoskill"))
        .current_dir(dir)
        .env_remove("GEOSKILL_CONFIG")
        .args(["--override", "backend.kind=mock", "--override"])
        .arg(format!("backend.mock_script={}", script.display()))
        .args(["--override", "inference.fixed_clock=true", "--override", "batch.checkpoint_every=1"])
        .args(args)
        .output()
        .unwrap()
}

fn write_script(path: &Path, replies: Vec<String>) {
    std::fs::write(path, json!({ "ordinal": replies }).to_string()).unwrap();
}

fn manifest(path: &Path, image: &str, n: usize) {
    let lines: String = (0..n)
        .map(|i| json!({ "id": format!("q{i}"), "image": image, "lat": 42.54, "lon": 1.52, "country": "AD" }).to_string() + "\n")
        .collect();
    std::fs::write(path, lines).unwrap();
}

#[test]
fn batch_resumes_after_a_torn_write_and_eval_reads_the_log() {
    let case = AndorraCase::new();
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    LibraryStore::new(dir.join("lib")).commit(&case.library).unwrap();
    let (script, items, out) = (dir.join("script.json"), dir.join("items.jsonl"), dir.join("out.jsonl"));

    manifest(&items, &case.image, 2);
    write_script(&script, [case.infer_script(), case.infer_script()].concat());
    let first = geoskill(dir, &script, &["batch-infer", "--manifest", "items.jsonl", "--library", "lib", "--out", "out.jsonl"]);
    assert!(first.status.success(), "{}", String::from_utf8_lossy(&first.stderr));

    // An interrupted run left half a line behind the checkpoint.
    let mut log = std::fs::read(&out).unwrap();
    log.extend_from_slice(b"{\"query_id\":\"q2\",\"predic");
    std::fs::write(&out, log).unwrap();

    manifest(&items, &case.image, 3);
    write_script(&script, case.infer_script());
    let resumed =
        geoskill(dir, &script, &["batch-infer", "--manifest", "items.jsonl", "--library", "lib", "--out", "out.jsonl", "--resume"]);
    assert!(resumed.status.success(), "{}", String::from_utf8_lossy(&resumed.stderr));
    let summary: Value = serde_json::from_slice(&resumed.stdout).unwrap();
    assert_eq!(summary["resumed_from"], 2);
    assert_eq!(summary["succeeded"], 1);

    let ids: Vec<String> = std::fs::read_to_string(&out)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str::<Value>(l).unwrap()["query_id"].as_str().unwrap().to_string())
        .collect();
    assert_eq!(ids, ["q0", "q1", "q2"]);

    let eval = geoskill(dir, &script, &["eval", "--predictions", "out.jsonl", "--manifest", "items.jsonl"]);
    assert!(eval.status.success(), "{}", String::from_utf8_lossy(&eval.stderr));
    let report: Value = serde_json::from_slice(&eval.stdout).unwrap();
    assert_eq!(report["missing_predictions"], 0);
    assert_eq!(report["labeled"], 3);
    assert_eq!(report["country_accuracy"], 1.0);
    assert_eq!(report["modes"], json!(["full"]));
}

#[test]
fn eval_counts_missing_predictions_as_misses() {
    let case = AndorraCase::new();
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    LibraryStore::new(dir.join("lib")).commit(&case.library).unwrap();
    let script = dir.join("script.json");
    manifest(&dir.join("one.jsonl"), &case.image, 1);
    write_script(&script, case.infer_script());
    let run = geoskill(dir, &script, &["batch-infer", "--manifest", "one.jsonl", "--library", "lib", "--out", "out.jsonl"]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));

    manifest(&dir.join("two.jsonl"), &case.image, 2);
    let eval = geoskill(dir, &script, &["eval", "--predictions", "out.jsonl", "--manifest", "two.jsonl"]);
    let report: Value = serde_json::from_slice(&eval.stdout).unwrap();
    assert_eq!(report["missing_predictions"], 1);
    assert_eq!(report["country_accuracy"], 0.5);
    let acc = report["distance"]["accuracy"].as_array().unwrap();
    assert!(acc.iter().all(|a| a.as_f64().unwrap() <= 0.5));
}

#[test]
fn batch_with_every_item_failing_exits_with_backend_code() {
    let case = AndorraCase::new();
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    LibraryStore::new(dir.join("lib")).commit(&case.library).unwrap();
    let script = dir.join("script.json");
    manifest(&dir.join("items.jsonl"), &case.image, 2);
    write_script(&script, vec![]);
    let run = geoskill(dir, &script, &["batch-infer", "--manifest", "items.jsonl", "--library", "lib", "--out", "out.jsonl"]);
    assert_eq!(run.status.code(), Some(3), "{}", String::from_utf8_lossy(&run.stderr));
    let errors = std::fs::read_to_string(dir.join("out.jsonl.errors.jsonl")).unwrap();
    assert_eq!(errors.lines().count(), 2);
}
