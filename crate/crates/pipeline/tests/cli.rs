use std::path::Path;
use std::process::{Command, Output};

use forge_pipeline::build::tree_digest;
use tempfile::TempDir;

fn forge(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_forge")).current_dir(dir).args(args).output().unwrap()
}

fn ok(out: Output) -> String {
    let stdout = String::from_utf8_lossy(&out.stdout).into_owned();
    assert!(out.status.success(), "stdout: {stdout}\nstderr: {}", String::from_utf8_lossy(&out.stderr));
    stdout
}

#[test]
fn build_stats_and_tools_end_to_end() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    ok(forge(d, &["make-fixtures", "--dir", "fx"]));
    let text = ok(forge(d, &["build", "--input", "fx", "--output", "out", "--seed", "7", "--mock", "--workers", "8"]));
    assert!(text.contains("records written: 1"), "{text}");

    ok(forge(d, &["stats", "--output", "out", "--json", "stats.json"]));
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(d.join("stats.json")).unwrap()).unwrap();
    assert_eq!(v["sources"], 3);
    assert_eq!(v["counts"]["after_nms"], 7);
    assert_eq!(v["counts"]["records"], 1);

    ok(forge(d, &["encode-prompts", "--output", "out", "--dest", "maps"]));
    assert_eq!(std::fs::read_dir(d.join("maps")).unwrap().count(), 2);

    let frames = ok(forge(d, &["noise-preview", "--image", "fx/a.png", "--steps", "0,500,999", "--seed", "3", "--dest", "noise"]));
    assert!(frames.contains("3 frames"), "{frames}");

    ok(forge(d, &["eval", "--generated", "out/manifest.jsonl", "--reference", "out/manifest.jsonl", "--mock", "--report", "eval.json"]));
    let r: serde_json::Value = serde_json::from_slice(&std::fs::read(d.join("eval.json")).unwrap()).unwrap();
    assert_eq!(r["mask_iou"], 1.0);
}

#[test]
fn kill_and_resume_through_the_binary() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    ok(forge(d, &["make-fixtures", "--dir", "fx"]));
    ok(forge(d, &["build", "--input", "fx", "--output", "clean", "--seed", "7", "--mock"]));
    let partial = ok(forge(d, &["build", "--input", "fx", "--output", "cut", "--seed", "7", "--mock", "--stop-after", "2"]));
    assert!(partial.contains("forge resume"), "{partial}");
    ok(forge(d, &["resume", "--input", "fx", "--output", "cut", "--seed", "7", "--mock"]));
    assert_eq!(tree_digest(&d.join("clean")).unwrap(), tree_digest(&d.join("cut")).unwrap());
}

#[test]
fn errors_exit_nonzero_with_message() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    ok(forge(d, &["make-fixtures", "--dir", "fx"]));
    // no seed given anywhere
    let out = forge(d, &["build", "--input", "fx", "--output", "out", "--mock"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));

    let out = forge(d, &["resume", "--input", "fx", "--output", "missing", "--seed", "1", "--mock"]);
    assert_eq!(out.status.code(), Some(1));

    ok(forge(d, &["build", "--input", "fx", "--output", "out", "--seed", "1", "--mock", "--stop-after", "1"]));
    let out = forge(d, &["resume", "--input", "fx", "--output", "out", "--seed", "2", "--mock"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn config_file_and_flag_overrides() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    ok(forge(d, &["make-fixtures", "--dir", "fx"]));
    std::fs::write(d.join("forge.toml"), "input_dir = \"fx\"\noutput_dir = \"from_file\"\nseed = 7\nmock = true\n").unwrap();
    ok(forge(d, &["build", "--config", "forge.toml"]));
    ok(forge(d, &["build", "--config", "forge.toml", "--output", "from_flag"]));
    assert_eq!(tree_digest(&d.join("from_file")).unwrap(), tree_digest(&d.join("from_flag")).unwrap());

    std::fs::write(d.join("bad.toml"), "seed = 7\nnot_a_setting = 1\n").unwrap();
    assert_eq!(forge(d, &["build", "--config", "bad.toml"]).status.code(), Some(1));
}
