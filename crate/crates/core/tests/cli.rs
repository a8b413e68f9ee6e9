//! End-to-end checks of the command-line interface and the run manifest.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use lora_advsec::attacks::{AspCurve, AttackKind, Scope};
use lora_advsec::classifiers::Subset;
use lora_advsec::dataset::load_dataset;
use lora_advsec::defense::DefenseReport;
use lora_advsec::pipeline::{
    read_accuracy, read_fidelity, sha256_hex, RunManifest, StageStatus, ACCURACY_FILE, ASP_FILE,
    DATASET_FILE, DEFENSE_FILE, FIDELITY_FILE, LEGITIMATE_FILE, MANIFEST_FILE, THREADS_ENV,
};
use tempfile::TempDir;

const SMALL: &str = r#"{
  "dataset": { "n_total": 400 },
  "train": { "epochs": 2 },
  "psr_grid": [-10.0, -3.0, 0.0],
  "defense": { "train": { "epochs": 1 } }
}"#;

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lora-advsec"))
        .args(args)
        .env_remove(THREADS_ENV)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, json: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, json).unwrap();
    path
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Runs the small pipeline into `<tmp>/out` and returns the output directory.
fn small_run(tmp: &TempDir, json: &str) -> PathBuf {
    let cfg = write_config(tmp.path(), "config.json", json);
    let out = tmp.path().join("out");
    let o = cli(&[
        "run",
        "--config",
        path_str(&cfg),
        "--seed",
        "7",
        "--out",
        path_str(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    out
}

fn manifest(out: &Path) -> RunManifest {
    RunManifest::from_json(&fs::read(out.join(MANIFEST_FILE)).unwrap()).unwrap()
}

fn status(m: &RunManifest, stage: &str) -> StageStatus {
    m.stages.iter().find(|s| s.name == stage).unwrap().status
}

#[test]
fn missing_config_exits_one_with_the_path() {
    let o = cli(&["run", "--config", "/nonexistent/experiment.json"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("/nonexistent/experiment.json"));
}

#[test]
fn unknown_flag_and_invalid_values_exit_one() {
    let o = cli(&["run", "--no-such-flag"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));

    let tmp = TempDir::new().unwrap();
    let bad = write_config(tmp.path(), "bad.json", r#"{ "train_frac": 2.0 }"#);
    assert_eq!(
        cli(&["train", "--config", path_str(&bad)]).status.code(),
        Some(1)
    );
    let unknown = write_config(tmp.path(), "unknown.json", r#"{ "sed": 3 }"#);
    assert_eq!(
        cli(&["run", "--config", path_str(&unknown)]).status.code(),
        Some(1)
    );
}

#[test]
fn run_writes_a_complete_round_tripping_manifest_and_valid_reports() {
    let tmp = TempDir::new().unwrap();
    let out = small_run(&tmp, SMALL);
    let bytes = fs::read(out.join(MANIFEST_FILE)).unwrap();
    let m = RunManifest::from_json(&bytes).unwrap();
    assert_eq!(m.to_json(), bytes);
    assert!(m.complete);
    assert_eq!(m.seed, 7);
    assert_eq!(m.config.seed, 7);
    assert!(m.config.attacks.as_ref().is_some_and(|a| a.len() == 8));
    assert!(m.stages.iter().all(|s| s.status == StageStatus::Complete));
    for stage in &m.stages {
        for (rel, hash) in &stage.outputs {
            assert_eq!(
                &sha256_hex(&fs::read(out.join(rel)).unwrap()),
                hash,
                "{rel}"
            );
        }
    }

    let acc = read_accuracy(&fs::read(out.join(ACCURACY_FILE)).unwrap()).unwrap();
    assert_eq!(acc.len(), 8);
    assert!(acc.iter().all(|r| (0.0..=1.0).contains(&r.overall)));
    let curve = AspCurve::read_csv(fs::read(out.join(ASP_FILE)).unwrap().as_slice()).unwrap();
    assert!(!curve.points.is_empty());
    let defense =
        DefenseReport::read_csv(fs::read(out.join(DEFENSE_FILE)).unwrap().as_slice()).unwrap();
    assert!(defense.rows.iter().any(|r| r.scope == "multitask/task2"));
    assert_eq!(
        read_fidelity(&fs::read(out.join(FIDELITY_FILE)).unwrap())
            .unwrap()
            .len(),
        2
    );
}

#[test]
fn report_regenerates_the_in_run_outputs() {
    let tmp = TempDir::new().unwrap();
    let out = small_run(&tmp, SMALL);
    let files = [ACCURACY_FILE, ASP_FILE, DEFENSE_FILE, FIDELITY_FILE];
    let before: Vec<Vec<u8>> = files
        .iter()
        .map(|f| fs::read(out.join(f)).unwrap())
        .collect();
    for f in files {
        fs::remove_file(out.join(f)).unwrap();
    }
    let cfg = tmp.path().join("config.json");
    let o = cli(&[
        "report",
        "--config",
        path_str(&cfg),
        "--seed",
        "7",
        "--out",
        path_str(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for (f, b) in files.iter().zip(&before) {
        assert_eq!(&fs::read(out.join(f)).unwrap(), b, "{f}");
    }

    // Parallel sweeps give the same curves.
    let o = Command::new(env!("CARGO_BIN_EXE_lora-advsec"))
        .args([
            "attack",
            "--config",
            path_str(&cfg),
            "--seed",
            "7",
            "--out",
            path_str(&out),
        ])
        .env(THREADS_ENV, "3")
        .output()
        .unwrap();
    assert!(o.status.success());
    assert_eq!(fs::read(out.join(ASP_FILE)).unwrap(), before[1]);
}

#[test]
fn single_attack_point_appends_one_row_per_task() {
    let tmp = TempDir::new().unwrap();
    let out = small_run(&tmp, SMALL);
    let read = || AspCurve::read_csv(fs::read(out.join(ASP_FILE)).unwrap().as_slice()).unwrap();
    let before = read();
    let cfg = tmp.path().join("config.json");
    let o = cli(&[
        "attack",
        "--config",
        path_str(&cfg),
        "--seed",
        "7",
        "--out",
        path_str(&out),
        "--psr",
        "-3",
        "--scope",
        "hybrid",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let after = read();
    assert_eq!(after.points.len(), before.points.len() + 2);
    assert_eq!(after.points[..before.points.len()], before.points[..]);
    let new = &after.points[before.points.len()..];
    assert!(new
        .iter()
        .all(|p| p.psr_db == -3.0 && p.scope == Scope::Hybrid && p.kind == AttackKind::Untargeted));
    assert_eq!(new[0].task, "task1");
    assert_eq!(new[1].task, "task2");

    let o = cli(&[
        "attack",
        "--config",
        path_str(&cfg),
        "--seed",
        "7",
        "--out",
        path_str(&out),
        "--psr",
        "-3",
        "--scope",
        "multitask",
        "--kind",
        "targeted",
        "--targets",
        "1,0",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(read().points.len(), before.points.len() + 4);

    let o = cli(&["attack", "--out", path_str(&out), "--psr", "-3"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn external_dataset_skips_generation_and_records_its_hash() {
    let tmp = TempDir::new().unwrap();
    let first = small_run(&tmp, SMALL);
    let data = tmp.path().join("external.lora");
    fs::copy(first.join(DATASET_FILE), &data).unwrap();
    let json = format!(
        r#"{{ "dataset_path": {:?}, "train": {{ "epochs": 1 }}, "psr_grid": [-3.0], "defense": null }}"#,
        path_str(&data)
    );
    let cfg = write_config(tmp.path(), "external.json", &json);
    let out = tmp.path().join("external-out");
    let o = cli(&["run", "--config", path_str(&cfg), "--out", path_str(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let m = manifest(&out);
    assert!(m.complete);
    assert_eq!(status(&m, "gen-data"), StageStatus::Skipped);
    assert_eq!(status(&m, "spoof"), StageStatus::Skipped);
    assert_eq!(status(&m, "defend"), StageStatus::Skipped);
    let train = m.stages.iter().find(|s| s.name == "train").unwrap();
    assert_eq!(
        train.inputs.get(path_str(&data)),
        Some(&sha256_hex(&fs::read(&data).unwrap()))
    );
    assert!(!out.join(DATASET_FILE).exists());
}

#[test]
fn failing_stage_leaves_an_incomplete_manifest_and_exits_two() {
    let tmp = TempDir::new().unwrap();
    let junk = tmp.path().join("junk.lora");
    fs::write(&junk, b"not a dataset").unwrap();
    let json = format!(r#"{{ "dataset_path": {:?} }}"#, path_str(&junk));
    let cfg = write_config(tmp.path(), "junk.json", &json);
    let out = tmp.path().join("out");
    let o = cli(&["run", "--config", path_str(&cfg), "--out", path_str(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("train"));
    let m = manifest(&out);
    assert!(!m.complete);
    assert_eq!(status(&m, "train"), StageStatus::Failed);
    assert!(m
        .stages
        .iter()
        .find(|s| s.name == "train")
        .unwrap()
        .error
        .is_some());
    for later in ["attack", "defend", "report"] {
        assert_eq!(status(&m, later), StageStatus::NotRun);
    }
}

#[test]
fn single_mode_writes_the_four_single_task_blocks() {
    let tmp = TempDir::new().unwrap();
    let json = r#"{ "mode": "single", "arch": "cnn", "dataset": { "n_total": 400 }, "train": { "epochs": 1 },
                   "psr_grid": [-3.0], "defense": null }"#;
    let out = small_run(&tmp, json);
    let acc = read_accuracy(&fs::read(out.join(ACCURACY_FILE)).unwrap()).unwrap();
    let blocks: Vec<(&str, &str, Subset)> = acc
        .iter()
        .map(|r| (r.model.as_str(), r.task.as_str(), r.subset))
        .collect();
    assert_eq!(
        blocks,
        vec![
            ("single", "task1", Subset::All),
            ("single", "task1", Subset::LegitimateOnly),
            ("single", "task1", Subset::RogueOnly),
            ("single", "task2", Subset::All),
        ]
    );
    let curve = AspCurve::read_csv(fs::read(out.join(ASP_FILE)).unwrap().as_slice()).unwrap();
    assert!(curve.points.iter().all(|p| p.scope != Scope::Multitask));
}

#[test]
fn stages_can_be_run_one_by_one() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "config.json", SMALL);
    let out = tmp.path().join("out");
    for stage in ["gen-data", "spoof", "train", "attack", "defend", "report"] {
        let o = cli(&[
            stage,
            "--config",
            path_str(&cfg),
            "--seed",
            "7",
            "--out",
            path_str(&out),
        ]);
        assert!(
            o.status.success(),
            "{stage}: {}",
            String::from_utf8_lossy(&o.stderr)
        );
    }
    let other = TempDir::new().unwrap();
    let whole = small_run(&other, SMALL);
    for f in [
        ACCURACY_FILE,
        ASP_FILE,
        DEFENSE_FILE,
        FIDELITY_FILE,
        DATASET_FILE,
    ] {
        assert_eq!(
            fs::read(out.join(f)).unwrap(),
            fs::read(whole.join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn raw_float32_captures_become_legitimate_records() {
    let tmp = TempDir::new().unwrap();
    let mut files = Vec::new();
    for (d, records) in [(1.0f32, 3usize), (2.0, 5)] {
        let bytes: Vec<u8> = (0..records * 64)
            .flat_map(|i| (d + i as f32 * 1e-3).to_le_bytes())
            .collect();
        let path = tmp.path().join(format!("device{d}.f32"));
        fs::write(&path, bytes).unwrap();
        files.push(path);
    }
    let out = tmp.path().join("out");
    let o = cli(&[
        "gen-data",
        "--out",
        path_str(&out),
        "--from-raw-f32",
        path_str(&files[0]),
        "--from-raw-f32",
        path_str(&files[1]),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let ds = load_dataset(&out.join(LEGITIMATE_FILE)).unwrap();
    assert_eq!(ds.counts(), [[3, 0], [5, 0]]);

    let truncated = tmp.path().join("short.f32");
    fs::write(&truncated, [0u8; 12]).unwrap();
    let o = cli(&[
        "gen-data",
        "--out",
        path_str(&out),
        "--from-raw-f32",
        path_str(&truncated),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn schema_subcommand_prints_the_published_schema() {
    let o = cli(&["schema"]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["additionalProperties"], serde_json::Value::Bool(false));
}
