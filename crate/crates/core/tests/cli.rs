use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn fairscreen(data_dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fairscreen"))
        .env("FAIRSCREEN_DATA_DIR", data_dir)
        .args(args)
        .output()
        .unwrap()
}

fn ok(data_dir: &Path, args: &[&str]) -> String {
    let out = fairscreen(data_dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

/// Last pretty-printed JSON object in the output.
fn trailing_json(stdout: &str) -> Value {
    let start = stdout.rfind("\n{").map(|i| i + 1).unwrap_or(0);
    serde_json::from_str(&stdout[start..]).unwrap()
}

#[test]
fn generate_writes_one_line_per_profile_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.jsonl");
    let b = dir.path().join("b.jsonl");
    ok(dir.path(), &["generate", "--n", "24000", "--seed", "1", "--out", a.to_str().unwrap()]);
    ok(dir.path(), &["generate", "--n", "24000", "--seed", "1", "--out", b.to_str().unwrap()]);
    let text = std::fs::read_to_string(&a).unwrap();
    assert_eq!(text.lines().count(), 24_000);
    assert_eq!(text, std::fs::read_to_string(&b).unwrap());
    assert!(dir.path().join("a.header.json").is_file());

    let probe = trailing_json(&ok(dir.path(), &["probe", "--testbed", a.to_str().unwrap(), "--features", "merits"]));
    assert!(probe["accuracy"].as_f64().unwrap() <= 0.55);
    assert_eq!(probe["n_test"], 1440);
}

#[test]
fn train_then_evaluate_and_probe() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(dir.path(), &["train", "--scenario", "S1", "--bias", "0.75", "--seed", "2", "--n", "1200"]);
    let results = trailing_json(&out);
    assert_eq!(results["scenario"], "S1");
    assert_eq!(results["history"].as_array().unwrap().len(), 10);
    let model_path = results["model_path"].as_str().unwrap().to_string();
    assert!(Path::new(&model_path).is_file());
    assert!(dir.path().join("results/s1-b0.75-seed2.json").is_file());

    for model in ["s1-b0.75-seed2", model_path.as_str()] {
        let out = ok(dir.path(), &["evaluate", "--model", model, "--k", "100"]);
        assert!(out.contains("S1"));
        let report = trailing_json(&out);
        let g = &report["gender_counts"];
        assert_eq!(g["G0"].as_u64().unwrap() + g["G1"].as_u64().unwrap(), 100);
    }

    let probe = trailing_json(&ok(dir.path(), &["probe", "--model", "s1-b0.75-seed2"]));
    assert!(probe["accuracy"].is_number());
}

#[test]
fn reproduce_emits_five_models_and_a_table() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(dir.path(), &["reproduce", "--seed", "1", "--bias", "0.75", "--n", "1200", "--k", "50"]);
    for s in ["S1", "S2", "S3", "S4", "S5"] {
        assert!(out.lines().any(|l| l.starts_with(s)), "{out}");
        let id = format!("{}-b0.75-seed1", s.to_lowercase());
        assert!(dir.path().join("models").join(format!("{id}.json")).is_file());
        assert!(dir.path().join("reports").join(format!("{id}-k50.json")).is_file());
    }
    let csv = std::fs::read_to_string(dir.path().join("summary-seed1-b0.75.csv")).unwrap();
    assert_eq!(csv.lines().count(), 6);
    assert!(dir.path().join("summary-seed1-b0.75.txt").is_file());
}

#[test]
fn usage_errors_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    for args in [&["frobnicate"][..], &["generate", "--bogus"][..], &["train", "--scenario", "S7"][..], &[][..]] {
        let out = fairscreen(dir.path(), args);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
    }
    let out = fairscreen(dir.path(), &["evaluate", "--model", "missing-model"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing-model"));
    let out = fairscreen(dir.path(), &["generate", "--n", "7"]);
    assert_eq!(out.status.code(), Some(1));
}
