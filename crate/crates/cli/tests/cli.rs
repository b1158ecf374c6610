use std::path::Path;
use std::process::{Command, Output};

fn sightgen(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sightgen")).args(args).current_dir(cwd).output().unwrap()
}

fn ok(args: &[&str], cwd: &Path) -> serde_json::Value {
    let out = sightgen(args, cwd);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

const FLAGS: &[(&str, &[&str])] = &[
    ("ingest", &["input", "out"]),
    ("descriptors", &["input", "levels", "out"]),
    ("fit-gnb", &["input", "out"]),
    ("dataset", &["input", "labeler", "out", "min-count", "split-ratio", "augment", "no-augment", "balance", "no-balance", "seed"]),
    (
        "train",
        &[
            "dataset", "out", "prompt-type", "beta", "detach", "no-detach", "d-model", "layers", "heads", "d-ff", "max-len",
            "dropout", "lr", "batch-size", "epochs", "warmup-steps", "weight-decay", "grad-clip", "eval-every", "patience",
            "seed", "labeler", "select-samples",
        ],
    ),
    (
        "generate",
        &[
            "checkpoint", "vocab", "labeler", "class", "n", "out", "temperature", "greedy", "top-k", "max-tokens",
            "bar-limit", "grammar-filter", "no-grammar-filter", "seed",
        ],
    ),
    (
        "eval",
        &[
            "checkpoint", "vocab", "labeler", "dataset", "n-per-class", "out", "temperature", "greedy", "top-k",
            "max-tokens", "bar-limit", "grammar-filter", "no-grammar-filter", "seed",
        ],
    ),
    ("grad-check", &["precision", "tolerance", "seed", "out"]),
    ("synth", &["pieces", "bars", "seed", "out"]),
];

#[test]
fn help_documents_every_flag() {
    let dir = tempfile::tempdir().unwrap();
    for (cmd, flags) in FLAGS {
        let out = sightgen(&[cmd, "--help"], dir.path());
        assert!(out.status.success());
        let text = String::from_utf8(out.stdout).unwrap();
        for f in flags.iter().chain(&["config", "jobs"]) {
            let flag = format!("--{f}");
            let line = text.lines().find(|l| l.trim_start().starts_with(&flag) || l.contains(&format!(" {flag} ")));
            let line = line.unwrap_or_else(|| panic!("{cmd} --help lacks {flag}:\n{text}"));
            // every flag carries a description
            let idx = text.lines().position(|l| l == line).unwrap();
            let described = line.trim_start().len() > flag.len() + 12 || text.lines().nth(idx + 1).is_some_and(|n| !n.trim().is_empty());
            assert!(described, "{cmd} {flag} has no description");
        }
    }
}

#[test]
fn usage_and_data_errors_have_distinct_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = sightgen(&["train", "--no-such-flag"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"]["kind"], "usage");

    let out = sightgen(&["fit-gnb", "--out", "x.json"], dir.path());
    assert_eq!(out.status.code(), Some(2), "missing required setting");

    let out = sightgen(&["fit-gnb", "--input", "missing.csv", "--out", "x.json"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"]["kind"], "data");
}

#[test]
fn config_file_and_flag_precedence() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.json"), r#"{"pieces": 4, "bars": 16, "seed": 3, "out": "a"}"#).unwrap();
    let s = ok(&["synth", "--config", "c.json", "--pieces", "5"], dir.path());
    assert_eq!(s["pieces"], 5);
    let echo: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("a/synth.config.json")).unwrap()).unwrap();
    assert_eq!(echo, serde_json::json!({"pieces": 5, "bars": 16, "seed": 3, "out": "a"}));
    // the echo is itself a valid config
    ok(&["synth", "--config", "a/synth.config.json", "--out", "b"], dir.path());
    assert_eq!(std::fs::read(dir.path().join("a/piece_0004.musicxml")).unwrap(), std::fs::read(dir.path().join("b/piece_0004.musicxml")).unwrap());

    std::fs::write(dir.path().join("bad.json"), r#"{"pieces": 4, "colour": "red"}"#).unwrap();
    assert_eq!(sightgen(&["synth", "--config", "bad.json", "--out", "c"], dir.path()).status.code(), Some(2));
}

#[test]
fn pipeline_count_contract() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["synth", "--pieces", "12", "--bars", "16", "--seed", "2", "--out", "corpus"], d);
    let ing = ok(&["ingest", "--input", "corpus", "--out", "ingest.json"], d);
    assert_eq!(ing["parsed"], 12);
    ok(&["descriptors", "--input", "corpus", "--levels", "corpus/levels.json", "--out", "desc.csv"], d);
    ok(&["fit-gnb", "--input", "desc.csv", "--out", "labeler.json"], d);
    ok(&["dataset", "--input", "corpus", "--labeler", "labeler.json", "--out", "ds", "--min-count", "1", "--no-balance"], d);
    let tiny = ["--d-model", "8", "--layers", "1", "--heads", "2", "--d-ff", "16", "--epochs", "1", "--batch-size", "16"];
    ok(&[&["train", "--dataset", "ds", "--out", "run"][..], &tiny].concat(), d);
    // selection by generation accuracy records a score per evaluation
    ok(&[&["train", "--dataset", "ds", "--out", "sel", "--labeler", "labeler.json", "--select-samples", "3"][..], &tiny].concat(), d);
    let log = std::fs::read_to_string(d.join("sel/train_log.jsonl")).unwrap();
    let first: serde_json::Value = serde_json::from_str(log.lines().next().unwrap()).unwrap();
    assert!(first["score"].is_number(), "{first}");
    let g = ok(&["generate", "--checkpoint", "run/model.ckpt", "--class", "easy", "--n", "5", "--out", "gen", "--max-tokens", "300"], d);
    assert_eq!(g["generated"], 5);
    let names: Vec<String> =
        std::fs::read_dir(d.join("gen")).unwrap().map(|e| e.unwrap().file_name().to_string_lossy().into_owned()).collect();
    for i in 0..5 {
        assert!(names.contains(&format!("easy_{i}.musicxml")), "{names:?}");
        assert!(names.contains(&format!("easy_{i}.json")));
    }
    assert_eq!(names.iter().filter(|n| n.ends_with(".musicxml")).count(), 5);

    // an untrained model rarely parses without the filter
    let e = ok(
        &["eval", "--checkpoint", "run/model.ckpt", "--labeler", "labeler.json", "--n-per-class", "3", "--max-tokens", "200", "--out", "eval.json"],
        d,
    );
    assert_eq!(e["samples"], 9);
    assert!(e["degeneration"].as_f64().unwrap() > 0.5);
}

#[test]
fn grad_check_reports() {
    let dir = tempfile::tempdir().unwrap();
    let r = ok(&["grad-check", "--out", "gc.json", "--seed", "1"], dir.path());
    assert_eq!(r["passed"], true);
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("gc.json")).unwrap()).unwrap();
    assert_eq!(report["passed"], true);
    let out = sightgen(&["grad-check", "--out", "gc2.json", "--tolerance", "1e-30"], dir.path());
    assert_eq!(out.status.code(), Some(1));
}
