use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn fusionml(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fusionml")).args(args).output().unwrap()
}

fn text(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).into_owned()
}

fn synth(dir: &Path, kind: &str) -> String {
    let data = dir.join("data");
    let out = fusionml(&["synth", "--kind", kind, "--n", "100", "--seed", "3", "--output", data.to_str().unwrap()]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    data.join("manifest.json").to_str().unwrap().to_string()
}

#[test]
fn full_workflow() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(dir.path(), "ambiguous_half");
    let config = dir.path().join("config.json");
    fs::write(
        &config,
        serde_json::json!({ "manifest": manifest, "folds": 3, "top_k": 2, "weight_budget": 8 }).to_string(),
    )
    .unwrap();
    let run = dir.path().join("run");
    let run = run.to_str().unwrap();
    // Flags override the config's folds and default budgets.
    let out = fusionml(&[
        "search", "--config", config.to_str().unwrap(), "--folds", "2", "--budget", "1", "--seed", "4", "--output",
        run, "--jobs", "2",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    assert!(text(&out.stdout).contains("ensemble"));
    let report: serde_json::Value = serde_json::from_slice(&fs::read(Path::new(run).join("report.json")).unwrap()).unwrap();
    assert_eq!(report["config"]["folds"], 2);
    assert_eq!(report["config"]["top_k"], 2);
    assert_eq!(report["config"]["seed"], 4);

    let out = fusionml(&["evaluate", "--output", run]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    assert!(text(&out.stdout).contains("matches recomputation"));

    let out = fusionml(&["conformal", "--output", run, "--alpha", "0.2"]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    assert!(Path::new(run).join("conformal.json").is_file());

    let out = fusionml(&["acquire", "--output", run, "--grid", "0,0.5,1"]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    let csv = text(&out.stdout);
    assert_eq!(csv.lines().next(), Some("policy,fraction,metric"));
    assert_eq!(csv.lines().count(), 1 + 2 * 3);

    let out = fusionml(&["explain", "--output", run, "--rows", "3", "--steps", "16", "--repeats", "1"]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    assert!(text(&out.stdout).contains("attribution by modality"));
    assert!(Path::new(run).join("explain_fold0.json").is_file());

    // A tampered metrics file fails the audit.
    let metrics = Path::new(run).join("metrics.csv");
    let tampered = fs::read_to_string(&metrics).unwrap().replacen(",0,", ",0,0.123", 1);
    fs::write(&metrics, tampered).unwrap();
    let out = fusionml(&["evaluate", "--output", run]);
    assert_eq!(out.status.code(), Some(1));
    assert!(text(&out.stderr).contains("differs from recomputation"));
}

#[test]
fn mismatched_embedding_ids_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(dir.path(), "cross_modal_xor");
    let emb = dir.path().join("data/image.csv");
    let body = fs::read_to_string(&emb).unwrap();
    let (header, rows) = body.split_once('\n').unwrap();
    let rows: Vec<&str> = rows.lines().skip(1).collect();
    fs::write(&emb, format!("{header}\nghost_17,{}\n{}\n", vec!["0"; 16].join(","), rows.join("\n"))).unwrap();
    let run = dir.path().join("run");
    let out = fusionml(&[
        "search", "--manifest", &manifest, "--folds", "2", "--budget", "1", "--output", run.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let err = text(&out.stderr);
    assert!(err.contains("ghost_17"), "{err}");
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(fusionml(&["search"]).status.code(), Some(1));
    assert_eq!(fusionml(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(fusionml(&["synth", "--kind", "nonsense", "--output", "/tmp/x"]).status.code(), Some(1));
    assert_eq!(fusionml(&["evaluate", "--output", "/nonexistent/run"]).status.code(), Some(1));
    assert_eq!(fusionml(&["--help"]).status.code(), Some(0));
}

#[test]
fn synth_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    synth(a.path(), "exchangeable");
    synth(b.path(), "exchangeable");
    for f in ["manifest.json", "tabular.csv", "image.csv"] {
        assert_eq!(fs::read(a.path().join("data").join(f)).unwrap(), fs::read(b.path().join("data").join(f)).unwrap());
    }
}
