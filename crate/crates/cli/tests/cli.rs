use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_groundcheck"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn")
}

fn ok(args: &[&str]) -> serde_json::Value {
    let out = run(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("json summary")
}

fn error_object(out: &Output) -> serde_json::Value {
    let v: serde_json::Value = serde_json::from_slice(&out.stderr).expect("json error on stderr");
    assert!(v["error"]["message"].is_string());
    v["error"]["kind"].clone()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn pipeline_writes_every_artifact_and_echoes_config() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let (g, pre, ft, suite) = (d.join("g"), d.join("p"), d.join("f"), d.join("s"));
    let data = g.join("dataset.jsonl");
    ok(&["generate", "--out", p(&g), "--n-train", "500", "--n-test", "200", "--n-control", "500", "--seed", "4"]);
    ok(&["pretrain", "--data", p(&data), "--out", p(&pre), "--epochs", "3"]);
    let ck = pre.join("checkpoint.json");
    let summary = ok(&[
        "finetune", "--data", p(&data), "--checkpoint", p(&ck), "--out", p(&ft), "--method", "hint", "--variant",
        "fixed-random", "--epochs", "2",
    ]);
    assert!(summary["reporting_epoch"].as_u64().unwrap() >= 1);
    ok(&[
        "suite", "--data", p(&data), "--out", p(&suite), "--seeds", "2", "--only", "zero_out_fixed_0.01",
        "--pretrain-epochs", "3", "--subset-count", "10",
    ]);

    for (dir, files) in [
        (&g, &["dataset.jsonl", "config.json"][..]),
        (&pre, &["checkpoint.json", "predictions.csv", "log.csv", "config.json"]),
        (&ft, &["checkpoint.json", "predictions.csv", "log.csv", "config.json", "epochs/predictions_epoch2.csv"]),
        (&suite, &["report.json", "report.csv", "report.md", "predictions.csv", "config.json"]),
    ] {
        for f in files {
            assert!(dir.join(f).exists(), "missing {}", dir.join(f).display());
        }
    }

    let cfg: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(ft.join("config.json")).unwrap()).unwrap();
    assert_eq!(cfg["finetune"]["cue_variant"], "fixed_random");
    assert_eq!(cfg["finetune"]["epochs"], 2);
    let gen: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(g.join("config.json")).unwrap()).unwrap();
    assert_eq!(gen["dataset"]["n_train"], 500);

    // The echoed config reproduces the run.
    let again = d.join("s2");
    ok(&["suite", "--config", p(&suite.join("config.json")), "--out", p(&again)]);
    assert_eq!(std::fs::read(suite.join("report.json")).unwrap(), std::fs::read(again.join("report.json")).unwrap());

    let rendered = d.join("r");
    ok(&["report", "--report", p(&suite.join("report.json")), "--out", p(&rendered)]);
    assert_eq!(std::fs::read(suite.join("report.md")).unwrap(), std::fs::read(rendered.join("report.md")).unwrap());

    let preds_path = pre.join("predictions.csv");
    let preds = p(&preds_path);
    let stats = ok(&["stats", "--a", preds, "--b", preds, "--subsets", "10", "--out", p(&d.join("st"))]);
    assert_eq!(stats["comparison"]["welch"]["p"], 1.0);
    assert_eq!(stats["comparison"]["overlap"], 100.0);
    assert!(d.join("st/stats.json").exists());
}

#[test]
fn failures_exit_nonzero_with_error_object() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["pretrain", "--data", p(&dir.path().join("missing.jsonl")), "--out", p(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_object(&out), "io");

    let out = run(&["generate", "--out", p(dir.path()), "--k", "2"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_object(&out), "config");

    let out = run(&["pretrain", "--out", p(dir.path())]);
    assert_eq!(error_object(&out), "config");

    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{ not json").unwrap();
    let out = run(&["suite", "--config", p(&bad)]);
    assert_eq!(error_object(&out), "config");

    let out = run(&["finetune", "--method", "dropout"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_object(&out), "usage");

    assert!(run(&["--help"]).status.success());
}
