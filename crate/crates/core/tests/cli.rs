use std::fmt::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn s4t(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_s4t"))
        .args(args)
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = s4t(args);
    assert!(
        out.status.success(),
        "s4t {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

/// The quick config shrunk further, writing under `dir`.
fn tiny_config(dir: &Path) -> PathBuf {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/quick.json");
    let mut cfg: Value = serde_json::from_str(&std::fs::read_to_string(root).unwrap()).unwrap();
    cfg["train"]["iterations"] = 10.into();
    cfg["splits"] = serde_json::json!({"source_train": 16, "source_val": 8, "target": 16});
    cfg["adapt"]["steps"] = 2.into();
    cfg["outdir"] = dir.join("run").to_str().unwrap().into();
    let path = dir.join("tiny.json");
    std::fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn adapt_without_objective_has_zero_gain() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    let cfg = cfg.to_str().unwrap();
    ok(&["train", "--config", cfg]);
    ok(&["adapt", "--config", cfg, "--objective", "none"]);
    let seed_dir = tmp.path().join("run/seed-0");
    assert!(seed_dir.join("checkpoint.json").is_file());
    let csv = seed_dir.join("none/trajectory.csv");
    let svg = std::fs::read_to_string(seed_dir.join("none/plot.svg")).unwrap();
    assert!(svg.starts_with("<svg"));

    let report = tmp.path().join("metrics.json");
    ok(&[
        "metrics",
        csv.to_str().unwrap(),
        "--out",
        report.to_str().unwrap(),
    ]);
    let r = &read_json(&report)[0];
    assert_eq!(r["delta_best"].as_f64(), Some(0.0));
    assert_eq!(r["delta_final"].as_f64(), Some(0.0));
    assert_eq!(r["steps"].as_u64(), Some(3));
    assert_eq!(
        read_json(&tmp.path().join("run/config.json"))["seeds"],
        serde_json::json!([0])
    );
}

#[test]
fn sweep_mask_writes_every_ratio_and_a_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    ok(&[
        "sweep-mask",
        "--config",
        cfg.to_str().unwrap(),
        "--strategies",
        "random,non-overlap",
    ]);
    let dir = tmp.path().join("run/seed-0/sweep");
    let ratios: Vec<String> = std::fs::read_dir(dir.join("ratio"))
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".csv"))
        .collect();
    assert_eq!(ratios.len(), 6, "{ratios:?}");
    assert!(dir.join("ratio/r0.70.csv").is_file());
    let summary = read_json(&dir.join("summary.json"));
    let entries = summary.as_array().unwrap();
    assert_eq!(entries.len(), 8);
    // 0.7 is infeasible for disjoint masks over 4 tasks; the sweep falls back.
    let no = entries
        .iter()
        .find(|e| e["strategy"] == "non-overlap")
        .unwrap();
    assert_eq!(no["ratio"].as_f64(), Some(0.25));
    assert!(entries.iter().all(|e| e["error"].is_null()));
}

#[test]
fn metrics_on_a_hand_written_trajectory() {
    let tmp = tempfile::tempdir().unwrap();
    // Two tasks of 25 steps peaking at steps 10 and 20.
    let mut text = String::from(
        "# s4t-trajectory v1\nstep,batch,inner_step,task,metric,value,loss_total,loss_ttt\n",
    );
    text += "# baseline,0,a,miou,0.5\n# baseline,0,b,rmse,2\n";
    for k in 0..25 {
        let a = 0.5 + 0.01 * (10.0 - (k as f64 + 1.0 - 10.0).abs());
        let b = 2.0 - 0.01 * (20.0 - (k as f64 + 1.0 - 20.0).abs());
        writeln!(text, "{k},0,{k},a,miou,{a},0,0").unwrap();
        writeln!(text, "{k},0,{k},b,rmse,{b},0,0").unwrap();
    }
    let csv = tmp.path().join("hand.csv");
    std::fs::write(&csv, text).unwrap();
    let report = tmp.path().join("hand.json");
    ok(&[
        "metrics",
        csv.to_str().unwrap(),
        "--out",
        report.to_str().unwrap(),
    ]);
    let r = &read_json(&report)[0];
    assert_eq!(r["sv"].as_f64(), Some(5.0));
    assert_eq!(r["tasks"][0]["peak_step"].as_u64(), Some(10));
    assert_eq!(r["tasks"][1]["peak_step"].as_u64(), Some(20));

    let svg = tmp.path().join("hand.svg");
    ok(&[
        "plot",
        csv.to_str().unwrap(),
        "-o",
        svg.to_str().unwrap(),
        "--title",
        "hand",
    ]);
    assert_eq!(
        std::fs::read_to_string(svg)
            .unwrap()
            .matches("<polyline")
            .count(),
        3
    );
}

#[test]
fn bad_invocations_fail_cleanly() {
    assert_eq!(s4t(&["frobnicate"]).status.code(), Some(2));
    let out = s4t(&["metrics", "/definitely/missing.csv"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));

    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    let mut v = read_json(&cfg);
    v["adapt"]["mask_ratio"] = 1.5.into();
    std::fs::write(&cfg, v.to_string()).unwrap();
    let out = s4t(&["gen-data", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
}
