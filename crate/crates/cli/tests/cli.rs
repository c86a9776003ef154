use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use stream_dse::dse::DesignPlan;
use stream_dse::estimator::PerformanceReport;

fn fixture(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures").join(rel)
}

fn model(name: &str) -> String {
    fixture(&format!("models/{name}.json")).display().to_string()
}

fn device(name: &str) -> String {
    fixture(&format!("devices/{name}.json")).display().to_string()
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stream-dse")).args(args).output().expect("spawn stream-dse")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn dse(dir: &Path, m: &str, d: &str) -> PathBuf {
    let out = dir.join(m);
    ok(&["dse", "--model", &model(m), "--device", &device(d), "--out", out.to_str().unwrap()]);
    out
}

#[test]
fn dse_writes_outputs_that_roundtrip() {
    let tmp = tempfile::tempdir().unwrap();
    let out = dse(tmp.path(), "unet", "u200");
    for f in ["plan.json", "report.json", "report.txt", "audit.jsonl"] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
    let text = std::fs::read_to_string(out.join("plan.json")).unwrap();
    let plan = DesignPlan::from_json(&text).unwrap();
    assert_eq!(plan.to_json().unwrap(), text);
    for line in std::fs::read_to_string(out.join("audit.jsonl")).unwrap().lines() {
        serde_json::from_str::<serde_json::Value>(line).unwrap();
    }

    let plan_path = out.join("plan.json");
    let est = ok(&["estimate", "--model", &model("unet"), "--device", &device("u200"), "--plan", plan_path.to_str().unwrap(), "--batch", "4"]);
    let perf: PerformanceReport = serde_json::from_str(&est).unwrap();
    assert_eq!(perf, plan.performance_at(4).unwrap());
}

#[test]
fn dse_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let pa = dse(a.path(), "diamond", "zcu102");
    let pb = dse(b.path(), "diamond", "zcu102");
    for f in ["plan.json", "audit.jsonl"] {
        assert_eq!(std::fs::read(pa.join(f)).unwrap(), std::fs::read(pb.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn missing_device_is_input_error() {
    let out = run(&["dse", "--model", &model("linear"), "--device", "/no/such/device.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/no/such/device.json"));
}

#[test]
fn zero_batch_is_rejected() {
    let out = run(&["dse", "--model", &model("linear"), "--device", &device("zcu102"), "--batch", "0"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_axis_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let plan = dse(tmp.path(), "linear", "zcu102").join("plan.json");
    let out = run(&["sweep", "--model", &model("linear"), "--device", &device("zcu102"), "--plan", plan.to_str().unwrap(), "--axis", "depth"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn undersized_device_is_infeasible() {
    let tmp = tempfile::tempdir().unwrap();
    let mut dev: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(device("zcu102")).unwrap()).unwrap();
    dev["dsp"] = 1.into();
    dev["lut"] = 100.into();
    dev["bram18k"] = 1.into();
    let path = tmp.path().join("tiny.json");
    std::fs::write(&path, dev.to_string()).unwrap();
    let out = run(&["dse", "--model", &model("unet"), "--device", path.to_str().unwrap(), "--out", tmp.path().join("o").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(!tmp.path().join("o/plan.json").exists());
}

#[test]
fn validate_linear_has_no_depth_deviation() {
    let tmp = tempfile::tempdir().unwrap();
    let plan = dse(tmp.path(), "linear", "zcu102").join("plan.json");
    let json = tmp.path().join("val.json");
    ok(&["validate", "--model", &model("linear"), "--device", &device("zcu102"), "--plan", plan.to_str().unwrap(), "--out", json.to_str().unwrap()]);
    let rows: Vec<serde_json::Value> = serde_json::from_str(&std::fs::read_to_string(json).unwrap()).unwrap();
    assert!(!rows.is_empty());
    for r in rows {
        assert_eq!(r["depth_dev_pct"].as_f64(), Some(0.0), "{r}");
    }
}

fn csv_column(csv: &str, name: &str) -> Vec<f64> {
    let mut lines = csv.lines();
    let col = lines.next().unwrap().split(',').position(|h| h == name).unwrap();
    lines.map(|l| l.split(',').nth(col).unwrap().parse().unwrap()).collect()
}

#[test]
fn batch_sweep_share_falls() {
    let tmp = tempfile::tempdir().unwrap();
    let plan = dse(tmp.path(), "unet3d", "u200").join("plan.json");
    let csv_path = tmp.path().join("batch.csv");
    ok(&[
        "sweep", "--model", &model("unet3d"), "--device", &device("u200"), "--plan", plan.to_str().unwrap(),
        "--axis", "batch", "--out", csv_path.to_str().unwrap(), "--gnuplot",
    ]);
    let csv = std::fs::read_to_string(&csv_path).unwrap();
    let share = csv_column(&csv, "reconfig_share");
    assert_eq!(share.len(), 4);
    assert!(share.windows(2).all(|w| w[1] < w[0]), "{share:?}");
    assert!(csv_path.with_extension("gp").is_file());
}

#[test]
fn ratio_sweep_without_evictions_is_flat() {
    let tmp = tempfile::tempdir().unwrap();
    let plan = dse(tmp.path(), "linear", "zcu102").join("plan.json");
    let csv = ok(&["sweep", "--model", &model("linear"), "--device", &device("zcu102"), "--plan", plan.to_str().unwrap(), "--axis", "ratio"]);
    let macs = csv_column(&csv, "macs_per_s");
    assert_eq!(macs.len(), 6);
    assert!(macs.iter().all(|m| *m == macs[0]), "{macs:?}");
}

#[test]
fn simulate_dumps_waveforms() {
    let tmp = tempfile::tempdir().unwrap();
    let plan = dse(tmp.path(), "diamond", "zcu102").join("plan.json");
    let wave = tmp.path().join("wave");
    let stdout = ok(&[
        "simulate", "--model", &model("diamond"), "--device", &device("zcu102"), "--plan", plan.to_str().unwrap(),
        "--sim-shape", "8x16x16", "--dump-waveform", wave.to_str().unwrap(),
    ]);
    assert!(stdout.starts_with("subgraph 0:"));
    let csv = std::fs::read_to_string(wave.join("subgraph_0.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("cycle,vertex,event"));
    let bad = run(&["simulate", "--model", &model("diamond"), "--device", &device("zcu102"), "--plan", plan.to_str().unwrap(), "--sim-shape", "8xQ"]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn codec_stats_reports_both_schemes() {
    let stdout = ok(&["codec-stats", "--model", &model("linear")]);
    assert!(stdout.contains("activations rle"), "{stdout}");
    assert!(stdout.contains("activations huffman"), "{stdout}");
    let out = run(&["codec-stats"]);
    assert_eq!(out.status.code(), Some(2));
}

/// Evicting the longest UNet skip on a VCU1525 frees about 926 BRAM18K.
#[test]
fn unet_long_skip_eviction_saving() {
    let tmp = tempfile::tempdir().unwrap();
    let plan: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dse(tmp.path(), "unet", "vcu1525").join("plan.json")).unwrap()).unwrap();
    let ev = plan["subgraphs"]
        .as_array()
        .unwrap()
        .iter()
        .flat_map(|s| s["evictions"].as_array().unwrap())
        .find(|e| e["label"] == "Relu_3→Concat_47")
        .expect("long skip evicted");
    let words = ev["delta_d"].as_u64().unwrap();
    let bram = (words * plan["word_length"].as_u64().unwrap()) as f64 / (18.0 * 1024.0);
    assert!((bram - 926.0).abs() <= 0.10 * 926.0, "saving {bram:.0} BRAM18K ({words} words)");
}
