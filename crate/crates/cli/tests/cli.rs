use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tvpvar::bench::{read_bench_csv, write_bench_csv, BenchMetadata, BenchTable};

fn tvpvar(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tvpvar")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = tvpvar(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn error_line(out: &Output) -> Value {
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    serde_json::from_str(stderr.lines().last().expect("an error line")).expect("error line is JSON")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn small_dataset(dir: &Path) -> std::path::PathBuf {
    let cfg = dir.join("synth.json");
    fs::write(&cfg, r#"{"q": 2, "n": 6, "T": 40}"#).unwrap();
    let data = dir.join("data.csv");
    ok(&["synth", "--config", s(&cfg), "--out", s(&data), "--seed", "4"]);
    data
}

#[test]
fn synth_then_vi_writes_trajectory() {
    let tmp = tempfile::tempdir().unwrap();
    let data = small_dataset(tmp.path());
    let out = tmp.path().join("vi");
    ok(&["infer", "--method", "vi", "--window", "1", "--data", s(&data), "--out-dir", s(&out)]);

    let beta = fs::read_to_string(out.join("beta.csv")).unwrap();
    let mut lines = beta.lines();
    assert_eq!(lines.next().unwrap(), "step,beta_1,beta_2,beta_3,beta_4,beta_5,beta_6");
    assert_eq!(lines.clone().count(), 40);
    assert!(lines.all(|l| l.split(',').count() == 7));

    let forecasts = fs::read_to_string(out.join("forecasts.csv")).unwrap();
    assert!(forecasts.starts_with("step,"));

    let report: Value = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["method"], "vi");
    assert_eq!(report["config"]["window"], 1);
    assert_eq!(report["iterations"].as_array().unwrap().len(), 40);
    assert!(report["mse"].as_f64().unwrap() >= 0.0);
    assert!(report["wall_time_secs"].as_f64().unwrap() >= 0.0);
}

#[test]
fn synth_report_echoes_config_and_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let data = small_dataset(tmp.path());
    let report: Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("data.csv.report.json")).unwrap()).unwrap();
    assert_eq!(report["seed"], 4);
    assert_eq!(report["config"]["T"], 40);
    assert_eq!(report["config"]["sigma_obs"], 0.03);
    assert_eq!(report["rng"], "chacha20");
    assert!(data.exists());
}

#[test]
fn kalman_rejects_window() {
    let tmp = tempfile::tempdir().unwrap();
    let data = small_dataset(tmp.path());
    let out = tvpvar(&["infer", "--method", "kalman", "--window", "2", "--data", s(&data), "--out-dir", s(tmp.path())]);
    let err = error_line(&out);
    assert_eq!(err["error"], "config");
    assert!(err["message"].as_str().unwrap().contains("window is a VI-only option"));
}

#[test]
fn kalman_and_vi_agree_on_shapes() {
    let tmp = tempfile::tempdir().unwrap();
    let data = small_dataset(tmp.path());
    let k = tmp.path().join("k");
    let v = tmp.path().join("v");
    ok(&["infer", "--method", "kalman", "--data", s(&data), "--out-dir", s(&k)]);
    ok(&["infer", "--method", "vi", "--window", "3", "--data", s(&data), "--out-dir", s(&v)]);
    let rows = |p: &Path| fs::read_to_string(p).unwrap().lines().count();
    assert_eq!(rows(&k.join("beta.csv")), rows(&v.join("beta.csv")));
    assert_eq!(rows(&k.join("forecasts.csv")), 41);
}

#[test]
fn unknown_flag_and_subcommand_fail() {
    let out = tvpvar(&["synth", "--bogus", "1"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    assert!(!tvpvar(&["frobnicate"]).status.success());
}

#[test]
fn missing_data_file_is_io_error() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nope.csv");
    let out = tvpvar(&["infer", "--method", "vi", "--data", s(&missing), "--out-dir", s(tmp.path())]);
    assert_eq!(error_line(&out)["error"], "io");
}

#[test]
fn bad_config_key_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.json");
    fs::write(&cfg, r#"{"q": 2, "n": 6, "colour": "red"}"#).unwrap();
    let out = tvpvar(&["synth", "--config", s(&cfg), "--out", s(&tmp.path().join("d.csv"))]);
    assert_eq!(error_line(&out)["error"], "config");
}

#[test]
fn bench_default_grid_round_trips() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("bench.csv");
    ok(&["bench", "--out", s(&out), "--seed", "1"]);
    let text = fs::read_to_string(&out).unwrap();
    let rows = read_bench_csv(text.as_bytes()).unwrap();
    // 3 Kalman rows plus 3 x 3 VI rows
    assert_eq!(rows.len(), 12);
    assert!(rows.iter().all(|r| r.error.is_none() && r.median_seconds > 0.0 && r.mse >= 0.0));

    let report: Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("bench.csv.report.json")).unwrap()).unwrap();
    let metadata: BenchMetadata = serde_json::from_value(report["metadata"].clone()).unwrap();
    assert_eq!(metadata.t, 200);
    let mut again = Vec::new();
    write_bench_csv(&BenchTable { rows, metadata }, &mut again).unwrap();
    assert_eq!(String::from_utf8(again).unwrap(), text);
}

#[test]
fn train_forecast_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("synth.json");
    fs::write(&cfg, r#"{"q": 1, "n": 2, "T": 80}"#).unwrap();
    let data = tmp.path().join("data.csv");
    ok(&["synth", "--config", s(&cfg), "--out", s(&data)]);
    let inferred = tmp.path().join("k");
    ok(&["infer", "--method", "kalman", "--data", s(&data), "--out-dir", s(&inferred)]);

    let net_cfg = tmp.path().join("net.json");
    fs::write(&net_cfg, r#"{"hidden": 4, "lookback": 4, "ar_lags": 2, "epochs": 5}"#).unwrap();
    let params = tmp.path().join("net.txt");
    let beta = inferred.join("beta.csv");
    ok(&["train-net", "--beta", s(&beta), "--config", s(&net_cfg), "--out", s(&params), "--seed", "2"]);
    let report: Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("net.txt.report.json")).unwrap()).unwrap();
    assert_eq!(report["config"]["input_dim"], 2);
    assert_eq!(report["report"]["train_loss"].as_array().unwrap().len(), 5);

    let fc = tmp.path().join("fc.csv");
    ok(&["forecast", "--params", s(&params), "--seed-window", s(&beta), "--steps", "3", "--out", s(&fc)]);
    let text = fs::read_to_string(&fc).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 4);
    assert_eq!(lines[0], "step,beta_1,beta_2");
    assert!(lines[1].starts_with("80,"));

    // a learned forward model drives the VI engine
    let vi = tmp.path().join("vi");
    ok(&["infer", "--method", "vi", "--data", s(&data), "--out-dir", s(&vi), "--forward-net", s(&params)]);
    let bad = tvpvar(&["infer", "--method", "kalman", "--data", s(&data), "--out-dir", s(&vi), "--forward-net", s(&params)]);
    assert_eq!(error_line(&bad)["error"], "config");
}

#[test]
fn ingest_writes_panel_metadata_and_var_data() {
    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures/ingest");
    let tmp = tempfile::tempdir().unwrap();
    let panel = tmp.path().join("panel.csv");
    let var = tmp.path().join("var.csv");
    ok(&[
        "ingest",
        "--off-chain",
        s(&fixtures.join("off_chain.csv")),
        "--on-chain",
        s(&fixtures.join("on_chain.csv")),
        "--freq",
        "3600",
        "--target",
        "returns",
        "--regressors",
        "amount_in,amount_out",
        "--out",
        s(&panel),
        "--var-out",
        s(&var),
    ]);
    let expected = fs::read_to_string(fixtures.join("expected_forward_fill.csv")).unwrap();
    assert_eq!(fs::read_to_string(&panel).unwrap(), expected);
    let meta = fs::read_to_string(tmp.path().join("panel.csv.meta")).unwrap();
    assert!(meta.contains("frequency=3600\n"));
    assert!(meta.contains("missing_policy=forward_fill\n"));
    assert!(meta.contains("mean.returns="));
    let header = fs::read_to_string(&var).unwrap().lines().next().unwrap().to_string();
    assert_eq!(header, "step,y_1,x_1,x_2,x_3,x_4");

    let out = tvpvar(&[
        "ingest",
        "--off-chain",
        s(&fixtures.join("off_chain.csv")),
        "--on-chain",
        s(&fixtures.join("on_chain.csv")),
        "--target",
        "returns",
        "--policy",
        "error",
        "--out",
        s(&panel),
    ]);
    let err = error_line(&out);
    assert_eq!(err["error"], "missing_bucket");
}
