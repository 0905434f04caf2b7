use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use codex_cli::io::{read_array, read_json, write_array, Manifest, Sidecar};
use codex_cli::pipeline::SweepRow;
use ndarray::Array2;
use serde_json::{json, Value};

fn codex(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_codex")).args(args).output().expect("binary runs")
}

fn status(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn small_config(extra: Value) -> Value {
    let mut config = json!({
        "plan": {"k": 4, "m": 8, "n": 1, "m_theta": 20},
        "code": {"kind": "boxcar"},
        "lambda0": 10000.0,
        "seed": 5,
        "geometry": {"n_side": 16},
        "method": "mbir",
        "mbir": {"iterations": 30},
        "codex": {"outer_iterations": 5, "init": {"kind": "mbir", "iterations": 5}},
        "phantom": {"kind": "disk"}
    });
    for (k, v) in extra.as_object().unwrap() {
        config[k] = v.clone();
    }
    config
}

fn write_config(dir: &Path, name: &str, config: &Value) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, serde_json::to_string_pretty(config).unwrap()).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn validate_config_reports_errors_with_status_two() {
    let dir = tempfile::tempdir().unwrap();
    let good = write_config(dir.path(), "good.json", &small_config(json!({})));
    let out = codex(&["validate-config", "--config", s(&good)]);
    assert_eq!(status(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let echoed: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(echoed["plan"]["k"], 4);

    let typo = write_config(dir.path(), "typo.json", &small_config(json!({"lamda0": 1})));
    assert_eq!(status(&codex(&["validate-config", "--config", s(&typo)])), 2);
    let bad_code = write_config(dir.path(), "code.json", &small_config(json!({"code": {"kind": "raskar"}})));
    assert_eq!(status(&codex(&["validate-config", "--config", s(&bad_code)])), 2);
    assert_eq!(status(&codex(&["validate-config", "--config", s(&dir.path().join("missing.json"))])), 2);
    assert_eq!(status(&codex(&["simulate", "--config", s(&good)])), 2, "no output directory");
}

#[test]
fn simulate_and_reconstruct_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "exp.json", &small_config(json!({})));
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let run = codex(&["simulate", "--config", s(&config), "--out", s(out)]);
        assert_eq!(status(&run), 0, "{}", String::from_utf8_lossy(&run.stderr));
    }
    for file in ["counts.f32", "y.f32", "y.json", "phantom.f32", "y.pgm"] {
        assert_eq!(std::fs::read(a.join(file)).unwrap(), std::fs::read(b.join(file)).unwrap(), "{file}");
    }
    let (y, side) = read_array(&a.join("y.f32")).unwrap();
    assert_eq!(y.nrows(), 20);
    assert_eq!(side.role, "view");
    assert_eq!(side.lambda0, Some(1e4));
    assert_eq!(side.angles.unwrap().len(), 20);
    let manifest: Manifest = read_json(&a.join("manifest.json")).unwrap();
    assert_eq!(manifest.seed, 5);
    assert_eq!(manifest.config_sha256.len(), 64);
    assert!(manifest.files.iter().all(|f| a.join(f).exists()));

    let other = codex(&["simulate", "--config", s(&config), "--out", s(&dir.path().join("c")), "--seed", "6"]);
    assert_eq!(status(&other), 0);
    assert_ne!(std::fs::read(a.join("counts.f32")).unwrap(), std::fs::read(dir.path().join("c/counts.f32")).unwrap());

    let r1 = dir.path().join("r1");
    let r2 = dir.path().join("r2");
    for out in [&r1, &r2] {
        let run = codex(&["reconstruct", "--config", s(&config), "--data", s(&a), "--out", s(out)]);
        assert_eq!(status(&run), 0, "{}", String::from_utf8_lossy(&run.stderr));
    }
    let m1 = std::fs::read_to_string(r1.join("metrics.json")).unwrap();
    assert_eq!(m1, std::fs::read_to_string(r2.join("metrics.json")).unwrap());
    let metrics: Value = serde_json::from_str(&m1).unwrap();
    assert!(metrics["nrmse"].as_f64().unwrap() < 0.5);
    assert!(r1.join("costs.csv").exists() && r1.join("recon.pgm").exists());
}

#[test]
fn codex_writes_residual_history_and_ifbp_runs() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let sim = write_config(dir.path(), "sim.json", &small_config(json!({})));
    assert_eq!(status(&codex(&["simulate", "--config", s(&sim), "--out", s(&data)])), 0);

    let cfg = write_config(dir.path(), "codex.json", &small_config(json!({"method": "codex"})));
    let out = dir.path().join("codex");
    let run = codex(&["reconstruct", "--config", s(&cfg), "--data", s(&data), "--out", s(&out)]);
    assert_eq!(status(&run), 0, "{}", String::from_utf8_lossy(&run.stderr));
    let csv = std::fs::read_to_string(out.join("residuals.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("iteration,primal,dual"));
    assert_eq!(csv.lines().count(), 6);

    let cfg = write_config(dir.path(), "ifbp.json", &small_config(json!({"method": "ifbp"})));
    let run = codex(&["reconstruct", "--config", s(&cfg), "--data", s(&data), "--out", s(&dir.path().join("ifbp"))]);
    assert_eq!(status(&run), 0, "{}", String::from_utf8_lossy(&run.stderr));
}

#[test]
fn reconstruct_rejects_data_from_another_plan() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let sim = write_config(dir.path(), "sim.json", &small_config(json!({})));
    assert_eq!(status(&codex(&["simulate", "--config", s(&sim), "--out", s(&data)])), 0);
    let other = write_config(dir.path(), "other.json", &small_config(json!({"code": {"kind": "snapshot"}})));
    let run = codex(&["reconstruct", "--config", s(&other), "--data", s(&data), "--out", s(&dir.path().join("r"))]);
    assert_eq!(status(&run), 2);
    assert!(String::from_utf8_lossy(&run.stderr).contains("differ"));
}

#[test]
fn bin_codes_dense_data() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "exp.json", &small_config(json!({"lambda0": null})));
    let dense = Array2::from_elem((31, 23), 0.75);
    write_array(dir.path(), "dense", &dense, &Sidecar::new("micro", dense.dim())).unwrap();
    let out = dir.path().join("binned");
    let run = codex(&["bin", "--config", s(&config), "--input", s(&dir.path().join("dense.f32")), "--out", s(&out)]);
    assert_eq!(status(&run), 0, "{}", String::from_utf8_lossy(&run.stderr));
    let (y, _) = read_array(&out.join("y.f32")).unwrap();
    assert_eq!(y.dim(), (20, 23));
    assert!(y.iter().all(|v| (v - 0.75).abs() < 1e-6));

    let short = Array2::<f64>::zeros((30, 23));
    write_array(dir.path(), "short", &short, &Sidecar::new("micro", short.dim())).unwrap();
    let run = codex(&["bin", "--config", s(&config), "--input", s(&dir.path().join("short.f32")), "--out", s(&out)]);
    assert_eq!(status(&run), 2);
}

#[test]
fn non_finite_data_is_a_numerical_failure() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "exp.json", &small_config(json!({"lambda0": null})));
    let mut dense = Array2::from_elem((31, 23), 0.5);
    dense[[3, 4]] = f64::NAN;
    write_array(dir.path(), "dense", &dense, &Sidecar::new("micro", dense.dim())).unwrap();
    let data = dir.path().join("binned");
    let run = codex(&["bin", "--config", s(&config), "--input", s(&dir.path().join("dense.f32")), "--out", s(&data)]);
    assert_eq!(status(&run), 0);
    let run = codex(&["reconstruct", "--config", s(&config), "--data", s(&data), "--out", s(&data)]);
    assert_eq!(status(&run), 3, "{}", String::from_utf8_lossy(&run.stderr));
}

#[test]
fn sweep_records_failing_cells() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(json!({
        "sweep": {"codes": ["boxcar", "raskar"], "code_lengths": [4], "lambda0": [1000.0, null], "seeds": 2}
    }));
    let path = write_config(dir.path(), "sweep.json", &config);
    let out = dir.path().join("sweep");
    let run = codex(&["sweep", "--config", s(&path), "--out", s(&out), "--threads", "2"]);
    assert_eq!(status(&run), 0, "{}", String::from_utf8_lossy(&run.stderr));
    let rows: Vec<SweepRow> = read_json(&out.join("sweep.json")).unwrap();
    assert_eq!(rows.len(), 4);
    for row in &rows {
        let raskar = serde_json::to_value(row.code).unwrap() == "raskar";
        assert_eq!(row.error.is_some(), raskar, "{row:?}");
        assert_eq!(row.rmse.is_some(), !raskar);
    }
    let csv = std::fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);
    assert!(csv.lines().any(|l| l.starts_with("boxcar,4,") && l.contains(",inf,")));
}

#[test]
fn metrics_measures_mtf_on_star_phantoms() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        "exp.json",
        &small_config(json!({"geometry": {"n_side": 64}, "phantom": {"kind": "siemens_star", "spokes": 8}})),
    );
    let image = codex_core::phantom::make_phantom(codex_core::phantom::PhantomKind::SiemensStar { spokes: 8 }, 64, 0).unwrap();
    write_array(dir.path(), "img", &image, &Sidecar::new("image", image.dim())).unwrap();
    let out = dir.path().join("m");
    let run = codex(&["metrics", "--config", s(&config), "--input", s(&dir.path().join("img.f32")), "--out", s(&out)]);
    assert_eq!(status(&run), 0, "{}", String::from_utf8_lossy(&run.stderr));
    let metrics: Value = serde_json::from_slice(&run.stdout).unwrap();
    assert!(metrics["nrmse"].as_f64().unwrap() < 1e-6);
    let csv = std::fs::read_to_string(out.join("mtf.csv")).unwrap();
    assert!(csv.lines().skip(1).any(|l| l.starts_with("far,tangential,")));
}
