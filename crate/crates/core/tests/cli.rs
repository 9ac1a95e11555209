use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use kzcoarse::cli::{self, config::*, read_manifest, verify_run, RunStatus};
use serde_json::Value;

fn kzcoarse(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kzcoarse")).args(args).env_remove("KZCOARSE_OUT").output().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

fn issues(text: &str) -> Vec<ConfigIssue> {
    parse_config(text, Path::new(".")).unwrap_err().0
}

#[test]
fn minimal_ising_config_gets_defaults() {
    let cfg = parse_config(
        r#"{"engine": "ising2d", "params": {"task": "protocol", "lx": 16, "ly": 16,
            "protocol": {"initial": {"type": "random"}, "segments": [{"type": "hold", "temperature": 1.0, "duration": 50}]}}}"#,
        Path::new("."),
    )
    .unwrap();
    assert_eq!(cfg.schema_version, SCHEMA_VERSION);
    assert_eq!(cfg.seeds, vec![0]);
    assert!(cfg.snapshots.is_empty() && cfg.output.is_none());
    let EngineParams::Ising2d(IsingParams::Protocol { length, write_snapshots, .. }) = cfg.engine else {
        panic!("wrong engine");
    };
    assert_eq!(length, LengthEstimator::Walls);
    assert!(write_snapshots);
}

#[test]
fn rydberg_site_cap_is_named() {
    let errs = issues(
        r#"{"engine": "rydberg", "params": {"geometry": {"rows": 5, "cols": 5},
            "hamiltonian": {"omega": 1.0, "delta": 1.0, "rb_over_a": 1.1},
            "schedule": [{"duration": 1.0, "omega": [1.0, 1.0], "delta": [1.0, 1.0]}]}}"#,
    );
    assert!(errs.iter().any(|e| e.path == "params.geometry" && e.message.contains("24")), "{errs:?}");
}

#[test]
fn unknown_keys_are_rejected() {
    let errs = issues(r#"{"engine": "scaling", "params": {"task": "exponent"}, "sedes": [1]}"#);
    assert!(errs.iter().any(|e| e.path == "sedes"), "{errs:?}");
    let errs = issues(r#"{"engine": "scaling", "params": {"task": "exponent", "pp": 2}}"#);
    assert!(errs.iter().any(|e| e.path.starts_with("params") && e.message.contains("pp")), "{errs:?}");
}

#[test]
fn errors_are_aggregated() {
    let errs = issues(r#"{"engine": "tfim1d", "seeds": [3, 3], "snapshots": [-1], "params": {"l": 0, "taus": [1]}, "x": 1}"#);
    let paths: Vec<&str> = errs.iter().map(|e| e.path.as_str()).collect();
    for p in ["x", "seeds", "snapshots[0]"] {
        assert!(paths.contains(&p), "{paths:?}");
    }
    assert!(paths.iter().any(|p| p.starts_with("params")), "{paths:?}");
}

#[test]
fn missing_referenced_file_fails_validation() {
    let errs = issues(r#"{"engine": "collapse", "params": {"curves": "no/such/file.csv"}}"#);
    assert!(errs.iter().any(|e| e.message.contains("does not exist")), "{errs:?}");
}

#[test]
fn exponent_run_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "exp.json", r#"{"engine": "scaling", "params": {"task": "exponent", "class": "ising-2+1d", "p": 1}}"#);
    let out = dir.path().join("run");
    let o = kzcoarse(&["exponent", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let summary: Value = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["schema_version"], 1);
    assert!((summary["results"]["exponent"].as_f64().unwrap() - 0.1855).abs() < 1e-12);

    let m = read_manifest(&out).unwrap();
    assert_eq!(m.status, RunStatus::Complete);
    assert_eq!(m.config_sha256, cli::output::sha256_hex(fs::read(&cfg).unwrap().as_slice()));
    assert_eq!(m.files.len(), 1);
}

#[test]
fn quick_mode_prints_to_stdout() {
    let o = kzcoarse(&["exponent", "--p", "2"]);
    assert_eq!(o.status.code(), Some(0));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    let expect = -2.0 * 0.629 + (2.0 * 0.629 + 1.0) / 2.0;
    assert!((v["results"]["exponent"].as_f64().unwrap() - expect).abs() < 1e-12, "{v}");
}

fn file_hashes(dir: &Path) -> Vec<(String, String)> {
    read_manifest(dir).unwrap().files.into_iter().map(|f| (f.path, f.sha256)).collect()
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "quench.json",
        r#"{"engine": "ising2d", "seeds": [4, 5], "snapshots": [5, 20],
            "params": {"task": "protocol", "lx": 24, "ly": 16,
            "protocol": {"initial": {"type": "random"}, "segments": [{"type": "hold", "temperature": 1.2, "duration": 20}]}}}"#,
    );
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let o = kzcoarse(&["simulate", "--config", &cfg, "--out", out.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let ha = file_hashes(&a);
    assert!(ha.len() >= 6);
    assert_eq!(ha, file_hashes(&b));

    let c = dir.path().join("c");
    kzcoarse(&["simulate", "--config", &cfg, "--out", c.to_str().unwrap(), "--seed", "100"]);
    assert_eq!(read_manifest(&c).unwrap().seeds, vec![100, 101]);
    assert_ne!(ha, file_hashes(&c));
}

#[test]
fn tfim_sweep_fits_inverse_square_root() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "sweep.json", r#"{"engine": "tfim1d", "params": {"l": 400, "taus": [4, 8, 16, 32, 64, 128, 256]}}"#);
    let out = dir.path().join("sweep");
    let o = kzcoarse(&["simulate", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));

    let mut rdr = csv::Reader::from_path(out.join("tau_sweep.csv")).unwrap();
    assert_eq!(rdr.headers().unwrap().iter().take(2).collect::<Vec<_>>(), ["tau", "n"]);
    assert_eq!(rdr.records().count(), 7);
    let fit: Value = serde_json::from_str(&fs::read_to_string(out.join("fit.json")).unwrap()).unwrap();
    assert_eq!(fit["schema_version"], 1);
    let slope = fit["fit"]["exponent"].as_f64().unwrap();
    assert!((slope + 0.5).abs() < 0.03, "slope {slope}");
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write(dir.path(), "bad.json", r#"{"engine": "ising2d"}"#);
    let o = kzcoarse(&["simulate", "--config", &bad]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("params"));

    // valid schema, but the checkpoint holds a 2-site state for a 6-site array
    let mut ckpt = 2u64.to_le_bytes().to_vec();
    ckpt.extend(0f64.to_le_bytes());
    for re in [1.0f64, 0.0, 0.0, 0.0] {
        ckpt.extend(re.to_le_bytes());
        ckpt.extend(0f64.to_le_bytes());
    }
    fs::write(dir.path().join("two.bin"), ckpt).unwrap();
    let ryd = write(
        dir.path(),
        "ryd.json",
        r#"{"engine": "rydberg", "params": {"geometry": {"rows": 2, "cols": 3},
            "hamiltonian": {"omega": 1.0, "delta": 1.0, "rb_over_a": 1.1},
            "schedule": [{"duration": 1.0, "omega": [1.0, 1.0], "delta": [1.0, 1.0]}],
            "initial": {"type": "checkpoint", "path": "two.bin"}}}"#,
    );
    let out = dir.path().join("ryd");
    let o = kzcoarse(&["simulate", "--config", &ryd, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("read checkpoint"));
    let m = read_manifest(&out).unwrap();
    assert_eq!(m.status, RunStatus::Failed);
    assert_eq!(m.failed_stage.as_deref(), Some("read checkpoint"));

    // wrong verb for the engine
    let exp = write(dir.path(), "exp.json", r#"{"engine": "scaling", "params": {"task": "exponent"}}"#);
    assert_eq!(kzcoarse(&["simulate", "--config", &exp]).status.code(), Some(2));
}

#[test]
fn report_detects_tampering() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "s.json", r#"{"engine": "scaling", "params": {"task": "eval", "function": "f", "points": [-3, 0.5, 2]}}"#);
    let out = dir.path().join("s");
    assert_eq!(kzcoarse(&["eval", "--config", &cfg, "--out", out.to_str().unwrap()]).status.code(), Some(0));
    assert_eq!(kzcoarse(&["report", "--dir", out.to_str().unwrap()]).status.code(), Some(0));
    fs::write(out.join("eval.csv"), "changed\n").unwrap();
    let r = verify_run(&out, &read_manifest(&out).unwrap());
    assert_eq!(r.mismatched, vec!["eval.csv".to_string()]);
    assert_ne!(kzcoarse(&["report", "--dir", out.to_str().unwrap()]).status.code(), Some(0));
}

#[test]
fn estimate_reads_a_snapshot_index() {
    let dir = tempfile::tempdir().unwrap();
    let sim = write(
        dir.path(),
        "sim.json",
        r#"{"engine": "ising2d", "seeds": [1, 2, 3], "snapshots": [4, 8, 16, 32, 64, 128],
            "params": {"task": "protocol", "lx": 48, "ly": 48, "length": "excess_walls",
            "protocol": {"initial": {"type": "random"}, "segments": [{"type": "hold", "temperature": 1.0, "duration": 128}]}}}"#,
    );
    assert_eq!(kzcoarse(&["simulate", "--config", &sim, "--out", dir.path().join("sim").to_str().unwrap()]).status.code(), Some(0));
    let est = write(dir.path(), "est.json", r#"{"engine": "estimate", "params": {"task": "lengths", "index": "sim/snapshots/index.json"}}"#);
    let out = dir.path().join("est");
    let o = kzcoarse(&["estimate", "--config", &est, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let a = fs::read_to_string(dir.path().join("sim/lengths.csv")).unwrap();
    let b = fs::read_to_string(out.join("lengths.csv")).unwrap();
    assert_eq!(a.lines().count(), 7);
    assert_ne!(a, b, "walls and excess walls differ at T > 0");
    let s: Value = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    let z = s["results"]["exponent"].as_f64().unwrap();
    assert!(z > 0.3 && z < 0.6, "{z}");
}
