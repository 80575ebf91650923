use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("layerpot-cli-{}-{name}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn layerpot(args: &[&str], threads: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_layerpot"));
    cmd.args(args).env_remove("LAYERPOT_THREADS");
    if let Some(t) = threads {
        cmd.env("LAYERPOT_THREADS", t);
    }
    cmd.output().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

const SWEEP: &str = r#"{"grid": {"n": 1, "N": 32}, "k": [0.0, 0.5, 0.9]}"#;

#[test]
fn sweep_writes_bundle_and_passes() {
    let dir = scratch("sweep");
    let cfg = write(&dir, "c.json", SWEEP);
    let out = dir.join("bundle");
    let r = layerpot(&["kkpt-sweep", "--config", &cfg, "--out", out.to_str().unwrap()], Some("1"));
    assert_eq!(r.status.code(), Some(0), "{}", String::from_utf8_lossy(&r.stderr));
    for f in ["summary.json", "diagnostics.json", "kkpt.csv"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["provenance"]["threads"], 1);
    assert_eq!(summary["provenance"]["config_hash"].as_str().unwrap().len(), 64);
    assert!(fs::read_to_string(out.join("kkpt.csv")).unwrap().lines().count() == 4);
}

#[test]
fn reruns_are_byte_identical() {
    let dir = scratch("det");
    let cfg = write(&dir, "c.json", r#"{"grid": {"n": 1, "N": 32}, "family": {"family": "hermitian_random", "seed": 4}, "pole": {"t0": 1.0, "x0": 3}, "radii": [0.05, 0.1, 0.2]}"#);
    let a = dir.join("a");
    let b = dir.join("b");
    for out in [&a, &b] {
        let r = layerpot(&["fundsol", "--config", &cfg, "--out", out.to_str().unwrap()], Some("1"));
        assert!(r.status.code() == Some(0) || r.status.code() == Some(1));
    }
    for f in fs::read_dir(&a).unwrap() {
        let name = f.unwrap().file_name();
        assert_eq!(fs::read(a.join(&name)).unwrap(), fs::read(b.join(&name)).unwrap(), "{name:?}");
    }
}

#[test]
fn config_errors_exit_with_two() {
    let dir = scratch("cfg");
    let bad_grid = write(&dir, "bad.json", r#"{"grid": {"n": 1, "N": 48}}"#);
    let unknown = write(&dir, "unknown.json", r#"{"grid": {"n": 1, "N": 32}, "colour": "red"}"#);
    let ok = write(&dir, "ok.json", SWEEP);
    let out = dir.join("o");
    let out = out.to_str().unwrap();
    assert_eq!(layerpot(&["verify", "--config", &bad_grid, "--out", out], None).status.code(), Some(2));
    assert_eq!(layerpot(&["verify", "--config", &unknown, "--out", out], None).status.code(), Some(2));
    assert_eq!(layerpot(&["bogus", "--config", &ok, "--out", out], None).status.code(), Some(2));
    assert_eq!(layerpot(&["kkpt-sweep", "--config", "/nonexistent.json", "--out", out], None).status.code(), Some(2));
    assert_eq!(layerpot(&["kkpt-sweep", "--config", &ok, "--out", out], Some("zero")).status.code(), Some(2));
    assert!(!Path::new(out).exists());
}

#[test]
fn failed_invariant_exits_with_one() {
    let dir = scratch("inv");
    let cfg = write(&dir, "c.json", r#"{"grid": {"n": 1, "N": 32}, "family": {"family": "hermitian_random", "seed": 1}, "tolerances": {"identity": 1e-300}}"#);
    let out = dir.join("o");
    let r = layerpot(&["verify", "--config", &cfg, "--out", out.to_str().unwrap()], None);
    assert_eq!(r.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&r.stdout).contains("FAIL"));
    // the bundle is still written
    assert!(out.join("summary.json").exists());
}

#[test]
fn baseline_comparison() {
    let dir = scratch("base");
    let cfg = write(&dir, "c.json", SWEEP);
    let base = dir.join("base");
    let base_s = base.to_str().unwrap();
    assert_eq!(layerpot(&["kkpt-sweep", "--config", &cfg, "--out", base_s], None).status.code(), Some(0));
    let again = dir.join("again");
    let r = layerpot(&["kkpt-sweep", "--config", &cfg, "--out", again.to_str().unwrap(), "--baseline", base_s], None);
    assert_eq!(r.status.code(), Some(0));

    // constants moved by 50 % are flagged
    let path = base.join("summary.json");
    let mut s: serde_json::Value = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
    for v in s["constants"].as_object_mut().unwrap().values_mut() {
        let x = v["value"].as_f64().unwrap();
        v["value"] = serde_json::json!(x * 1.5);
    }
    let drifted = write(&dir, "drifted.json", &s.to_string());
    let r = layerpot(&["kkpt-sweep", "--config", &cfg, "--out", again.to_str().unwrap(), "--baseline", &drifted], None);
    assert_eq!(r.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&r.stdout).contains("DRIFT"));

    // a different configuration is a mismatch, not a drift
    let other = write(&dir, "other.json", r#"{"grid": {"n": 1, "N": 32}, "k": [0.0, 0.5]}"#);
    let r = layerpot(&["kkpt-sweep", "--config", &other, "--out", again.to_str().unwrap(), "--baseline", base_s], None);
    assert_eq!(r.status.code(), Some(2));
}

#[test]
fn overrides_change_the_hash() {
    let dir = scratch("ovr");
    let cfg = write(&dir, "c.json", r#"{"grid": {"n": 1, "N": 32}, "pole": {"t0": 1.0, "x0": 0}, "radii": [0.05, 0.1, 0.2]}"#);
    let a = dir.join("a");
    let b = dir.join("b");
    layerpot(&["fundsol", "--config", &cfg, "--out", a.to_str().unwrap()], None);
    layerpot(&["fundsol", "--config", &cfg, "--out", b.to_str().unwrap(), "--family", "kkpt", "--pole", "0.8,5"], None);
    let hash = |p: &Path| -> String {
        let s: serde_json::Value = serde_json::from_str(&fs::read_to_string(p.join("summary.json")).unwrap()).unwrap();
        s["provenance"]["config_hash"].as_str().unwrap().to_string()
    };
    assert_ne!(hash(&a), hash(&b));
}
