use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_sparse-nash");

fn k2_config(ell: f64) -> String {
    format!(
        r#"{{
  "seed": 11,
  "graph": {{"kind": "complete", "n": 2}},
  "scenario": {{"kind": "deterministic", "times": [0.0]}},
  "utility": {{"kind": "quadratic", "gamma": 1.0, "ell": {ell}}},
  "theta": {{"kind": "iid_gaussian", "mean": 0.0, "std": 1.0}},
  "admissible": {{"kind": "ball", "radius": 4.0}},
  "operation": {{"kind": "solve"}}
}}"#
    )
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn run(sub: &str, config: &Path, out: &Path, threads: Option<&str>) -> Output {
    let mut cmd = Command::new(BIN);
    cmd.arg(sub).arg("--config").arg(config).arg("--out").arg(out);
    if let Some(t) = threads {
        cmd.env("SPARSE_NASH_THREADS", t);
    }
    cmd.output().unwrap()
}

#[test]
fn k2_solve_writes_two_rows_and_a_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "k2.json", &k2_config(0.5));
    let out = dir.path().join("out");
    let o = run("solve", &cfg, &out, None);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(out.join("actions.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert!(csv.starts_with("vertex,scenario,time,value\n"));
    let manifest: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 11);
    assert_eq!(manifest["operation"], "solve");
    assert_eq!(manifest["config_hash"].as_str().unwrap().len(), 64);
    assert!(manifest["summary"]["solve"]["residual"].as_f64().unwrap() <= 1e-10);
}

#[test]
fn same_config_and_seed_give_identical_csv_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "trunc.json",
        r#"{"seed": 4, "graph": {"kind": "torus", "width": 5, "height": 5},
            "scenario": {"kind": "uniform", "atoms": 4, "times": [0.0, 1.0]},
            "utility": {"kind": "quadratic", "gamma": 1.0, "ell": 0.6},
            "theta": {"kind": "iid_gaussian", "mean": 0.0, "std": 1.0},
            "admissible": {"kind": "ball", "radius": 3.0},
            "operation": {"kind": "truncate", "ks": [0, 1, 2, 3]}}"#,
    );
    let runs = [("a", Some("1")), ("b", Some("3")), ("c", None)];
    let mut bytes = Vec::new();
    for (name, threads) in runs {
        let out = dir.path().join(name);
        let o = run("truncate", &cfg, &out, threads);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        bytes.push((std::fs::read(out.join("truncate.csv")).unwrap(), std::fs::read(out.join("plot.csv")).unwrap()));
    }
    assert!(bytes.windows(2).all(|w| w[0] == w[1]));
}

#[test]
fn contraction_violation_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "bad.json", &k2_config(2.0));
    let out = dir.path().join("out");
    let o = run("solve", &cfg, &out, None);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("rho = 2"), "{err}");
    assert!(!out.exists());
}

#[test]
fn failed_bound_check_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "mtp.json",
        r#"{"seed": 0, "graph": {"kind": "path", "n": 3},
            "operation": {"kind": "mtp", "transport": "degree_to_neighbor",
                          "root_law": {"kind": "fixed", "root": 1}}}"#,
    );
    let o = run("mtp", &cfg, &dir.path().join("out"), None);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn mismatched_subcommand_and_bad_fields_are_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "k2.json", &k2_config(0.5));
    let o = run("epsnash", &cfg, &dir.path().join("out"), None);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("operation.kind"));
    let cfg = write(dir.path(), "typo.json", &k2_config(0.5).replace("\"seed\": 11", "\"seed\": 11, \"sede\": 1"));
    let o = run("solve", &cfg, &dir.path().join("out"), None);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("sede"));
}

#[test]
fn decay_profile_emits_plot_series() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "decay.json",
        r#"{"seed": 9, "graph": {"kind": "path", "n": 6},
            "utility": {"kind": "quadratic", "gamma": 1.0, "ell": 0.5},
            "theta": {"kind": "iid_rademacher"},
            "admissible": {"kind": "box", "lo": -4.0, "hi": 4.0},
            "operation": {"kind": "corrdecay", "from": 0}}"#,
    );
    let out = dir.path().join("out");
    let o = run("corrdecay", &cfg, &out, None);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let plot = std::fs::read_to_string(out.join("plot.csv")).unwrap();
    assert!(plot.starts_with("series,x,y,bound\n"));
    assert_eq!(plot.lines().count(), 6);
}

#[test]
fn shipped_configs_run_clean() {
    let configs = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        ("k2_solve.json", "solve"),
        ("line_truncate.json", "truncate"),
        ("c10_reconstruct.json", "reconstruct"),
        ("torus_epsnash.json", "epsnash"),
        ("c20_corrdecay.json", "corrdecay"),
        ("blocks_lwc.json", "lwc"),
        ("p3_mtp.json", "mtp"),
        ("lq_volterra.json", "volterra-check"),
    ];
    for (file, sub) in cases {
        let out = dir.path().join(sub);
        let o = run(sub, &configs.join(file), &out, None);
        assert_eq!(o.status.code(), Some(0), "{file}: {}", String::from_utf8_lossy(&o.stderr));
        assert!(out.join("manifest.json").exists());
    }
}
