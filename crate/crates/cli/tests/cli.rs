use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use nsgate_cli::bundle::{read_manifest, verify_bundle, write_bundle};
use nsgate_cli::config::{ConfigError, ScenarioConfig, ScenarioId};
use nsgate_cli::scenarios::{run_scenario, run_table1, ScenarioOutput};

fn nsgate(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nsgate")).args(args).env("RUST_LOG", "error").output().unwrap()
}

fn run(id: ScenarioId, overrides: &[&str]) -> ScenarioOutput {
    let overrides: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
    run_scenario(&ScenarioConfig::load(id, None, &overrides).unwrap()).unwrap()
}

fn csv_files(out: &ScenarioOutput) -> Vec<(String, Vec<u8>)> {
    out.files.iter().filter(|f| f.name.ends_with(".csv")).map(|f| (f.name.clone(), f.bytes.clone())).collect()
}

const SMALL_TRAJECTORIES: &[&str] = &[
    "modes=12",
    "solver=trajectories",
    "open_system_modes=6",
    "trajectories=20",
    "noise.kappa.value=2.0",
];

#[test]
fn same_config_and_seed_give_identical_csv() {
    let a = run(ScenarioId::NsSc, &["scan_points=5"]);
    let b = run(ScenarioId::NsSc, &["scan_points=5"]);
    assert!(!csv_files(&a).is_empty());
    assert_eq!(csv_files(&a), csv_files(&b));

    let mut cfg = ScenarioConfig::load(ScenarioId::CatchRelease, None, &SMALL_TRAJECTORIES.iter().map(|s| s.to_string()).collect::<Vec<_>>()).unwrap();
    cfg.seed = 11;
    let a = run_scenario(&cfg).unwrap();
    let b = run_scenario(&cfg).unwrap();
    assert_eq!(csv_files(&a), csv_files(&b));
    assert_eq!(a.metrics, b.metrics);
    cfg.seed = 12;
    let c = run_scenario(&cfg).unwrap();
    assert_ne!(a.metrics["fidelity"], c.metrics["fidelity"], "seed should change the trajectory sample");
}

#[test]
fn every_emitted_file_is_hashed_in_the_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(ScenarioId::Cz, &[]);
    let manifest = write_bundle(dir.path(), "cz", serde_json::json!({}), 0, &out, 0.1).unwrap();
    let on_disk: Vec<String> = fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n != "manifest.json")
        .collect();
    for name in &on_disk {
        assert!(manifest.files.iter().any(|f| &f.name == name), "{name} missing from manifest");
    }
    assert_eq!(on_disk.len(), manifest.files.len());
    assert!(verify_bundle(dir.path()).unwrap().is_empty());
    assert_eq!(read_manifest(dir.path()).unwrap().files, manifest.files);

    fs::write(dir.path().join("summary.json"), b"{}").unwrap();
    assert_eq!(verify_bundle(dir.path()).unwrap(), vec![dir.path().join("summary.json")]);
}

#[test]
fn cli_bundle_matches_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = nsgate(&["run", "ns-dispersive", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(verify_bundle(&out).unwrap().is_empty());
    let m = read_manifest(&out).unwrap();
    assert_eq!(m.scenario, "ns-dispersive");
    assert!(m.files.iter().any(|f| f.name == "trace.csv"));
    assert!(m.versions.contains_key("nsgate"));
}

#[test]
fn overrides_are_type_checked() {
    let bad = ScenarioConfig::load(ScenarioId::NsSc, None, &["noise.kappa.value=fast".into()]).unwrap_err();
    assert!(matches!(bad, ConfigError::TypeMismatch { .. }), "{bad}");
    let bad = ScenarioConfig::load(ScenarioId::NsSc, None, &["noise.kappa.speed=1".into()]).unwrap_err();
    assert!(matches!(bad, ConfigError::InvalidPath { .. }), "{bad}");
    let bad = ScenarioConfig::load(ScenarioId::NsPusc, None, &["dephasing=sometimes".into()]).unwrap_err();
    assert!(matches!(bad, ConfigError::Schema { .. }), "{bad}");

    let dir = tempfile::tempdir().unwrap();
    let o = nsgate(&["run", "ns-sc", "--set", "system.g.value=big", "--out", dir.path().to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("system.g.value"));
    assert!(!dir.path().join("manifest.json").exists());
}

#[test]
fn config_file_and_override_compose() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cz.toml");
    fs::write(&cfg, "scenario = \"cz\"\nseed = 3\n\n[params]\nregime = \"ideal\"\nsamples = 2\n").unwrap();
    let loaded = ScenarioConfig::load(ScenarioId::Cz, Some(&cfg), &["theta=0.7853981633974483".into()]).unwrap();
    assert_eq!(loaded.seed, 3);
    let out = run_scenario(&loaded).unwrap();
    assert!((out.metrics["fidelity"] - 1.0).abs() < 1e-12);

    fs::write(&cfg, "[params]\nregime = \"ideal\"\nsampels = 2\n").unwrap();
    assert!(matches!(ScenarioConfig::load(ScenarioId::Cz, Some(&cfg), &[]), Err(ConfigError::InvalidPath { .. })));
}

#[test]
fn ns_sc_default_summary_fidelity() {
    let f = run(ScenarioId::NsSc, &["scan_points=0"]).metrics["fidelity"];
    assert!((f - 0.9995).abs() <= 0.0002, "F = {f}");
}

#[test]
fn cz_default_summary_fidelity() {
    let f = run(ScenarioId::Cz, &[]).metrics["fidelity"];
    assert!((f - 0.9989).abs() <= 0.001, "F = {f}");
}

#[test]
fn ns_pusc_k4_matches_table_row() {
    let m = run(ScenarioId::NsPusc, &["k=4"]).metrics;
    assert!((m["r"] - 1.870).abs() < 0.002);
    assert!((m["g_ghz"] - 1.115).abs() < 0.01);
    assert!((m["gate_time_ns"] - 0.84).abs() < 0.05);
    assert!((m["fidelity"] - 0.9995).abs() < 0.002, "F = {}", m["fidelity"]);
}

#[test]
fn table1_rows() {
    let (rows, out) = run_table1().unwrap();
    assert_eq!(rows.iter().map(|r| r.k).collect::<Vec<_>>(), vec![4, 6, 7, 8, 9]);
    for r in &rows {
        assert!(r.resonance_residual.abs() < 1e-9, "k = {}", r.k);
    }
    let row = |k| rows.iter().find(|r| r.k == k).unwrap();
    for (k, r, g, t) in [(6, 1.964, 0.595, 3.1), (9, 1.916, 0.9, 2.6)] {
        let x = row(k);
        assert!((x.r - r).abs() < 0.002 && (x.g_ghz - g).abs() < 0.01 && (x.gate_time_ns - t).abs() < 0.05, "{x:?}");
    }
    let csv = &out.files.iter().find(|f| f.name == "table1.csv").unwrap().bytes;
    assert_eq!(String::from_utf8_lossy(csv).lines().count(), 6);
}

fn sweep_csv(workers: &str, dir: &Path) -> Vec<u8> {
    let o = Command::new(env!("CARGO_BIN_EXE_nsgate"))
        .args(["run", "sweep", "--set", "values=[1.0, 0.0, 0.5, 0.2]", "--set", "base_params.scan_points=0", "--out"])
        .arg(dir)
        .env("NSGATE_WORKERS", workers)
        .env("RUST_LOG", "error")
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    fs::read(dir.join("sweep.csv")).unwrap()
}

#[test]
fn sweep_results_follow_parameter_order() {
    let dir = tempfile::tempdir().unwrap();
    let one = sweep_csv("1", &dir.path().join("one"));
    let four = sweep_csv("4", &dir.path().join("four"));
    assert_eq!(one, four);
    let text = String::from_utf8(one).unwrap();
    let firsts: Vec<&str> = text.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(firsts, ["1", "0", "0.5", "0.2"]);
}

#[test]
fn verify_negative_control_names_the_invariant() {
    let dir = tempfile::tempdir().unwrap();
    let clean = nsgate(&["verify", "--out", dir.path().join("clean").to_str().unwrap()]);
    let clean = String::from_utf8_lossy(&clean.stdout).to_string();
    assert!(clean.contains("PASS models.hamiltonians_hermitian"), "{clean}");

    let injected = nsgate(&["verify", "--inject-non-hermitian", "--out", dir.path().join("bad").to_str().unwrap()]);
    assert!(!injected.status.success());
    let text = String::from_utf8_lossy(&injected.stdout);
    assert!(text.contains("FAIL models.hamiltonians_hermitian"), "{text}");
    let manifest = read_manifest(&dir.path().join("bad")).unwrap();
    let failed = manifest.summary["failed_checks"].as_array().unwrap();
    assert!(failed.iter().any(|v| v == "models.hamiltonians_hermitian"));
}
