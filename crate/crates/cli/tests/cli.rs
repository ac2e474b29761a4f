use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn affleg(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_affleg"));
    cmd.args(args).env_remove("AFFLEG_THREADS");
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn report(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn identical_config_gives_identical_report() {
    for cmd in ["first-variation", "convexity", "rho-phi"] {
        let args = [cmd, "--seed", "7"];
        let a = affleg(&args, &[]);
        let b = affleg(&args, &[("AFFLEG_THREADS", "3")]);
        assert_eq!(code(&a), 0, "{}", String::from_utf8_lossy(&a.stderr));
        // Thread count is reported, so compare everything else.
        let strip = |o: &Output| {
            let mut v: Value = serde_json::from_slice(&o.stdout).unwrap();
            v.as_object_mut().unwrap().remove("environment");
            v
        };
        assert_eq!(strip(&a), strip(&b), "{cmd}");
        assert_eq!(affleg(&args, &[]).stdout, a.stdout, "{cmd}");
    }
}

#[test]
fn exit_code_contract() {
    let dir = tempfile::tempdir().unwrap();
    let ok = affleg(&["verify-structure", "--model", "sphere", "--n", "1", "--report", s(&dir.path().join("ok.json"))], &[]);
    assert_eq!(code(&ok), 0);
    let r = report(&dir.path().join("ok.json"));
    assert_eq!(r["schema_version"], 1);
    assert!(r["checks"].as_array().unwrap().iter().all(|c| c["pass"] == true));

    // A tolerance below round-off turns a passing check into a failing one.
    let fail = affleg(&["rho-phi", "--tol", "rho_oracle=1e-30", "--report", s(&dir.path().join("f.json"))], &[]);
    assert_eq!(code(&fail), 1);
    assert_eq!(report(&dir.path().join("f.json"))["pass"], false);

    // Negative control: the perturbed metric is not Sasakian.
    let control = affleg(&["verify-structure", "--model", "perturbed_heisenberg", "--delta", "0.1"], &[]);
    assert_eq!(code(&control), 1);

    assert_eq!(code(&affleg(&["no-such-command"], &[])), 2);
    assert_eq!(code(&affleg(&["rho-phi", "--nodes", "many"], &[])), 2);
    assert_eq!(code(&affleg(&["rho-phi", "--tol", "rho_oracle=-1"], &[])), 2);
    assert_eq!(code(&affleg(&["rho-phi", "--tol", "bogus=1e-3"], &[])), 2);
    assert_eq!(code(&affleg(&["rho-phi"], &[("AFFLEG_THREADS", "zero")])), 2);
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        "nodes = 32\ncolour = \"blue\"\n",
        "[immersion]\nfamily = \"torus_curve\"\na = 0.7\nk = 2.0\nwobble = 1.0\n",
        "[model]\nkind = \"sphere\"\nn = 1\nradius = 2.0\n",
        "[output]\nformat = \"yaml\"\n",
    ];
    for (i, text) in cases.iter().enumerate() {
        let path = dir.path().join(format!("bad{i}.toml"));
        std::fs::write(&path, text).unwrap();
        let out = affleg(&["rho-phi", "--config", s(&path)], &[]);
        assert_eq!(code(&out), 2, "case {i}: {}", String::from_utf8_lossy(&out.stderr));
    }
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.toml");
    std::fs::write(&cfg, "nodes = 32\nseed = 3\n[immersion]\nfamily = \"torus_curve\"\na = 0.7\nk = 3.0\n").unwrap();
    let out_path = dir.path().join("r.json");
    let out = affleg(&["rho-phi", "--config", s(&cfg), "--nodes", "48", "--k", "-1", "--report", s(&out_path)], &[]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let r = report(&out_path);
    assert_eq!(r["config"]["nodes"], 48);
    assert_eq!(r["config"]["seed"], 3);
    assert_eq!(r["config"]["immersion"]["a"], 0.7);
    assert_eq!(r["config"]["immersion"]["k"], -1.0);
}

#[test]
fn thread_count_comes_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("r.json");
    let out = affleg(&["rho-phi", "--report", s(&path)], &[("AFFLEG_THREADS", "2")]);
    assert_eq!(code(&out), 0);
    assert_eq!(report(&path)["environment"]["threads"], 2);
}

#[test]
fn wall_time_only_on_request() {
    let dir = tempfile::tempdir().unwrap();
    let plain = dir.path().join("plain.json");
    let timed = dir.path().join("timed.json");
    affleg(&["angle", "--report", s(&plain)], &[]);
    affleg(&["angle", "--timing", "--report", s(&timed)], &[]);
    assert!(report(&plain).get("wall_time_s").is_none());
    assert!(report(&timed)["wall_time_s"].as_f64().unwrap() >= 0.0);
}

#[test]
fn csv_and_plots() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("rho.csv");
    let plots = dir.path().join("plots");
    let out = affleg(&["rho-phi", "--csv", s(&csv), "--plots", s(&plots), "--report", s(&dir.path().join("r.json"))], &[]);
    assert_eq!(code(&out), 0);
    let text = std::fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with("node,t,rho_phi,oracle_gap"));
    assert_eq!(text.lines().count(), 65);
    assert!(plots.join("rho_phi_profile.svg").exists());

    // No series: warning, no files, exit status unaffected.
    let empty = dir.path().join("empty");
    let out = affleg(&["calibration", "--plots", s(&empty), "--report", s(&dir.path().join("c.json"))], &[]);
    assert_eq!(code(&out), 0);
    assert!(String::from_utf8_lossy(&out.stderr).contains("warning"));
    assert!(!empty.exists());
}

#[test]
fn moduli_walk_example() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("walk.json");
    let plots = dir.path().join("plots");
    let out = affleg(&["moduli-walk", "--steps", "5", "--step-size", "0.02", "--plots", s(&plots), "--report", s(&path)], &[]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let r = report(&path);
    let steps = r["data"]["steps"].as_array().unwrap();
    assert_eq!(steps.len(), 5);
    assert!(steps.iter().all(|s| s["defect"].as_f64().unwrap() < 1e-9));
    assert_eq!(std::fs::read_dir(&plots).unwrap().count(), 5);
}

#[test]
fn flow_approaches_phi_minimal_torus_curve() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("flow.json");
    let out = affleg(&["flow", "--report", s(&path)], &[]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let r = report(&path);
    let vols = r["data"]["vol_phi"].as_array().unwrap();
    let last = vols.last().unwrap().as_f64().unwrap();
    // Vol_φ(T(a, 2)) = π sin 2a peaks at the φ-minimal a = π/4.
    assert!((last - std::f64::consts::PI).abs() < 1e-3, "{last}");
}

#[test]
fn every_subcommand_passes_on_defaults() {
    for cmd in [
        "verify-structure",
        "rho-phi",
        "first-variation",
        "second-variation",
        "stability-spectrum",
        "convexity",
        "angle",
        "calibration",
    ] {
        let out = affleg(&[cmd], &[]);
        assert_eq!(code(&out), 0, "{cmd}: {}", String::from_utf8_lossy(&out.stderr));
        let r: Value = serde_json::from_slice(&out.stdout).unwrap();
        assert_eq!(r["command"], cmd);
        assert_eq!(r["pass"], true);
    }
}
