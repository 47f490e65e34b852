use std::f64::consts::PI;
use std::path::PathBuf;
use std::process::{Command, Output};

use pwchaos::system::{builtin_example, parse_system, Params};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_pwchaos"))
}

fn config(name: &str) -> String {
    let p: PathBuf = [env!("CARGO_MANIFEST_DIR"), "..", "..", "configs", name].iter().collect();
    p.to_string_lossy().into_owned()
}

fn run(args: &[&str]) -> Output {
    bin().args(args).env_remove("PWCHAOS_THREADS").output().unwrap()
}

fn csv_rows(text: &str) -> Vec<Vec<String>> {
    text.lines().skip(1).map(|l| l.split(',').map(str::to_string).collect()).collect()
}

#[test]
fn shipped_config_is_the_builtin_example() {
    let text = std::fs::read_to_string(config("ex1.cfg")).unwrap();
    let (ex1, _) = builtin_example("ex1", &Params::new()).unwrap();
    assert!(parse_system(&text).unwrap() == ex1);
}

#[test]
fn analyze_reports_constants() {
    let out = run(&["analyze", &config("ex1.cfg")]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["constants"]["k0"], 3.0);
    assert_eq!(v["constants"]["nu0"], 1.0);
    assert_eq!(v["ogap"], 43.0);
    assert_eq!(v["report"]["scenario"], 1);
    assert_eq!(v["report"]["lambda_u_plus"], 1.0);
}

#[test]
fn melnikov_csv_matches_closed_form() {
    let out = run(&["melnikov", &config("ex1.cfg"), "--from", "0", "--to", "1", "--step", "0.01", "--mode", "simplified"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("tau,M,Mprime,err\n"));
    let p2 = PI * PI;
    let c1 = (8.0 * p2 + 3.0) / ((4.0 * p2 + 9.0) * (p2 + 1.0));
    let rows = csv_rows(&text);
    assert_eq!(rows.len(), 101);
    for r in rows {
        let (tau, m): (f64, f64) = (r[0].parse().unwrap(), r[1].parse().unwrap());
        assert!((m - c1 * (2.0 * PI * tau).sin()).abs() < 1e-6);
        assert!(r[2].is_empty());
    }
}

#[test]
fn integrate_flags_events_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for p in [&a, &b] {
        let out = run(&["integrate", "builtin:ex1", "--x0", "0.9,0", "--t1", "3", "-o", p.to_str().unwrap()]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let (ta, tb) = (std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(ta, tb);
    let rows = csv_rows(std::str::from_utf8(&ta).unwrap());
    let events: Vec<_> = rows.iter().filter(|r| r[4] == "1").collect();
    assert_eq!(events.len(), 1);
    let y: f64 = events[0][2].parse().unwrap();
    assert!(y.abs() < 1e-12);
    let manifest: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("a.csv.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["subcommand"], "integrate");
    assert_eq!(manifest["config_hash"].as_str().unwrap().len(), 64);
    assert_eq!(manifest["outputs"][0], a.to_str().unwrap());
}

#[test]
fn periodic_sequence_json() {
    let out = run(&["sequence", "builtin:ex1", "--eps", "1e-3", "--gap", "43", "--count", "2"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let t: Vec<f64> = serde_json::from_value(v["T"].clone()).unwrap();
    assert_eq!(t, vec![-86.0, -43.0, 0.0, 43.0, 86.0]);
    assert_eq!(v["ogapActual"], 43.0);
    assert_eq!(v["B"][0], 0.5);
}

#[test]
fn usage_and_computation_errors() {
    let out = run(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
    let out = run(&["melnikov", &config("ex1.cfg"), "--from", "0"]);
    assert_eq!(out.status.code(), Some(2));
    let out = run(&["analyze", "/nonexistent/system.cfg"]);
    assert_eq!(out.status.code(), Some(1));
    let err: serde_json::Value = serde_json::from_slice(out.stderr.trim_ascii()).unwrap();
    assert_eq!(err["subcommand"], "analyze");
}

#[test]
fn shadow_refuses_outside_scenario_one() {
    let out = run(&["shadow", &config("scenario4.cfg"), "--symbols", "111"]);
    assert_eq!(out.status.code(), Some(1));
    let err: serde_json::Value = serde_json::from_slice(out.stderr.trim_ascii()).unwrap();
    assert!(err["error"].as_str().unwrap().contains("refusing"));
}

#[test]
fn selftest_subset() {
    let out = run(&["selftest", "--only", "3", "--only", "8"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v.as_array().unwrap().len(), 2);
    assert!(v.as_array().unwrap().iter().all(|o| o["pass"] == true));
}

#[test]
fn envelope_reports_largest_passing_eps() {
    let out = run(&["envelope", "builtin:ex1", "--eps", "1e-3,5e-4", "--period", "1"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["largestPassingEps"], 1e-3);
    let rows = v["rows"].as_array().unwrap();
    assert_eq!(rows[0]["gap"], 43.0);
    assert_eq!(rows[1]["gap"], 47.0);
    for r in rows {
        assert_eq!(r["verified"], true);
        assert!(r["supOverEps"].as_f64().unwrap() < 1.0);
    }
}
