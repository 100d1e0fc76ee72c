use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};
use tempfile::TempDir;

const REFERENCE: &str = r#"{"n":5,"p1":2,"p2":2,"k1":1.0,"k2":1.0,"rho":4.0}"#;

fn scene(dir: &Path, name: &str, body: &Value) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, serde_json::to_string_pretty(body).unwrap()).unwrap();
    path
}

fn ehyp(args: &[&str], scene: &Path, out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ehyp"))
        .args(args)
        .arg("--scene")
        .arg(scene)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn report(out: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap()
}

fn reference_scene(extra: Value) -> Value {
    let mut s = json!({ "kind": "example-theorem3", "payload": serde_json::from_str::<Value>(REFERENCE).unwrap() });
    if let Value::Object(m) = extra {
        s.as_object_mut().unwrap().extend(m);
    }
    s
}

#[test]
fn build_example_reference_passes() {
    let dir = TempDir::new().unwrap();
    let sc = scene(dir.path(), "ex.json", &reference_scene(json!({})));
    let out = dir.path().join("out");
    let o = ehyp(&["build-example"], &sc, &out);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let r = report(&out);
    assert_eq!(r["schema_version"], 1);
    assert_eq!(r["command"], "build-example");
    assert_eq!(r["pass"], true);
    let checks = r["checks"].as_array().unwrap();
    assert!(checks.len() > 20);
    for c in checks {
        assert!(c["residual"].as_f64().unwrap() < 1e-6, "{c}");
    }
    assert!(r["tolerances"]["einstein_residual"].as_f64().is_some());
    let csv = fs::read_to_string(out.join("report.csv")).unwrap();
    assert!(csv.starts_with("check,residual,tolerance,pass\n"));
    assert_eq!(csv.lines().count(), checks.len() + 1);
}

#[test]
fn wrong_rho_fails_einstein_check() {
    let dir = TempDir::new().unwrap();
    let sc = scene(dir.path(), "ex.json", &reference_scene(json!({ "rho": 5.0 })));
    let out = dir.path().join("out");
    let o = ehyp(&["check-einstein"], &sc, &out);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("einstein_residual"));
    let r = report(&out);
    assert_eq!(r["pass"], false);
    assert_eq!(r["checks"][0]["name"], "einstein_residual");
    assert_eq!(r["checks"][0]["pass"], false);

    let sc = scene(dir.path(), "ok.json", &reference_scene(json!({})));
    assert_eq!(ehyp(&["check-einstein"], &sc, &out).status.code(), Some(0));
}

#[test]
fn solve_f_writes_csv() {
    let dir = TempDir::new().unwrap();
    let sc = scene(dir.path(), "ex.json", &reference_scene(json!({ "samples": 64 })));
    let out = dir.path().join("out");
    let o = ehyp(&["solve-f"], &sc, &out);
    assert_eq!(o.status.code(), Some(0));
    let csv = fs::read_to_string(out.join("f.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("t,f,df,residual"));
    let rows: Vec<Vec<f64>> = lines.map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), 64);
    for row in rows {
        let (t, f, df, res) = (row[0], row[1], row[2], row[3]);
        assert!(res < 1e-10);
        assert!((f - (2.0f64 / 3.0).sqrt() * t.sin()).abs() < 1e-14);
        assert!((df - (2.0f64 / 3.0).sqrt() * t.cos()).abs() < 1e-14);
    }
}

#[test]
fn schema_errors_exit_2() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("out");
    let cases = [
        json!({ "kind": "nope", "payload": {} }),
        json!({ "kind": "example-theorem3", "payload": { "n": 5 } }),
        json!({ "kind": "example-theorem3", "payload": serde_json::from_str::<Value>(REFERENCE).unwrap(), "extra": 1 }),
        json!({ "kind": "example-theorem3", "payload": { "n": 5, "p1": 1, "p2": 3, "k1": 1.0, "k2": 1.0, "rho": 4.0 } }),
        json!({ "kind": "cylinder-query", "payload": { "n": 5, "c": 1, "rho": 2.0 } }),
    ];
    for (i, body) in cases.iter().enumerate() {
        let sc = scene(dir.path(), &format!("s{i}.json"), body);
        let o = ehyp(&["check-einstein"], &sc, &out);
        assert_eq!(o.status.code(), Some(2), "case {i}: {}", String::from_utf8_lossy(&o.stderr));
    }
    let o = ehyp(&["lcf"], &dir.path().join("missing.json"), &out);
    assert_eq!(o.status.code(), Some(2));
    let sc = scene(dir.path(), "ex.json", &reference_scene(json!({})));
    let o = Command::new(env!("CARGO_BIN_EXE_ehyp"))
        .args(["check-einstein", "--tol", "einstein_residual"])
        .arg("--scene")
        .arg(&sc)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn tolerance_override_is_embedded() {
    let dir = TempDir::new().unwrap();
    let sc = scene(dir.path(), "ex.json", &reference_scene(json!({ "tolerances": { "einstein_residual": 1e-3 } })));
    let out = dir.path().join("out");
    let o = ehyp(&["check-einstein", "--grid", "3", "--tol", "bianchi=1e-2"], &sc, &out);
    assert_eq!(o.status.code(), Some(0));
    let r = report(&out);
    assert_eq!(r["tolerances"]["einstein_residual"], 1e-3);
    assert_eq!(r["tolerances"]["bianchi"], 1e-2);
    assert_eq!(r["checks"][0]["tolerance"], 1e-3);
    assert_eq!(r["grid"]["points_per_axis"], 3);
}

#[test]
fn reports_are_deterministic_under_seed() {
    let dir = TempDir::new().unwrap();
    let sc = scene(dir.path(), "ex.json", &reference_scene(json!({ "grid": { "points_per_axis": 2 }, "random_planes": 5 })));
    let run = |seed: &str, name: &str| {
        let out = dir.path().join(name);
        let o = ehyp(&["spread", "--seed", seed], &sc, &out);
        assert_eq!(o.status.code(), Some(0));
        fs::read_to_string(out.join("report.json")).unwrap()
    };
    let a = run("7", "a");
    let b = run("7", "b");
    assert_eq!(a, b);
    let c = run("8", "c");
    assert_ne!(a, c);
}

#[test]
fn cylinder_queries() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("out");
    let sc = scene(dir.path(), "c2.json", &json!({ "kind": "cylinder-query", "payload": { "n": 5, "c": 1, "rho": 2.0 } }));
    assert_eq!(ehyp(&["cylinder"], &sc, &out).status.code(), Some(0));
    let d = &report(&out)["data"];
    assert_eq!(d["t_norm2"], 1.0);
    assert_eq!(d["theta"], 0.0);
    assert_eq!(d["consistent"], false);

    let sc = scene(dir.path(), "c6.json", &json!({ "kind": "cylinder-query", "payload": { "n": 5, "c": 1, "rho": 6.0 } }));
    assert_eq!(ehyp(&["cylinder"], &sc, &out).status.code(), Some(0));
    let d = &report(&out)["data"];
    assert_eq!(d["solvable"], false);
    assert!(d["theta"].is_null());
}

#[test]
fn structure_round_trip_through_build_example() {
    let dir = TempDir::new().unwrap();
    let sc = scene(dir.path(), "ex.json", &reference_scene(json!({ "grid": { "points_per_axis": 3 } })));
    let out = dir.path().join("out");
    assert_eq!(ehyp(&["build-example"], &sc, &out).status.code(), Some(0));
    let structure = report(&out)["data"]["structure"].clone();
    let sc = scene(dir.path(), "st.json", &json!({ "kind": "structure-data", "payload": structure, "grid": { "points_per_axis": 3 } }));
    let out2 = dir.path().join("out2");
    let o = ehyp(&["check-structure"], &sc, &out2);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let names: Vec<String> =
        report(&out2)["checks"].as_array().unwrap().iter().map(|c| c["name"].as_str().unwrap().to_string()).collect();
    for want in ["A", "B", "C", "D", "E", "F"] {
        assert!(names.iter().any(|n| n == want), "missing {want}");
    }

    // A shifted shape operator breaks the structure conditions.
    let mut bad = structure.clone();
    let diag = bad["shape"]["diagonal"].as_array_mut().unwrap();
    diag[0] = json!({ "op": "const", "args": [0.1] });
    let sc = scene(dir.path(), "bad.json", &json!({ "kind": "structure-data", "payload": bad, "grid": { "points_per_axis": 3 } }));
    assert_eq!(ehyp(&["check-structure"], &sc, &out2).status.code(), Some(3));
}

#[test]
fn lcf_and_curvature_on_single_fiber() {
    let dir = TempDir::new().unwrap();
    let payload = json!({
        "base": { "min": 0.5, "max": 2.0 },
        "fibers": [{ "dim": 3, "curvature": 1.0, "warping": { "op": "cosh", "args": [{ "op": "var", "args": [] }] } }]
    });
    let sc = scene(dir.path(), "m.json", &json!({ "kind": "mwp-metric", "payload": payload, "grid": { "points_per_axis": 2 } }));
    let out = dir.path().join("out");
    let o = ehyp(&["lcf"], &sc, &out);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(report(&out)["checks"][0]["residual"].as_f64().unwrap() < 1e-6);

    let o = ehyp(&["curvature"], &sc, &out);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let r = report(&out);
    let dumps = r["data"].as_array().unwrap();
    assert_eq!(dumps.len(), 16);
    assert_eq!(dumps[0]["riemann"].as_array().unwrap().len(), 256);
    let csv = fs::read_to_string(out.join("curvature.csv")).unwrap();
    assert_eq!(csv.lines().count(), 17);

    let sc = scene(dir.path(), "e.json", &json!({ "kind": "mwp-metric", "payload": payload }));
    assert_eq!(ehyp(&["check-einstein"], &sc, &out).status.code(), Some(2));
}
