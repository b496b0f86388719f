use std::path::PathBuf;
use std::process::{Command, Output};

fn fixture(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
        .display()
        .to_string()
}

fn kolmo(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kolmo"))
        .args(args)
        .env("KOLMO_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn summary(o: &Output) -> serde_json::Value {
    serde_json::from_str(&stderr(o)).expect("stderr carries the JSON summary")
}

#[test]
fn validate_langevin() {
    let o = kolmo(&["validate", "--model", &fixture("langevin.json")]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let s = summary(&o);
    assert_eq!(s["summary"]["Q"], 4);
    assert_eq!(s["manifest"]["subcommand"], "validate");
}

#[test]
fn exit_codes() {
    let broken = kolmo(&["gramian", "--model", &fixture("broken.json")]);
    assert_eq!(broken.status.code(), Some(3));
    assert!(stderr(&broken).contains("clause: m-monotonicity"));
    assert_eq!(kolmo(&["validate", "--model", &fixture("malformed.json")]).status.code(), Some(2));
    assert_eq!(kolmo(&["validate", "--model", &fixture("missing.json")]).status.code(), Some(2));
    assert_eq!(kolmo(&["frobnicate"]).status.code(), Some(64));
    assert_eq!(kolmo(&["simulate", "--model", &fixture("langevin.json"), "--from", "0,0,0", "--to", "1"]).status.code(), Some(64));
    assert_eq!(kolmo(&["--help"]).status.code(), Some(0));
    let bad_point = kolmo(&["control", "--model", &fixture("langevin.json"), "--from", "0,0", "--to", "1,1,0"]);
    assert_eq!(bad_point.status.code(), Some(64));
}

#[test]
fn chain_trace() {
    let o = kolmo(&[
        "chain", "--model", &fixture("langevin.json"), "--from", "0,0,0", "--to", "1,1,0", "--beta", "0.5", "--r", "0.25",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let s = summary(&o)["summary"].clone();
    let j = s["J"].as_u64().unwrap() as usize;
    let csv = stdout(&o);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "j,t,gamma1,gamma2,step_cost,clause");
    assert_eq!(lines.len(), j + 1);
    assert_eq!(s["verified"], true);
    let v = s["V"].as_f64().unwrap();
    assert!((v - 4.0).abs() < 1e-9, "V = {v}");
    let last: Vec<&str> = lines[j].split(',').collect();
    assert_eq!(last[1].parse::<f64>().unwrap(), 1.0);
    assert!((last[2].parse::<f64>().unwrap() - 1.0).abs() < 1e-9);
}

#[test]
fn control_csv_is_finite_and_reaches_target() {
    let o = kolmo(&["control", "--model", &fixture("langevin.json"), "--from", "0,0,0", "--to", "1,1,0", "--n", "11"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = stdout(&o);
    assert_eq!(csv.lines().count(), 12);
    for line in csv.lines().skip(1) {
        assert!(line.split(',').all(|f| f.parse::<f64>().unwrap().is_finite()));
    }
    let last: Vec<f64> = csv.lines().last().unwrap().split(',').map(|f| f.parse().unwrap()).collect();
    assert!((last[1] - 1.0).abs() < 1e-8 && last[2].abs() < 1e-8);
    assert!((last[4] - 4.0).abs() < 1e-9);
}

#[test]
fn out_dir_and_determinism() {
    let base = std::env::temp_dir().join(format!("kolmo-cli-{}", std::process::id()));
    let run = |dir: &str| {
        let path = base.join(dir);
        let o = kolmo(&[
            "--out", path.to_str().unwrap(), "simulate", "--model", &fixture("langevin.json"), "--from", "0,0,0", "--to", "1",
            "--seed", "7", "--paths", "20000", "--steps", "20", "--grid", "2:3",
        ]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        path
    };
    let (a, b) = (run("a"), run("b"));
    let csv_a = std::fs::read(a.join("simulate.csv")).unwrap();
    assert_eq!(csv_a, std::fs::read(b.join("simulate.csv")).unwrap());
    assert_eq!(String::from_utf8(csv_a).unwrap().lines().count(), 10);
    let manifest: serde_json::Value = serde_json::from_slice(&std::fs::read(a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 7);
    assert_eq!(manifest["params"]["paths"], 20000);
    assert!(a.join("simulate.json").exists());
    std::fs::remove_dir_all(&base).ok();
}

#[test]
fn verify_bounds_exact_branch() {
    let o = kolmo(&[
        "verify-bounds", "--model", &fixture("sinusoid.json"), "--from", "0,0", "--to", "1", "--lambda-minus", "1",
        "--lambda-plus", "4", "--seed", "1", "--paths", "1000", "--grid", "3:25",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let s = summary(&o)["summary"].clone();
    assert_eq!(s["exact"], true);
    assert_eq!(s["psd_sandwich"]["holds"], true);
    assert_eq!(stdout(&o).lines().count(), 26);
}

#[test]
fn gramian_kernel_equivalence() {
    let g = kolmo(&["gramian", "--model", &fixture("langevin.json"), "--tau", "1"]);
    assert_eq!(g.status.code(), Some(0));
    let row: Vec<f64> = stdout(&g).lines().nth(1).unwrap().split(',').map(|f| f.parse().unwrap()).collect();
    let expected = [1.0, 1.0, 0.5, 0.5, 1.0 / 3.0];
    for (a, b) in row.iter().zip(expected) {
        assert!((a - b).abs() < 1e-12);
    }
    let k = kolmo(&["kernel", "--model", &fixture("langevin.json"), "--from", "0,0,0", "--to", "1,0,0"]);
    assert_eq!(k.status.code(), Some(0), "{}", stderr(&k));
    let row: Vec<f64> = stdout(&k).lines().nth(1).unwrap().split(',').map(|f| f.parse().unwrap()).collect();
    let gamma = 12f64.sqrt() / (2.0 * std::f64::consts::PI);
    assert!((row[2] - gamma).abs() < 1e-12 * gamma);
    let e = kolmo(&["equivalence", "--model", &fixture("langevin.json")]);
    assert_eq!(e.status.code(), Some(0));
    let det: f64 = stdout(&e).lines().nth(1).unwrap().split(',').nth(1).unwrap().parse().unwrap();
    assert!((det - 1.0).abs() < 1e-12);
}
