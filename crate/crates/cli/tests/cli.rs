use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rtpr::io::FitArtifact;

fn rtpr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rtpr")).args(args).output().unwrap()
}

fn ok(out: Output) -> Output {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Two groups of four curves; curve 4 of group 2 is shifted.
fn dataset(dir: &Path) -> PathBuf {
    let mut s = String::from("group,curve,x,y\n");
    for g in 1..=2 {
        for c in 1..=4 {
            for k in 0..12 {
                let x = k as f64 * 0.25;
                let wiggle = 0.05 * ((c * 7 + k * 3 + g) % 5) as f64 - 0.1;
                let shift = if g == 2 && c == 4 { 1.5 } else { 0.0 };
                s.push_str(&format!("{g},{c},{x},{}\n", (2.0 * x).sin() + g as f64 * 0.2 + wiggle + shift));
            }
        }
    }
    let path = dir.join("data.csv");
    std::fs::write(&path, s).unwrap();
    path
}

fn rows(path: &Path) -> Vec<Vec<String>> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| l.split(',').map(String::from).collect())
        .collect()
}

#[test]
fn fit_predict_diagnose_flow() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path());
    let fit = dir.path().join("fit.json");
    ok(rtpr(&["fit", "--data", p(&data), "--out", p(&fit)]));

    let pred = dir.path().join("pred.csv");
    ok(rtpr(&["predict", "--fit", p(&fit), "--at", "0:3:121", "--out", p(&pred)]));
    let r = rows(&pred);
    assert_eq!(r.len(), 242);
    assert_eq!(r.iter().filter(|row| row[0] == "1").count(), 121);
    for row in &r {
        let v: Vec<f64> = row[2..].iter().map(|s| s.parse().unwrap()).collect();
        assert!(v[1] > 0.0 && v[2] < v[0] && v[0] < v[3]);
    }

    let diag = dir.path().join("diag.csv");
    ok(rtpr(&["diagnose", "--fit", p(&fit), "--out", p(&diag)]));
    let flagged: Vec<(String, String)> =
        rows(&diag).into_iter().filter(|r| r[4] == "1").map(|r| (r[0].clone(), r[1].clone())).collect();
    assert_eq!(flagged, [("2".to_string(), "4".to_string())]);
}

#[test]
fn predicting_at_the_design_reproduces_the_fit() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path());
    let fit = dir.path().join("fit.json");
    ok(rtpr(&["fit", "--data", p(&data), "--out", p(&fit)]));
    let query = dir.path().join("q.csv");
    let xs: Vec<String> = (0..12).map(|k| format!("{:?}", k as f64 * 0.25)).collect();
    std::fs::write(&query, format!("group,x\n{}\n", xs.iter().map(|x| format!("1,{x}")).collect::<Vec<_>>().join("\n")))
        .unwrap();
    let pred = dir.path().join("pred.csv");
    ok(rtpr(&["predict", "--fit", p(&fit), "--at", p(&query), "--out", p(&pred)]));
    let artifact = FitArtifact::read(&fit).unwrap();
    let r = rows(&pred);
    assert_eq!(r.len(), 12);
    for (k, row) in r.iter().enumerate() {
        let mean: f64 = row[2].parse().unwrap();
        // the fitted curve carries the diagonal jitter, the cross-kernel does not
        assert!((mean - artifact.fit.f_hat[0][k]).abs() < 1e-6, "{k}: {mean} vs {}", artifact.fit.f_hat[0][k]);
    }
}

#[test]
fn drop_removes_a_curve() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path());
    let fit = dir.path().join("fit.json");
    ok(rtpr(&["fit", "--data", p(&data), "--out", p(&fit), "--drop", "2:4"]));
    let a = FitArtifact::read(&fit).unwrap();
    assert_eq!(a.fit.data.groups[1].j(), 3);
    assert_eq!(a.fit.data.groups[0].j(), 4);
    assert_eq!(rtpr(&["fit", "--data", p(&data), "--out", p(&fit), "--drop", "2:9"]).status.code(), Some(2));
}

#[test]
fn rule_multiplier_changes_flags() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path());
    let fit = dir.path().join("fit.json");
    ok(rtpr(&["fit", "--data", p(&data), "--out", p(&fit)]));
    let count = |mult: &str| {
        let diag = dir.path().join(format!("diag{mult}.csv"));
        ok(rtpr(&["diagnose", "--fit", p(&fit), "--out", p(&diag), "--rule-mult", mult]));
        rows(&diag).iter().filter(|r| r[4] == "1").count()
    };
    assert!(count("0.5") > count("3"));
    assert_eq!(count("1e9"), 0);
}

#[test]
fn error_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.csv");
    std::fs::write(&empty, "group,curve,x,y\n").unwrap();
    let out = dir.path().join("fit.json");
    let r = rtpr(&["fit", "--data", p(&empty), "--out", p(&out)]);
    assert_eq!(r.status.code(), Some(2));
    assert!(!String::from_utf8_lossy(&r.stderr).is_empty());

    let data = dataset(dir.path());
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "model = \"gp-tp\"\nshapes = 3\n").unwrap();
    assert_eq!(rtpr(&["fit", "--data", p(&data), "--config", p(&bad), "--out", p(&out)]).status.code(), Some(2));

    let gpgp = dir.path().join("gpgp.toml");
    std::fs::write(&gpgp, "model = \"gp-gp\"\n").unwrap();
    ok(rtpr(&["fit", "--data", p(&data), "--config", p(&gpgp), "--out", p(&out)]));
    let diag = dir.path().join("diag.csv");
    assert_eq!(rtpr(&["diagnose", "--fit", p(&out), "--out", p(&diag)]).status.code(), Some(5));

    assert_eq!(rtpr(&["predict", "--fit", p(&out), "--at", "3:0:x", "--out", p(&diag)]).status.code(), Some(2));
    assert_eq!(rtpr(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn simulate_is_thread_count_invariant() {
    let dir = tempfile::tempdir().unwrap();
    let config = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/two_group_mse.cfg");
    let run = |threads: &str| {
        let out = dir.path().join(format!("sim{threads}.csv"));
        let r = Command::new(env!("CARGO_BIN_EXE_rtpr"))
            .env("RTPR_THREADS", threads)
            .args(["simulate", "--config", p(&config), "--out", p(&out), "--reps", "2", "--seed", "5"])
            .output()
            .unwrap();
        ok(r);
        let reps = dir.path().join(format!("sim{threads}.reps.csv"));
        (std::fs::read(&out).unwrap(), std::fs::read(&reps).unwrap())
    };
    assert_eq!(run("1"), run("3"));
    let bad = Command::new(env!("CARGO_BIN_EXE_rtpr"))
        .env("RTPR_THREADS", "zero")
        .args(["simulate", "--config", p(&config), "--out", "/dev/null"])
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(2));
}
