use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use mfplan::grid::read_density_slice;
use serde_json::Value;

fn mfplan(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mfplan")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = mfplan(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn json(path: &Path) -> Value {
    serde_json::from_slice(&fs::read(path).unwrap()).unwrap()
}

fn gen_pair(dir: &Path) -> (String, String) {
    let d = dir.to_str().unwrap();
    let common = ["--nx", "32", "--R", "1", "--sigma", "0.25"];
    ok(&[&["--out", d, "gen", "--kind", "gaussian", "--center=-0.2", "--name", "a.bin"][..], &common].concat());
    ok(&[&["--out", d, "gen", "--kind", "gaussian", "--center", "0.2", "--name", "b.bin"][..], &common].concat());
    (dir.join("a.bin").to_str().unwrap().into(), dir.join("b.bin").to_str().unwrap().into())
}

#[test]
fn gen_is_deterministic_and_normalized() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path().to_str().unwrap();
    let args = ["--out", d, "gen", "--kind", "gaussian", "--sigma", "0.2", "--R", "2", "--nx", "128", "--noise", "0.1", "--seed", "4"];
    ok(&[&args[..], &["--name", "x.bin"]].concat());
    ok(&[&args[..], &["--name", "y.bin"]].concat());
    let (x, y) = (fs::read(tmp.path().join("x.bin")).unwrap(), fs::read(tmp.path().join("y.bin")).unwrap());
    assert_eq!(x, y);
    let m = read_density_slice(&tmp.path().join("x.bin")).unwrap();
    assert!((m.mass() - 1.0).abs() <= 1e-12);

    ok(&["--out", d, "gen", "--kind", "bimodal", "--center=-1", "--center2", "1", "--nx", "128", "--name", "bi.bin"]);
    let bi = read_density_slice(&tmp.path().join("bi.bin")).unwrap();
    let half: f64 = bi.values[..64].iter().sum::<f64>() * bi.space.dx();
    assert!((half - 0.5).abs() < 1e-9, "{half}");
}

#[test]
fn solve_diagnose_and_rerun_agree() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = gen_pair(tmp.path());
    let run = tmp.path().join("run");
    let r = run.to_str().unwrap();
    ok(&["--out", r, "solve", "--m0", &a, "--m1", &b, "--nt", "16", "--iters", "400"]);
    for f in ["m.bin", "w.bin", "u.bin", "alpha.bin", "report.json", "config.json", "manifest.json", "history.csv"] {
        assert!(run.join(f).exists(), "{f}");
    }
    let report = fs::read(run.join("report.json")).unwrap();

    let diag = ok(&["diagnose", "--run", r]);
    assert!(serde_json::from_slice::<Value>(&diag.stdout).is_ok());
    assert_eq!(fs::read(run.join("report.json")).unwrap(), report);

    let rerun = tmp.path().join("rerun");
    ok(&["--out", rerun.to_str().unwrap(), "solve", "--config", run.join("config.json").to_str().unwrap()]);
    assert_eq!(fs::read(rerun.join("report.json")).unwrap(), report);
    assert_eq!(fs::read(rerun.join("m.bin")).unwrap(), fs::read(run.join("m.bin")).unwrap());

    let manifest = json(&run.join("manifest.json"));
    assert_eq!(manifest["command"], "solve");
    assert_eq!(manifest["config_sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn kl_singleton_matches_solve() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = gen_pair(tmp.path());
    let solver = ["--nt", "16", "--iters", "300"];
    let kl = tmp.path().join("kl");
    ok(&[&["--out", kl.to_str().unwrap(), "kl", "--m0", &a, "--m1", &b, "--a", "1"][..], &solver].concat());
    let run = tmp.path().join("run");
    ok(&[&["--out", run.to_str().unwrap(), "solve", "--m0", &a, "--m1", &b, "--preset", "kl", "--a", "1"][..], &solver]
        .concat());
    let cost = json(&kl.join("kl.json"))["costs"][0]["cost"].as_f64().unwrap();
    let bval = json(&run.join("report.json"))["diagnostics"]["B"].as_f64().unwrap();
    assert!((cost - bval).abs() <= 1e-12, "{cost} vs {bval}");
}

#[test]
fn trace_repeats_with_the_same_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = gen_pair(tmp.path());
    let run = tmp.path().join("run");
    let r = run.to_str().unwrap();
    ok(&["--out", r, "solve", "--m0", &a, "--m1", &b, "--nt", "16", "--iters", "300"]);
    let p1 = tmp.path().join("p1.csv");
    let p2 = tmp.path().join("p2.csv");
    ok(&["--out", p1.to_str().unwrap(), "trace", "--run", r, "--n", "200", "--seed", "5"]);
    ok(&["--out", p2.to_str().unwrap(), "trace", "--run", r, "--n", "200", "--seed", "5"]);
    let text = fs::read_to_string(&p1).unwrap();
    assert_eq!(text, fs::read_to_string(&p2).unwrap());
    assert!(text.starts_with("id,t,x,cost_so_far\n"));
    assert!(tmp.path().join("summary.json").exists());
}

#[test]
fn failures_report_json_and_exit_nonzero() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nope.bin");
    let out = mfplan(&["solve", "--m0", missing.to_str().unwrap(), "--m1", missing.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert!(err["error"].is_string() && err["message"].as_str().unwrap().contains("nope.bin"));

    let out = mfplan(&["solve", "--bogus"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(mfplan(&["--help"]).status.success());
}
