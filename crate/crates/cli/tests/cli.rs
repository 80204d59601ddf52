use std::fs;
use std::path::PathBuf;
use std::process::{Command, Output};

use serde_json::Value;

fn case(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/cases").join(name)
}

fn lropf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lropf")).args(args).output().expect("spawn lropf")
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| panic!("bad json ({e}): {}", String::from_utf8_lossy(&out.stdout)))
}

fn csv_rows(out: &Output) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_reader(out.stdout.as_slice());
    r.records().map(|rec| rec.unwrap().iter().map(String::from).collect()).collect()
}

#[test]
fn solve_two_bus() {
    let out = lropf(&["solve", case("case2w.m").to_str().unwrap(), "--mu", "0.01"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v = json(&out);
    let obj = v["objective"].as_f64().unwrap();
    assert!((obj - 877.78).abs() <= 877.78e-3, "{obj}");
    assert_eq!(v["status"], "converged");
    assert!(v["infeasibility"].as_f64().unwrap() <= 1e-5);
    assert_eq!(v["rank"], 1);
    let volts = v["voltages"].as_array().unwrap();
    assert_eq!(volts.len(), 2);
    for b in volts {
        let vm = b["vm"].as_f64().unwrap();
        assert!((0.9..=1.1 + 1e-3).contains(&vm), "{vm}");
    }
}

#[test]
fn solve_ieee14() {
    let out = lropf(&["solve", case("case14.m").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let obj = json(&out)["objective"].as_f64().unwrap();
    assert!((obj - 8082.0).abs() <= 8082.0 * 5e-3, "{obj}");
}

#[test]
fn missing_file_is_input_error() {
    let out = lropf(&["solve", "missing.m"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(out.stdout.is_empty());
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.m"));
}

#[test]
fn bad_schedule_is_input_error() {
    let out = lropf(&["solve", case("case9.m").to_str().unwrap(), "--mu-schedule", "sometimes"]);
    assert_eq!(out.status.code(), Some(1));
    let out = lropf(&["solve", case("case9.m").to_str().unwrap(), "--mu-schedule", "adaptive:1.5:2"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn iteration_limit_exit_code() {
    let out = lropf(&["solve", case("case9.m").to_str().unwrap(), "--max-iter", "3"]);
    assert_eq!(out.status.code(), Some(2));
    let v = json(&out);
    assert_eq!(v["status"], "iteration-limit");
    assert!(v.get("voltages").is_none());
    assert!(v["certificate"].is_null());
}

#[test]
fn json_keys_are_stable() {
    let keys = |v: &Value| {
        let mut k: Vec<String> = v.as_object().unwrap().keys().filter(|k| *k != "voltages").cloned().collect();
        k.sort();
        k
    };
    let a = json(&lropf(&["solve", case("case2w.m").to_str().unwrap()]));
    let b = json(&lropf(&["solve", case("case6ww.m").to_str().unwrap(), "--rank-max", "1"]));
    assert_eq!(keys(&a), keys(&b));
    assert_eq!(keys(&a), ["certificate", "infeasibility", "iterations", "objective", "rank", "status", "time_s"]);
}

#[test]
fn same_seed_same_json() {
    let run = || {
        let mut v = json(&lropf(&["solve", case("case9.m").to_str().unwrap(), "--seed", "3", "--max-iter", "400"]));
        v["time_s"] = Value::Null;
        serde_json::to_string(&v).unwrap()
    };
    assert_eq!(run(), run());
}

#[test]
fn fixed_trace_all_accepted() {
    let out = lropf(&["trace", case("case9.m").to_str().unwrap(), "--rank-max", "1", "--max-iter", "60"]);
    let mut r = csv::Reader::from_reader(out.stdout.as_slice());
    assert_eq!(r.headers().unwrap(), vec!["iter", "objective", "T", "mu", "accepted"]);
    let rows = csv_rows(&out);
    assert_eq!(rows.len(), 61);
    assert!(rows.iter().all(|r| r[4] == "1"));
    assert!(rows.iter().enumerate().all(|(i, r)| r[0] == i.to_string()));
}

#[test]
fn trace_has_one_row_per_iteration_plus_start() {
    let out = lropf(&["solve", case("case2w.m").to_str().unwrap(), "--rank-max", "1", "--max-iter", "5000"]);
    let iterations = json(&out)["iterations"].as_u64().unwrap() as usize;
    let out = lropf(&["trace", case("case2w.m").to_str().unwrap(), "--rank-max", "1", "--max-iter", "5000"]);
    assert_eq!(csv_rows(&out).len(), iterations + 1);
}

#[test]
fn adaptive_trace_rejects_then_accepts() {
    let out = lropf(&["trace", case("case5.m").to_str().unwrap(), "--rank-max", "1", "--mu-schedule", "adaptive", "--max-iter", "300"]);
    let acc: Vec<bool> = csv_rows(&out).iter().map(|r| r[4] == "1").collect();
    let first_reject = acc.iter().position(|a| !a).expect("some rejected rows");
    assert!(first_reject < 20);
    assert!(acc[acc.len() - 20..].iter().any(|a| *a));
}

#[test]
fn save_restart_certify() {
    let dir = tempfile::tempdir().unwrap();
    let state = dir.path().join("state.txt");
    let c = case("case2w.m");
    let out = lropf(&["solve", c.to_str().unwrap(), "--save-state", state.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let first = json(&out)["objective"].as_f64().unwrap();

    let out = lropf(&["certify", c.to_str().unwrap(), "--state", state.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let v = json(&out);
    assert_eq!(v["certificate"]["rank_numeric"], 1);
    assert!(v["max_violation"].as_f64().unwrap() < 1e-2);

    let out = lropf(&["solve", c.to_str().unwrap(), "--restart", state.to_str().unwrap(), "--rank-max", "1"]);
    let again = json(&out)["objective"].as_f64().unwrap();
    assert!((again - first).abs() < 1.0, "{again} vs {first}");

    let out = lropf(&["solve", case("case9.m").to_str().unwrap(), "--restart", state.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn bench_empty_dir() {
    let dir = tempfile::tempdir().unwrap();
    let out = lropf(&["bench", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "case,objective,infeasibility,iterations,time_s,status");
}

#[test]
fn bench_isolates_corrupt_case() {
    let dir = tempfile::tempdir().unwrap();
    fs::copy(case("case9.m"), dir.path().join("a.m")).unwrap();
    fs::write(dir.path().join("b.m"), "mpc.bus = [1 2;\n").unwrap();
    fs::copy(case("case2w.m"), dir.path().join("c.m")).unwrap();
    let out = lropf(&["bench", dir.path().to_str().unwrap(), "--max-iter", "50", "--rank-max", "1"]);
    let rows = csv_rows(&out);
    assert_eq!(rows.iter().map(|r| r[0].as_str()).collect::<Vec<_>>(), ["a", "b", "c"]);
    assert!(rows[1][5].starts_with("error"));
    assert!(rows[1][1].is_empty());
    for r in [&rows[0], &rows[2]] {
        assert!(!r[5].starts_with("error"));
        assert!(r[1].parse::<f64>().is_ok());
    }
}

#[test]
fn bench_manifest_overrides() {
    let dir = tempfile::tempdir().unwrap();
    fs::copy(case("case9.m"), dir.path().join("case9.m")).unwrap();
    fs::copy(case("case2w.m"), dir.path().join("case2w.m")).unwrap();
    let manifest = dir.path().join("bench.toml");
    fs::write(
        &manifest,
        "[defaults]\nrank-max = 1\nmax-iter = 7\n\n[[case]]\nfile = \"case9.m\"\n\n[[case]]\nfile = \"case2w.m\"\nname = \"two\"\nmax-iter = 4\n\n[[case]]\nfile = \"case9.m\"\nname = \"again\"\n",
    )
    .unwrap();
    let out = lropf(&["bench", dir.path().to_str().unwrap(), "--manifest", manifest.to_str().unwrap()]);
    let rows = csv_rows(&out);
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[0][0], "case9");
    assert_eq!(rows[1][0], "two");
    assert_eq!(rows[0][3], "7");
    assert_eq!(rows[1][3], "4");
    assert_eq!(rows[0][1], rows[2][1]);
}

#[test]
fn dump_matrix() {
    let out = lropf(&["dump-matrix", case("case2w.m").to_str().unwrap(), "--family", "h", "--index", "1"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    // |V₂|² = x₁² + x₃²
    assert_eq!(text.lines().collect::<Vec<_>>(), ["1 1 1e0", "3 3 1e0"]);
    let out = lropf(&["dump-matrix", case("case2w.m").to_str().unwrap(), "--family", "w", "--index", "0"]);
    assert_eq!(out.status.code(), Some(1));
    let out = lropf(&["dump-matrix", case("case2w.m").to_str().unwrap(), "--family", "t", "--index", "9"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn threads_do_not_change_the_answer() {
    let run = |t: &str| {
        let v = json(&lropf(&["solve", case("case14.m").to_str().unwrap(), "--threads", t]));
        assert_eq!(v["status"], "converged");
        v["objective"].as_f64().unwrap()
    };
    assert_eq!(run("2"), run("3"));
}
