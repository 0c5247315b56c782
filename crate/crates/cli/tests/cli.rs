use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

fn eevc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_eevc"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Data lines of a CSV, without provenance comments.
fn rows(path: &Path) -> Vec<String> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(str::to_string)
        .collect()
}

#[test]
fn solve_tiny_writes_artifacts() {
    let out = tempfile::tempdir().unwrap();
    let o = eevc(&[
        "solve",
        "--scenario",
        s(&fixture("tiny")),
        "--seed",
        "1",
        "--lambda-max",
        "0",
        "--out",
        s(out.path()),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(o.stdout.is_empty());
    for f in ["schedule.csv", "gantt.json", "violations.csv", "trace.csv", "summary.json"] {
        let text = fs::read_to_string(out.path().join(f)).unwrap();
        assert!(text.contains("eevc"), "{f} lacks provenance");
        assert!(text.contains("seed"), "{f} lacks seed");
    }
    assert_eq!(rows(&out.path().join("schedule.csv"))[0], "taz,t,charging");
}

#[test]
fn missing_network_names_the_path() {
    let out = tempfile::tempdir().unwrap();
    let o = eevc(&[
        "solve",
        "--scenario",
        s(&fixture("tiny")),
        "--network",
        "/no/such/network.json",
        "--seed",
        "1",
        "--out",
        s(out.path()),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("/no/such/network.json"), "{}", stderr(&o));
}

#[test]
fn huge_budget_equals_naive() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let scen = fixture("weak_feeder");
    let o = eevc(&["solve", "--scenario", s(&scen), "--seed", "1", "--lambda-max", "1e9", "--out", s(a.path())]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let o = eevc(&["solve", "--scenario", s(&scen), "--naive", "--out", s(b.path())]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(rows(&a.path().join("schedule.csv")), rows(&b.path().join("schedule.csv")));
    assert_eq!(rows(&a.path().join("evs_schedule.csv")), rows(&b.path().join("evs_schedule.csv")));
}

#[test]
fn two_point_sweep_on_tiny() {
    let out = tempfile::tempdir().unwrap();
    let o = eevc(&[
        "sweep",
        "--scenario",
        s(&fixture("tiny")),
        "--seed",
        "1",
        "--lambdas",
        "0.5,0",
        "--out",
        s(out.path()),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let r = rows(&out.path().join("sweep.csv"));
    assert!(r[0].starts_with("lambda,charge_time_steps"));
    assert_eq!(r.len(), 3);
    let time = |line: &str| line.split(',').nth(1).unwrap().parse::<usize>().unwrap();
    assert!(time(&r[1]) >= time(&r[2]));
    assert!(out.path().join("lambda_01/gantt.json").exists());
    assert!(out.path().join("lambda_02/gantt.json").exists());
}

#[test]
fn weak_feeder_sweep_trades_time_for_violation() {
    let out = tempfile::tempdir().unwrap();
    let o = eevc(&[
        "sweep",
        "--scenario",
        s(&fixture("weak_feeder")),
        "--seed",
        "1",
        "--lambdas",
        "0,0.02,0.1",
        "--out",
        s(out.path()),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let r = rows(&out.path().join("sweep.csv"));
    let times: Vec<usize> = r[1..]
        .iter()
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert!(times.windows(2).all(|w| w[0] >= w[1]), "{times:?}");
    assert!(times[0] > times[2]);
}

#[test]
fn empty_lambda_list_is_a_usage_error() {
    let out = tempfile::tempdir().unwrap();
    let o = eevc(&["sweep", "--scenario", s(&fixture("tiny")), "--seed", "1", "--lambdas", "", "--out", s(out.path())]);
    assert_eq!(o.status.code(), Some(1));
    assert!(!stderr(&o).is_empty());
    assert!(!out.path().join("sweep.csv").exists());
}

#[test]
fn repeated_lambda_is_deduplicated_with_warning() {
    let out = tempfile::tempdir().unwrap();
    let o = eevc(&[
        "sweep",
        "--scenario",
        s(&fixture("tiny")),
        "--seed",
        "1",
        "--lambdas",
        "0,0,0.1",
        "--out",
        s(out.path()),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stderr(&o).contains("warning"), "{}", stderr(&o));
    assert_eq!(rows(&out.path().join("sweep.csv")).len(), 3);
}

#[test]
fn report_on_three_taz_run() {
    let scen = tempfile::tempdir().unwrap();
    let run = tempfile::tempdir().unwrap();
    let o = eevc(&[
        "generate",
        "--buses",
        "6",
        "--n-tazs",
        "3",
        "--evs-per-taz",
        "1",
        "--steps",
        "16",
        "--beta",
        "4",
        "--seed",
        "3",
        "--out",
        s(scen.path()),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let o = eevc(&["solve", "--scenario", s(scen.path()), "--naive", "--out", s(run.path())]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let o = eevc(&["report", "--out", s(run.path())]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let rep: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(run.path().join("report.json")).unwrap()).unwrap();
    let bars = rep["gantt"]["bars"].as_array().unwrap();
    assert_eq!(bars.len(), 3);
    for b in bars {
        assert!(b["start_t"].as_u64().unwrap() <= b["end_t"].as_u64().unwrap());
    }
}

#[test]
fn report_tradeoff_copies_sweep_rows() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("sweep.csv"),
        "# tool: hand written\nlambda,charge_time_steps,viol_total,viol_count,iters,status\n\
         0,7,0,0,3,converged\n0.5,9,0.25,2,1,converged\n",
    )
    .unwrap();
    let o = eevc(&["report", "--out", s(dir.path())]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let rep: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    let t = &rep["tradeoff"];
    assert_eq!(t["lambda"], serde_json::json!([0.0, 0.5]));
    assert_eq!(t["charge_time_steps"], serde_json::json!([7, 9]));
    assert_eq!(t["viol_total"], serde_json::json!([0.0, 0.25]));
    assert_eq!(t["viol_count"], serde_json::json!([0, 2]));
}

#[test]
fn report_without_artifacts_fails() {
    let dir = tempfile::tempdir().unwrap();
    let o = eevc(&["report", "--out", s(dir.path())]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn stochastic_commands_need_a_seed() {
    let out = tempfile::tempdir().unwrap();
    let o = eevc(&["solve", "--scenario", s(&fixture("tiny")), "--out", s(out.path())]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--seed"), "{}", stderr(&o));
}

#[test]
fn pf_prints_voltage_csv() {
    let o = eevc(&["pf", "--scenario", s(&fixture("tiny")), "--t", "3"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = String::from_utf8(o.stdout).unwrap();
    let lines: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(lines[0], "node,mag_pu,angle_deg,v_pu2");
    for l in &lines[1..] {
        let f: Vec<&str> = l.split(',').collect();
        let mag: f64 = f[1].parse().unwrap();
        let v: f64 = f[3].parse().unwrap();
        assert!((mag * mag - v).abs() < 1e-9);
    }
}

#[test]
fn oracle_on_weak_feeder() {
    let out = tempfile::tempdir().unwrap();
    let o = eevc(&["oracle", "--scenario", s(&fixture("weak_feeder")), "--lambda-max", "0", "--out", s(out.path())]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.path().join("oracle.json")).unwrap()).unwrap();
    assert_eq!(v["gamma_max"], 6);
    assert_eq!(v["violation_total"], 0.0);
}

#[test]
fn solve_is_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        let o = eevc(&[
            "solve",
            "--scenario",
            s(&fixture("weak_feeder")),
            "--seed",
            "4",
            "--lambda-max",
            "0",
            "--out",
            s(d.path()),
        ]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    }
    let mut names: Vec<_> = fs::read_dir(a.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert!(names.len() >= 7);
    for n in names {
        assert_eq!(fs::read(a.path().join(&n)).unwrap(), fs::read(b.path().join(&n)).unwrap(), "{n:?}");
    }
}
