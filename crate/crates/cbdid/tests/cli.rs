//! End-to-end runs of the `cbdid` binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_cbdid"))
}

fn lalonde() -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../data/lalonde.csv")
        .display()
        .to_string()
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("cbdid-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir.join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn json_of(out: &Output) -> Value {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("valid JSON")
}

const LALONDE_ARGS: [&str; 8] = [
    "--treat",
    "treat",
    "--ypre",
    "re74",
    "--ypost",
    "re78",
    "--covars",
    "age,educ,re74,black,hisp,married,nodegr",
];

fn column(v: &Value, section: &str, col: usize) -> Vec<f64> {
    v["sections"][section]["rows"]
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r[col].as_f64().unwrap())
        .collect()
}

#[test]
fn estimate_on_lalonde() {
    let data = lalonde();
    let mut args = vec!["estimate", "--data", &data];
    args.extend(LALONDE_ARGS);
    args.extend(["--format", "json", "--no-banner"]);
    let v = json_of(&run(&args));
    assert_eq!(v["schema"], 1);
    let theta = column(&v, "coefficients", 1);
    assert_eq!(theta.len(), 8);
    assert!(theta.iter().all(|t| t.is_finite()));
    assert!(v["summary"]["att"].as_f64().unwrap().is_finite());
    assert_eq!(v["summary"]["ps_converged"], "true");
    assert!(v["summary"]["foc_norm"].as_f64().unwrap() <= v["summary"]["foc_tolerance"].as_f64().unwrap());
    assert_eq!(v["sections"]["balance"]["rows"].as_array().unwrap().len(), 72);
}

fn write(path: &Path, text: &str) {
    std::fs::write(path, text).unwrap();
}

const SMALL: &str = "d,y0,y1,x,e\n\
1,0.5,2.0,0.3,0.4\n0,0.1,0.2,1.2,0.5\n1,1.0,2.5,0.7,0.6\n0,0.4,0.3,1.9,0.3\n\
1,0.2,1.9,0.1,0.7\n0,0.9,1.1,1.4,0.2\n1,0.3,1.2,1.1,0.5\n0,0.6,0.4,0.4,0.6\n";

#[test]
fn delta_input_matches_levels_input() {
    let levels = scratch("levels.csv");
    write(&levels, SMALL);
    let delta = scratch("delta.csv");
    let mut text = String::from("d,dy,x,e\n");
    for line in SMALL.lines().skip(1) {
        let f: Vec<f64> = line.split(',').map(|s| s.parse().unwrap()).collect();
        text.push_str(&format!("{},{},{},{}\n", f[0], f[2] - f[1], f[3], f[4]));
    }
    write(&delta, &text);
    let base = ["--treat", "d", "--covars", "x", "--ps", "known:e", "--format", "json", "--no-banner"];
    let mut a: Vec<&str> = vec!["estimate", "--data", levels.to_str().unwrap(), "--ypre", "y0", "--ypost", "y1"];
    a.extend(base);
    let mut b: Vec<&str> = vec!["estimate", "--data", delta.to_str().unwrap(), "--delta", "dy"];
    b.extend(base);
    let (va, vb) = (json_of(&run(&a)), json_of(&run(&b)));
    let (ta, tb) = (column(&va, "coefficients", 1), column(&vb, "coefficients", 1));
    for (x, y) in ta.iter().zip(&tb) {
        assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0));
    }
    assert_eq!(va["summary"]["att"].as_f64(), vb["summary"]["att"].as_f64());
}

#[test]
fn input_errors_exit_2() {
    let bad = scratch("bad_ps.csv");
    write(&bad, &SMALL.replace("1,0.5,2.0,0.3,0.4", "1,0.5,2.0,0.3,1.4"));
    let p = bad.to_str().unwrap();
    let out = run(&["estimate", "--data", p, "--treat", "d", "--ypre", "y0", "--ypost", "y1", "--covars", "x", "--ps", "known:e"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("(0, 1)"));

    let data = lalonde();
    let mut args = vec!["select", "--data", &data];
    args.extend(LALONDE_ARGS);
    args.extend(["--criterion", "qicw", "--ps", "known:pscore"]);
    let out = run(&args);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("pscore"));

    let out = run(&["estimate", "--data", "/nonexistent.csv", "--treat", "d", "--delta", "y"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_table_exits_2_listing_ids() {
    let out = run(&["simulate", "--table", "table-9"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    for id in ["att-comparison", "bias-known", "bias-cbd-id", "bias-mle", "sel-known", "sel-cbd-id", "sel-cbd-opt", "sel-mle"] {
        assert!(err.contains(id), "{err}");
    }
}

#[test]
fn separated_groups_exit_3() {
    let sep = scratch("separated.csv");
    write(&sep, "d,dy,x\n1,1,2.0\n1,2,2.5\n1,0,3.0\n0,1,-1.0\n0,0,-2.0\n0,2,-0.5\n");
    let out = run(&["estimate", "--data", sep.to_str().unwrap(), "--treat", "d", "--delta", "dy", "--ps", "mle"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn select_prints_zero_for_unselected() {
    let data = lalonde();
    let mut args = vec!["select", "--data", &data];
    args.extend(LALONDE_ARGS);
    args.extend(["--blocks", "3", "--format", "json", "--no-banner"]);
    let v = json_of(&run(&args));
    let rows = v["sections"]["coefficients"]["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 3);
    let cols: Vec<&str> = v["sections"]["coefficients"]["columns"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| c.as_str().unwrap())
        .collect();
    for r in rows {
        let selected: Vec<&str> = r[2].as_str().unwrap().split_whitespace().collect();
        for (j, name) in cols.iter().enumerate().skip(4) {
            let value = r[j].as_f64().unwrap();
            assert_eq!(value == 0.0, !selected.contains(name), "{name} in {r}");
        }
    }
    let steps = v["sections"]["paths"]["rows"].as_array().unwrap();
    assert!(steps.len() >= 3);
}

#[test]
fn simulate_is_reproducible_and_rerunnable_from_its_output() {
    let a = scratch("sim_a.csv");
    let b = scratch("sim_b.csv");
    let c = scratch("sim_c.csv");
    let common = ["simulate", "--table", "att-comparison", "--reps", "4", "--seed", "7", "--no-banner"];
    let mut args: Vec<&str> = common.to_vec();
    args.extend(["--jobs", "1", "--out", a.to_str().unwrap()]);
    assert!(run(&args).status.success());
    let mut args: Vec<&str> = common.to_vec();
    args.extend(["--jobs", "3", "--out", b.to_str().unwrap()]);
    assert!(run(&args).status.success());
    let ta = std::fs::read_to_string(&a).unwrap();
    assert_eq!(ta, std::fs::read_to_string(&b).unwrap());
    let data_rows = ta.lines().filter(|l| !l.starts_with('#')).count() - 1;
    assert_eq!(data_rows, 24);

    let out = run(&["simulate", "--config", a.to_str().unwrap(), "--out", c.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(ta, std::fs::read_to_string(&c).unwrap());
}

#[test]
fn json_report_and_config_round_trip() {
    let a = scratch("sim.json");
    let out = run(&[
        "simulate", "--table", "bias-mle", "--reps", "3", "--seed", "2", "--format", "json", "--dump-raw", "--no-banner",
        "--out", a.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let text = std::fs::read_to_string(&a).unwrap();
    let v: Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["schema"], 1);
    assert_eq!(v["config"]["dump-raw"], "true");
    assert!(v["config"].get("jobs").is_none() && v["config"].get("out").is_none());
    assert_eq!(v["sections"]["raw"]["rows"].as_array().unwrap().len(), 24 * 3);
    let rerun = run(&["simulate", "--config", a.to_str().unwrap()]);
    assert!(rerun.status.success());
    assert_eq!(String::from_utf8(rerun.stdout).unwrap(), text);
    // Flags given on the command line override the file.
    let other = run(&["simulate", "--config", a.to_str().unwrap(), "--seed", "3"]);
    let w: Value = serde_json::from_slice(&other.stdout).unwrap();
    assert_eq!(w["config"]["seed"], "3");
}

#[test]
fn banner_is_present_by_default() {
    let out = run(&["simulate", "--table", "bias-known", "--reps", "2", "--format", "md"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("_generated by cbdid"));
    assert!(text.contains("| cell |"));
}
