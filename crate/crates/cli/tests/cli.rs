use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};
use tempfile::TempDir;

fn tdlab() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_tdlab"));
    cmd.env_remove("TDLAB_OUTPUT_DIR").env_remove("RUST_LOG");
    cmd
}

fn run(args: &[&str]) -> Output {
    tdlab().args(args).output().expect("spawn tdlab")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn write_json(dir: &Path, name: &str, value: &Value) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, serde_json::to_string_pretty(value).unwrap()).unwrap();
    path
}

fn gen_example1(dir: &Path) -> PathBuf {
    let path = dir.join("example1.json");
    let out = run(&["gen", "example1", "-o", path.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    path
}

fn small(spec: &Path) -> Vec<String> {
    vec![
        spec.to_str().unwrap().into(),
        "--override".into(),
        "n_iterations=2000".into(),
        "--override".into(),
        "n_runs=6".into(),
    ]
}

fn stdout_json(out: &Output) -> Value {
    assert!(out.status.success(), "{}", stderr(out));
    serde_json::from_slice(&out.stdout).unwrap()
}

#[test]
fn solve_example1() {
    let dir = TempDir::new().unwrap();
    let spec = gen_example1(dir.path());
    let report = stdout_json(&run(&["solve", spec.to_str().unwrap()]));
    let mu = report["mu"].as_f64().unwrap();
    let theta = report["theta_star"][0].as_f64().unwrap();
    assert!((mu - 35.0 / 11.0).abs() < 1e-10, "{mu}");
    assert!((theta - 6.18375).abs() < 1e-4, "{theta}");
    assert!(report["fixed_point_residual"].as_f64().unwrap() < 1e-9);
}

#[test]
fn gen_example2_round_trips_through_every_command() {
    let dir = TempDir::new().unwrap();
    let spec = dir.path().join("ex2.json");
    let out = run(&["gen", "example2", "--n-states", "20", "--d", "2", "--seed", "4", "-o", spec.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));

    let solve = stdout_json(&run(&["solve", spec.to_str().unwrap()]));
    assert_eq!(solve["theta_star"].as_array().unwrap().len(), 2);
    assert_eq!(solve["psi"].as_array().unwrap().len(), 20);

    let mixing = stdout_json(&run(&["mixing", spec.to_str().unwrap()]));
    let rho = mixing["rho"].as_f64().unwrap();
    assert!((0.0..1.0).contains(&rho));

    let bounds = stdout_json(&run(&["bounds", spec.to_str().unwrap()]));
    assert_eq!(bounds["td0"]["admissibility"]["admissible"], json!(true));
    assert!(bounds["ctd"]["constants"]["c1"].as_f64().unwrap() <= 0.5 + 1e-12);

    let mut args = vec!["run".to_string()];
    args.extend(small(&spec));
    let out = tdlab().args(&args).output().unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    let csv = String::from_utf8(out.stdout).unwrap();
    let header = csv.lines().next().unwrap();
    assert!(header.starts_with("iteration,td0_mean,td0_dev"), "{header}");
    assert!(header.contains("td0avg_mean") && header.contains("ctd_dev"), "{header}");
}

#[test]
fn run_is_deterministic_across_invocations_and_execution_modes() {
    let dir = TempDir::new().unwrap();
    let spec = gen_example1(dir.path());
    let mut args = vec!["run".to_string()];
    args.extend(small(&spec));
    let a = tdlab().args(&args).output().unwrap();
    let b = tdlab().args(&args).output().unwrap();
    args.push("--serial".into());
    let c = tdlab().args(&args).output().unwrap();
    assert!(a.status.success() && b.status.success() && c.status.success());
    assert!(!a.stdout.is_empty());
    assert_eq!(a.stdout, b.stdout);
    assert_eq!(a.stdout, c.stdout);
}

#[test]
fn single_run_has_zero_spread() {
    let dir = TempDir::new().unwrap();
    let spec = gen_example1(dir.path());
    let out = run(&["run", spec.to_str().unwrap(), "--override", "n_runs=1", "--override", "n_iterations=1000"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let csv = String::from_utf8(out.stdout).unwrap();
    let mut lines = csv.lines().filter(|l| !l.starts_with('#'));
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let dev_cols: Vec<usize> = header.iter().enumerate().filter(|(_, h)| h.ends_with("_dev")).map(|(i, _)| i).collect();
    assert_eq!(dev_cols.len(), 3);
    for line in lines {
        let cells: Vec<&str> = line.split(',').collect();
        for &i in &dev_cols {
            assert_eq!(cells[i].parse::<f64>().unwrap(), 0.0, "{line}");
        }
    }
}

#[test]
fn zero_rewards_give_zero_fixed_point() {
    let dir = TempDir::new().unwrap();
    write_json(
        dir.path(),
        "mrp.json",
        &json!({"transition": [[0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5]], "reward": [0.0, 0.0, 0.0], "discount": 0.8}),
    );
    write_json(dir.path(), "features.json", &json!([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]));
    let mut spec: Value = serde_json::from_str(&std::fs::read_to_string(gen_example1(dir.path())).unwrap()).unwrap();
    spec["problem"] = json!({"kind": "files", "mrp": "mrp.json", "features": "features.json"});
    spec["discount"] = Value::Null;
    let spec = write_json(dir.path(), "spec.json", &spec);

    let report = stdout_json(&run(&["solve", spec.to_str().unwrap()]));
    for v in report["theta_star"].as_array().unwrap() {
        assert!(v.as_f64().unwrap().abs() < 1e-14);
    }
    assert_eq!(report["v_pi"].as_array().unwrap().len(), 3);
}

#[test]
fn output_dir_from_environment() {
    let dir = TempDir::new().unwrap();
    let spec = gen_example1(dir.path());
    let outdir = dir.path().join("results");
    let out = tdlab()
        .env("TDLAB_OUTPUT_DIR", &outdir)
        .args(["solve", spec.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(out.stdout.is_empty());
    let written: Value = serde_json::from_str(&std::fs::read_to_string(outdir.join("solve.json")).unwrap()).unwrap();
    assert!(written["mu"].is_number());

    let out = tdlab()
        .env("TDLAB_OUTPUT_DIR", &outdir)
        .args(["run", spec.to_str().unwrap(), "--override", "n_runs=2", "--override", "n_iterations=500"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(std::fs::read_to_string(outdir.join("trace.csv")).unwrap().starts_with("iteration,"));
}

#[test]
fn output_path_and_run_dump() {
    let dir = TempDir::new().unwrap();
    let spec = gen_example1(dir.path());
    let out = tdlab()
        .current_dir(dir.path())
        .args([
            "run",
            spec.to_str().unwrap(),
            "--override",
            "n_runs=3",
            "--override",
            "n_iterations=300",
            "--override",
            "output_path=out/trace.csv",
            "--override",
            "dump_runs=true",
        ])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(dir.path().join("out/trace.csv").exists());
    let dump = std::fs::read_to_string(dir.path().join("out/trace.runs.csv")).unwrap();
    assert!(dump.starts_with("algorithm,run,seed,iteration"));
}

#[test]
fn unknown_override_key_is_a_usage_error() {
    let dir = TempDir::new().unwrap();
    let spec = gen_example1(dir.path());
    let out = run(&["solve", spec.to_str().unwrap(), "--override", "n_runz=3"]);
    assert_eq!(out.status.code(), Some(1));
    let err = stderr(&out);
    assert!(err.contains("n_runs"), "{err}");
}

#[test]
fn unknown_spec_field_is_a_usage_error() {
    let dir = TempDir::new().unwrap();
    let mut spec: Value = serde_json::from_str(&std::fs::read_to_string(gen_example1(dir.path())).unwrap()).unwrap();
    spec["n_itrations"] = json!(10);
    let spec = write_json(dir.path(), "bad.json", &spec);
    let out = run(&["solve", spec.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("n_iterations"), "{}", stderr(&out));
}

#[test]
fn missing_spec_and_bad_arguments_exit_1() {
    assert_eq!(run(&["solve", "/nonexistent/spec.json"]).status.code(), Some(1));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}

#[test]
fn rank_deficient_features_exit_1() {
    let dir = TempDir::new().unwrap();
    write_json(
        dir.path(),
        "mrp.json",
        &json!({"transition": [[0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5]], "reward": [1.0, 0.0, 2.0], "discount": 0.9}),
    );
    write_json(dir.path(), "features.json", &json!([[1.0, 2.0], [2.0, 4.0], [3.0, 6.0]]));
    let mut spec: Value = serde_json::from_str(&std::fs::read_to_string(gen_example1(dir.path())).unwrap()).unwrap();
    spec["problem"] = json!({"kind": "files", "mrp": "mrp.json", "features": "features.json"});
    let spec = write_json(dir.path(), "spec.json", &spec);
    let out = run(&["solve", spec.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1), "{}", stderr(&out));
    assert!(stderr(&out).contains("rank"), "{}", stderr(&out));
}

#[test]
fn inadmissible_step_size_exit_1_unless_overridden() {
    let dir = TempDir::new().unwrap();
    let spec = gen_example1(dir.path());
    let td = json!([{"kind": "td0", "schedule": {"kind": "inverse_linear", "c0": 1.0, "c": 100.0}, "override": false}]);
    let assign = format!("algorithms={td}");
    let out = run(&["run", spec.to_str().unwrap(), "--override", &assign, "--override", "n_runs=2", "--override", "n_iterations=200"]);
    assert_eq!(out.status.code(), Some(1), "{}", stderr(&out));

    let td = json!([{"kind": "td0", "schedule": {"kind": "inverse_linear", "c0": 1.0, "c": 100.0}, "override": true}]);
    let assign = format!("algorithms={td}");
    let out = run(&["run", spec.to_str().unwrap(), "--override", &assign, "--override", "n_runs=2", "--override", "n_iterations=200"]);
    assert!(out.status.success(), "{}", stderr(&out));
}

#[test]
fn all_runs_diverging_exit_2() {
    let dir = TempDir::new().unwrap();
    let spec = gen_example1(dir.path());
    let td = json!([{"kind": "td0", "schedule": {"kind": "constant", "gamma": 50.0}, "override": true}]);
    let assign = format!("algorithms={td}");
    let out = run(&["run", spec.to_str().unwrap(), "--override", &assign, "--override", "n_runs=4", "--override", "n_iterations=5000"]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    assert!(stderr(&out).contains("diverged"), "{}", stderr(&out));
}
