//! End-to-end tests of the `byzgossip` binary: argument handling, exit
//! codes, file layout, and byte determinism of the emitted traces.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn run_in(dir: &Path, args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_byzgossip"));
    cmd.args(args).current_dir(dir).env_remove("BYZGOSSIP_OUT");
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn run(args: &[&str]) -> Output {
    run_in(Path::new("."), args, &[])
}

fn stdout_json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!("stdout is not JSON ({e}): {}", String::from_utf8_lossy(&out.stdout))
    })
}

fn stderr_text(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn exit_code(out: &Output) -> i32 {
    out.status.code().expect("no signal")
}

#[test]
fn spectra_reports_the_breakdown_margins() {
    let out = run(&["spectra", "--gen", "three_clique_ghb 4 2", "--b", "2", "--mu-min", "4"]);
    assert_eq!(exit_code(&out), 0, "{}", stderr_text(&out));
    let v = stdout_json(&out);
    assert!((v["honest"]["mu2"].as_f64().unwrap() - 4.0).abs() < 1e-9);
    assert!((v["margins"]["clipping"].as_f64().unwrap() + 2.0).abs() < 1e-9);
    assert!((v["margins"]["screening"].as_f64().unwrap() + 12.0).abs() < 1e-9);
    assert_eq!(v["membership"]["member"], serde_json::json!(true));
}

#[test]
fn spectra_on_the_complete_graph() {
    let out = run(&["spectra", "--gen", "complete 26"]);
    assert_eq!(exit_code(&out), 0);
    let v = stdout_json(&out);
    assert!((v["full"]["mu2"].as_f64().unwrap() - 26.0).abs() < 1e-9);
    assert_eq!(v["full"]["nodes"], serde_json::json!(26));
}

#[test]
fn malformed_edge_lines_carry_line_numbers() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.edges");
    fs::write(&path, "0 1\n1 twox\n").unwrap();
    let out = run(&["spectra", "--graph", path.to_str().unwrap()]);
    assert_eq!(exit_code(&out), 2);
    let err = stderr_text(&out);
    assert!(err.contains("line 2"), "{err}");
}

#[test]
fn disconnected_honest_subgraph_is_reported_not_fatal() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cut.edges");
    fs::write(&path, "0 1\n1 2\nbyzantine: 1\n").unwrap();
    let out = run(&["spectra", "--graph", path.to_str().unwrap()]);
    assert_eq!(exit_code(&out), 0, "{}", stderr_text(&out));
    let v = stdout_json(&out);
    assert_eq!(v["full"]["connected"], serde_json::json!(true));
    assert_eq!(v["honest"]["connected"], serde_json::json!(false));
    assert_eq!(v["honest"]["mu2"], serde_json::json!(0.0));
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, body).unwrap();
    path
}

const SWEEP_CONFIG: &str = r#"{
  "topology": {"gen": "two_clique_bridge 4 2 byz 2"},
  "rule": ["cg_plus", "nna"],
  "attack": [{"kind": "none"}, {"kind": "dissensus"}],
  "b": [1],
  "seed": [3, 4],
  "task": {"kind": "mean_estimation", "dim": 2, "targets": {"gaussian": {"std": 1.0}}},
  "steps": 3
}"#;

fn sorted_files(dir: &Path) -> Vec<String> {
    let mut names: Vec<String> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    names
}

#[test]
fn simulate_writes_one_trace_per_run_and_reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "exp.json", SWEEP_CONFIG);
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    for out_dir in [&out_a, &out_b] {
        let out = run(&[
            "simulate",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out_dir.to_str().unwrap(),
            "--jobs",
            "3",
        ]);
        assert_eq!(exit_code(&out), 0, "{}", stderr_text(&out));
    }
    let names = sorted_files(&out_a);
    // 2 rules x 2 attacks x 1 b x 2 seeds, a CSV and a header each.
    assert_eq!(names.len(), 16, "{names:?}");
    assert_eq!(names, sorted_files(&out_b));
    for name in &names {
        let a = fs::read(out_a.join(name)).unwrap();
        let b = fs::read(out_b.join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between identical invocations");
    }
    // Version comment, column names, then steps + 1 rows.
    let csv = fs::read_to_string(out_a.join(&names[0])).unwrap();
    assert!(names[0].ends_with(".csv"));
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 2 + 4, "{}", csv);
    assert!(lines[0].starts_with("# trace-csv v"));
    assert!(lines[1].starts_with("step,round,var_before"));
}

#[test]
fn simulate_seed_override_collapses_the_axis() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "exp.json", SWEEP_CONFIG);
    let out_dir = dir.path().join("out");
    let out = run(&[
        "simulate",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
        "--seed",
        "42",
        "--no-monitor",
    ]);
    assert_eq!(exit_code(&out), 0, "{}", stderr_text(&out));
    let names = sorted_files(&out_dir);
    assert_eq!(names.len(), 8, "{names:?}");
    assert!(names.iter().all(|n| n.contains("seed42")), "{names:?}");
    let table = String::from_utf8_lossy(&out.stdout).into_owned();
    assert!(table.contains("no"), "{table}");
}

#[test]
fn simulate_resolves_the_out_dir_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "exp.json", SWEEP_CONFIG);
    let out_dir = dir.path().join("from_env");
    let out = run_in(
        dir.path(),
        &["simulate", "--config", cfg.to_str().unwrap(), "--seed", "7"],
        &[("BYZGOSSIP_OUT", out_dir.to_str().unwrap())],
    );
    assert_eq!(exit_code(&out), 0, "{}", stderr_text(&out));
    assert_eq!(sorted_files(&out_dir).len(), 8);
}

#[test]
fn simulate_rejects_an_empty_sweep_axis() {
    let dir = tempfile::tempdir().unwrap();
    let body = SWEEP_CONFIG.replace("\"seed\": [3, 4]", "\"seed\": []");
    let cfg = write_config(dir.path(), "exp.json", &body);
    let out = run(&["simulate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(exit_code(&out), 2);
    assert!(stderr_text(&out).contains("seed"), "{}", stderr_text(&out));
}

#[test]
fn simulate_rejects_unknown_config_keys() {
    let dir = tempfile::tempdir().unwrap();
    let body = SWEEP_CONFIG.replace("\"steps\": 3", "\"steps\": 3, \"stepz\": 9");
    let cfg = write_config(dir.path(), "exp.json", &body);
    let out = run(&["simulate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(exit_code(&out), 2);
    assert!(stderr_text(&out).contains("stepz"), "{}", stderr_text(&out));
}

/// var_h column of every row, version and header lines skipped.
fn var_h_series(path: &Path) -> Vec<f64> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#') && !l.starts_with("step,"))
        .map(|l| l.split(',').nth(3).unwrap().parse().unwrap())
        .collect()
}

#[test]
fn simulate_shows_the_rule_split_under_the_spectral_attack() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "exp.json",
        r#"{
  "topology": {"gen": "two_clique_bridge 13 8 byz 6"},
  "rule": ["cg_plus", "nna"],
  "attack": [{"kind": "spectral_heterogeneity"}],
  "b": [6],
  "seed": [3],
  "task": {"kind": "mean_estimation", "dim": 2, "targets": {"gaussian": {"std": 1.0}}},
  "steps": 40
}"#,
    );
    let out_dir = dir.path().join("out");
    let out = run(&[
        "simulate",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
        "--no-monitor",
    ]);
    assert_eq!(exit_code(&out), 0, "{}", stderr_text(&out));
    let cg = var_h_series(&out_dir.join("run_000_cgplus_sph_b6_seed3.csv"));
    let nna = var_h_series(&out_dir.join("run_001_nna_sph_b6_seed3.csv"));
    let initial = cg[0];
    let cg_final = *cg.last().unwrap();
    let nna_final = *nna.last().unwrap();
    assert!(cg_final < 0.01 * initial, "clipping did not contract: {cg_final} vs {initial}");
    assert!(nna_final > 10.0 * cg_final, "screening did not stall: {nna_final} vs {cg_final}");
}

#[test]
fn verify_suite_prints_a_table_and_machine_lines() {
    let out = run(&["verify", "spectra"]);
    assert_eq!(exit_code(&out), 0, "{}", stderr_text(&out));
    let text = String::from_utf8_lossy(&out.stdout).into_owned();
    assert!(text.contains("pass"), "{text}");
    let last = text.lines().last().unwrap();
    let v: serde_json::Value = serde_json::from_str(last).unwrap();
    let arr = v.as_array().unwrap();
    assert_eq!(arr.len(), 3);
    assert!(arr.iter().all(|c| c["passed"] == serde_json::json!(true)));
}

#[test]
fn verify_rejects_an_unknown_suite() {
    let out = run(&["verify", "specter"]);
    assert_eq!(exit_code(&out), 2);
    assert!(stderr_text(&out).contains("unknown suite"), "{}", stderr_text(&out));
}
