//! Command-line front end: spectral reports, experiment sweeps, and the
//! acceptance suites. Exit codes: 0 success, 1 a monitored check failed,
//! 2 bad configuration or input.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;
use serde_json::json;

use crate::adversary::AttackSpec;
use crate::aggregate::Rule;
use crate::engine::{self, CommRounds, EngineError, MonitorMode, RunConfig, Task};
use crate::graph::{SpectralInfo, Topology};
use crate::verify;

pub const EXIT_OK: u8 = 0;
pub const EXIT_CHECK_FAILED: u8 = 1;
pub const EXIT_CONFIG: u8 = 2;

#[derive(Parser)]
#[command(
    name = "byzgossip",
    version,
    about = "Byzantine-robust gossip averaging and D-SGD simulator"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Spectral report: full and honest connectivity, class membership,
    /// and the robustness margins for both aggregation rules.
    Spectra(SpectraArgs),
    /// Expand an experiment file into its sweep and run every
    /// configuration, one CSV trace and one JSON header per run.
    Simulate(SimulateArgs),
    /// Run an acceptance suite (spectra, contraction, error-bounds,
    /// breakdown, dsgd, or all).
    Verify(VerifyArgs),
}

#[derive(Args)]
struct SpectraArgs {
    /// Generator spec, e.g. "two_clique_bridge 13 8" or "complete 26 byz 3".
    #[arg(long, conflicts_with = "graph", required_unless_present = "graph")]
    gen: Option<String>,
    /// Edge-list file: one "u v" pair per line, optional "nodes: N" and
    /// "byzantine: i j ..." headers, '#' comments.
    #[arg(long)]
    graph: Option<PathBuf>,
    /// Connectivity floor for the class-membership verdict.
    #[arg(long, default_value_t = 0.0)]
    mu_min: f64,
    /// Robustness parameter for the verdict and the margins.
    #[arg(long, default_value_t = 0)]
    b: usize,
}

#[derive(Args)]
struct SimulateArgs {
    /// Experiment file (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory. Falls back to the experiment file's `out_dir`,
    /// then $BYZGOSSIP_OUT, then the working directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (default: available parallelism).
    #[arg(long)]
    jobs: Option<usize>,
    /// Replace the seed axis with this single seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Force monitors off for every run.
    #[arg(long)]
    no_monitor: bool,
}

#[derive(Args)]
struct VerifyArgs {
    suite: String,
}

/// Parses `args` and runs the selected command, returning the process
/// exit code.
pub fn main_with_args<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            // --help and --version arrive here too; they are not errors.
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match cli.cmd {
        Cmd::Spectra(a) => cmd_spectra(&a),
        Cmd::Simulate(a) => cmd_simulate(&a),
        Cmd::Verify(a) => cmd_verify(&a),
    }
}

fn s<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

/// Grammar: `complete N`, `two_clique_bridge M K`, or
/// `three_clique_ghb M B`, optionally followed by `byz K` to attach K
/// fully-connected Byzantine nodes.
pub fn parse_generator(spec: &str) -> Result<Topology, String> {
    let tokens: Vec<&str> = spec.split_whitespace().collect();
    let (head, rest) = tokens
        .split_first()
        .ok_or_else(|| "empty generator spec".to_string())?;
    let (rest, extra_byz) = match rest.iter().position(|t| *t == "byz") {
        Some(i) => {
            if rest.len() != i + 2 {
                return Err("byz takes exactly one count".into());
            }
            let k: usize = rest[i + 1]
                .parse()
                .map_err(|e| format!("bad byz count {:?}: {e}", rest[i + 1]))?;
            (&rest[..i], Some(k))
        }
        None => (rest, None),
    };
    let nums = |want: usize| -> Result<Vec<usize>, String> {
        if rest.len() != want {
            return Err(format!(
                "{head} takes {want} argument{}, got {}",
                if want == 1 { "" } else { "s" },
                rest.len()
            ));
        }
        rest.iter()
            .map(|t| t.parse().map_err(|e| format!("bad number {t:?}: {e}")))
            .collect()
    };
    let topo = match *head {
        "complete" => {
            let a = nums(1)?;
            Topology::complete(a[0], []).map_err(s)?
        }
        "two_clique_bridge" => {
            let a = nums(2)?;
            Topology::two_clique_bridge(a[0], a[1]).map_err(s)?
        }
        "three_clique_ghb" => {
            let a = nums(2)?;
            Topology::three_clique_ghb(a[0], a[1]).map_err(s)?
        }
        other => {
            return Err(format!(
                "unknown generator {other:?} (expected complete, two_clique_bridge, or three_clique_ghb)"
            ))
        }
    };
    match extra_byz {
        Some(k) => topo.attach_full_byzantine(k).map_err(s),
        None => Ok(topo),
    }
}

fn load_topology(gen: &Option<String>, graph: &Option<PathBuf>) -> Result<Topology, String> {
    match (gen, graph) {
        (Some(spec), None) => parse_generator(spec),
        (None, Some(path)) => {
            let text = fs::read_to_string(path)
                .map_err(|e| format!("{}: {e}", path.display()))?;
            Topology::from_edge_list_str(&text)
                .map_err(|e| format!("{}: {e}", path.display()))
        }
        _ => Err("exactly one of --gen and --graph is required".into()),
    }
}

fn spectral_json(topo: &Topology, sp: &SpectralInfo) -> serde_json::Value {
    json!({
        "nodes": topo.n(),
        "honest": topo.honest_count(),
        "byzantine": topo.byzantine().len(),
        "connected": sp.mu2 > 0.0,
        "mu2": sp.mu2,
        "mu_max": sp.mu_max,
        "gamma": sp.gamma,
    })
}

fn spectra_report(a: &SpectraArgs) -> Result<String, String> {
    let topo = load_topology(&a.gen, &a.graph)?;
    let full = topo.spectral_info().map_err(s)?;
    let (honest, _) = topo.honest_subgraph().map_err(s)?;
    let hsp = honest.spectral_info().map_err(s)?;
    let report = topo.verify_gamma_membership(a.mu_min, a.b).map_err(s)?;
    let v = json!({
        "full": spectral_json(&topo, &full),
        "honest": spectral_json(&honest, &hsp),
        "membership": {
            "mu_min": a.mu_min,
            "b": a.b,
            "member": report.member,
            "honest_mu2": report.honest_mu2,
            "max_byzantine_neighbors": report.max_byz_neighbors,
        },
        // Honest connectivity minus each rule's error budget; negative
        // means the contraction guarantee is void at this b.
        "margins": {
            "clipping": hsp.mu2 - 2.0 * (a.b as f64 + 1.0),
            "screening": hsp.mu2 - 8.0 * a.b as f64,
        },
    });
    serde_json::to_string_pretty(&v).map_err(s)
}

fn cmd_spectra(a: &SpectraArgs) -> u8 {
    match spectra_report(a) {
        Ok(text) => {
            println!("{text}");
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_CONFIG
        }
    }
}

fn cmd_verify(a: &VerifyArgs) -> u8 {
    let results = if a.suite == "all" {
        verify::run_all()
    } else {
        match verify::run_suite(&a.suite) {
            Ok(r) => r,
            Err(e) => {
                eprintln!("error: {e}");
                return EXIT_CONFIG;
            }
        }
    };
    let name_w = results.iter().map(|r| r.name.len()).max().unwrap_or(9).max(9);
    println!("{:>2}  {:4}  {:<name_w$}  detail", "id", "ok", "criterion");
    for r in &results {
        println!(
            "{:>2}  {:4}  {:<name_w$}  {}",
            r.id,
            if r.passed { "pass" } else { "FAIL" },
            r.name,
            r.detail
        );
    }
    let machine: Vec<serde_json::Value> = results
        .iter()
        .map(|r| json!({"id": r.id, "name": r.name, "passed": r.passed, "detail": r.detail}))
        .collect();
    println!("{}", serde_json::Value::Array(machine));
    if results.iter().all(|r| r.passed) {
        EXIT_OK
    } else {
        EXIT_CHECK_FAILED
    }
}

/// Where an experiment's topology comes from.
#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopologySpec {
    /// Generator invocation, same grammar as `spectra --gen`.
    Gen(String),
    /// Edge-list file, resolved relative to the experiment file.
    File(PathBuf),
    /// Inline edge list.
    EdgeList(String),
}

impl TopologySpec {
    /// Materializes the topology; `base` anchors relative file paths.
    pub fn build(&self, base: &Path) -> Result<Topology, String> {
        match self {
            TopologySpec::Gen(spec) => parse_generator(spec),
            TopologySpec::File(p) => {
                let path = if p.is_absolute() { p.clone() } else { base.join(p) };
                let text = fs::read_to_string(&path)
                    .map_err(|e| format!("{}: {e}", path.display()))?;
                Topology::from_edge_list_str(&text)
                    .map_err(|e| format!("{}: {e}", path.display()))
            }
            TopologySpec::EdgeList(text) => {
                Topology::from_edge_list_str(text).map_err(s)
            }
        }
    }
}

fn default_rho() -> f64 {
    0.1
}

fn default_beta() -> f64 {
    0.9
}

fn default_monitor() -> MonitorMode {
    MonitorMode::Record
}

/// One experiment file expands into the Cartesian product of its four
/// sweep axes, in axis order rule, attack, b, seed; every other field is
/// shared by all runs. Unknown keys are rejected.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentFile {
    pub topology: TopologySpec,
    pub rule: Vec<Rule>,
    pub attack: Vec<AttackSpec>,
    pub b: Vec<usize>,
    pub seed: Vec<u64>,
    pub task: Task,
    #[serde(default)]
    pub eta: Option<f64>,
    #[serde(default)]
    pub nna_local_eta: bool,
    #[serde(default = "default_rho")]
    pub rho: f64,
    #[serde(default = "default_beta")]
    pub beta: f64,
    pub steps: usize,
    #[serde(default)]
    pub comm: CommRounds,
    #[serde(default = "default_monitor")]
    pub monitor: MonitorMode,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

/// Expands the sweep. `seed_override` collapses the seed axis; `no_monitor`
/// forces monitors off.
pub fn expand(
    file: &ExperimentFile,
    topo: &Topology,
    seed_override: Option<u64>,
    no_monitor: bool,
) -> Result<Vec<RunConfig>, String> {
    for (axis, len) in [
        ("rule", file.rule.len()),
        ("attack", file.attack.len()),
        ("b", file.b.len()),
        ("seed", file.seed.len()),
    ] {
        if len == 0 {
            return Err(format!("sweep axis {axis:?} is empty"));
        }
    }
    let seeds: Vec<u64> = match seed_override {
        Some(s0) => vec![s0],
        None => file.seed.clone(),
    };
    let mut out = Vec::new();
    for &rule in &file.rule {
        for attack in &file.attack {
            for &b in &file.b {
                for &seed in &seeds {
                    let mut cfg = RunConfig::new(topo.clone(), rule, b, file.task.clone());
                    cfg.eta = file.eta;
                    cfg.nna_local_eta = file.nna_local_eta;
                    cfg.attack = attack.clone();
                    cfg.rho = file.rho;
                    cfg.beta = file.beta;
                    cfg.steps = file.steps;
                    cfg.comm = file.comm;
                    cfg.seed = seed;
                    cfg.monitor = if no_monitor { MonitorMode::Off } else { file.monitor };
                    out.push(cfg);
                }
            }
        }
    }
    Ok(out)
}

struct RunReport {
    idx: usize,
    file: String,
    rounds: usize,
    monitored: bool,
    violations: u64,
    error: Option<(u8, String)>,
}

fn execute_run(idx: usize, cfg: &RunConfig, out_dir: &Path) -> RunReport {
    let stem = format!(
        "run_{idx:03}_{}_{}_b{}_seed{}",
        cfg.rule.name(),
        cfg.attack.kind.name(),
        cfg.b,
        cfg.seed
    );
    let bail = |code, msg, monitored| RunReport {
        idx,
        file: stem.clone(),
        rounds: 0,
        monitored,
        violations: 0,
        error: Some((code, msg)),
    };
    match engine::run(cfg) {
        Ok(out) => {
            let violations: u64 = out.trace.rows.iter().map(|r| u64::from(r.violations)).sum();
            let monitored = out.trace.rows.iter().any(|r| r.monitored);
            let write = fs::write(out_dir.join(format!("{stem}.csv")), out.trace.to_csv())
                .and_then(|()| {
                    fs::write(out_dir.join(format!("{stem}.header.json")), out.trace.header_json())
                });
            if let Err(e) = write {
                return bail(EXIT_CONFIG, format!("writing output: {e}"), monitored);
            }
            RunReport {
                idx,
                file: format!("{stem}.csv"),
                rounds: out.trace.rows.len(),
                monitored,
                violations,
                error: None,
            }
        }
        Err(e @ EngineError::MonitorViolation { .. }) => {
            bail(EXIT_CHECK_FAILED, e.to_string(), true)
        }
        Err(e) => bail(EXIT_CONFIG, e.to_string(), false),
    }
}

fn simulate(a: &SimulateArgs) -> Result<u8, String> {
    let text = fs::read_to_string(&a.config)
        .map_err(|e| format!("{}: {e}", a.config.display()))?;
    let file: ExperimentFile = serde_json::from_str(&text)
        .map_err(|e| format!("{}: {e}", a.config.display()))?;
    let base = a.config.parent().map(Path::to_path_buf).unwrap_or_default();
    let topo = file.topology.build(&base)?;
    let runs = expand(&file, &topo, a.seed, a.no_monitor)?;
    let out_dir = a
        .out
        .clone()
        .or_else(|| file.out_dir.clone())
        .or_else(|| std::env::var_os("BYZGOSSIP_OUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&out_dir).map_err(|e| format!("{}: {e}", out_dir.display()))?;
    let jobs = a
        .jobs
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
        .clamp(1, runs.len().max(1));
    let next = AtomicUsize::new(0);
    let reports = Mutex::new(Vec::with_capacity(runs.len()));
    std::thread::scope(|scope| {
        for _ in 0..jobs {
            scope.spawn(|| loop {
                let idx = next.fetch_add(1, Ordering::Relaxed);
                if idx >= runs.len() {
                    break;
                }
                let report = execute_run(idx, &runs[idx], &out_dir);
                reports.lock().expect("no worker panicked").push(report);
            });
        }
    });
    let mut reports = reports.into_inner().expect("no worker panicked");
    reports.sort_by_key(|r| r.idx);
    println!("idx  rounds  monitored  violations  status      file");
    for r in &reports {
        let status = match &r.error {
            None if r.monitored && r.violations > 0 => "CHECK-FAIL",
            None => "ok",
            Some((EXIT_CHECK_FAILED, _)) => "CHECK-FAIL",
            Some(_) => "ERROR",
        };
        println!(
            "{:03}  {:>6}  {:<9}  {:>10}  {:<10}  {}",
            r.idx,
            r.rounds,
            if r.monitored { "yes" } else { "no" },
            r.violations,
            status,
            r.file
        );
        if let Some((_, msg)) = &r.error {
            eprintln!("run {:03}: {msg}", r.idx);
        }
    }
    let config_error = reports
        .iter()
        .any(|r| matches!(&r.error, Some((code, _)) if *code == EXIT_CONFIG));
    let check_failed = reports.iter().any(|r| {
        matches!(&r.error, Some((code, _)) if *code == EXIT_CHECK_FAILED)
            || (r.monitored && r.violations > 0)
    });
    Ok(if config_error {
        EXIT_CONFIG
    } else if check_failed {
        EXIT_CHECK_FAILED
    } else {
        EXIT_OK
    })
}

fn cmd_simulate(a: &SimulateArgs) -> u8 {
    match simulate(a) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_CONFIG
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adversary::AttackKind;

    #[test]
    fn generator_grammar_round_trips() {
        let t = parse_generator("complete 26").unwrap();
        assert_eq!(t.n(), 26);
        assert!(t.byzantine().is_empty());
        let t = parse_generator("two_clique_bridge 13 8").unwrap();
        assert_eq!(t.n(), 26);
        let t = parse_generator("three_clique_ghb 4 2").unwrap();
        assert_eq!(t.byzantine().len(), 4);
        let t = parse_generator("complete 8 byz 2").unwrap();
        assert_eq!(t.n(), 10);
        assert_eq!(t.byzantine().len(), 2);
    }

    #[test]
    fn generator_grammar_rejects_garbage() {
        assert!(parse_generator("").is_err());
        assert!(parse_generator("ladder 4").is_err());
        assert!(parse_generator("complete").is_err());
        assert!(parse_generator("complete 4 5").is_err());
        assert!(parse_generator("complete 4 byz").is_err());
        assert!(parse_generator("complete x").is_err());
    }

    fn minimal_config(extra: &str) -> String {
        format!(
            concat!(
                "{{\"topology\": {{\"gen\": \"two_clique_bridge 4 2\"}},",
                "\"rule\": [\"cg_plus\"], \"attack\": [{{\"kind\": \"none\"}}],",
                "\"b\": [1], \"seed\": [7],",
                "\"task\": {{\"kind\": \"mean_estimation\", \"dim\": 2,",
                " \"targets\": {{\"gaussian\": {{\"std\": 1.0}}}}}},",
                "\"steps\": 3{}}}"
            ),
            extra
        )
    }

    #[test]
    fn experiment_file_rejects_unknown_keys() {
        let text = minimal_config(", \"stepz\": 9");
        let err = serde_json::from_str::<ExperimentFile>(&text).unwrap_err();
        assert!(err.to_string().contains("stepz"), "{err}");
    }

    #[test]
    fn sweep_expands_in_rule_attack_b_seed_order() {
        let text = minimal_config("");
        let mut file: ExperimentFile = serde_json::from_str(&text).unwrap();
        file.rule = vec![Rule::CgPlus, Rule::Nna];
        file.attack =
            vec![AttackSpec::new(AttackKind::None), AttackSpec::new(AttackKind::Alie)];
        file.b = vec![0, 1];
        file.seed = vec![5, 6];
        let topo = parse_generator("two_clique_bridge 4 2").unwrap();
        let runs = expand(&file, &topo, None, false).unwrap();
        assert_eq!(runs.len(), 16);
        // Innermost axis first: seed varies fastest, rule slowest.
        assert_eq!(runs[0].seed, 5);
        assert_eq!(runs[1].seed, 6);
        assert_eq!(runs[2].b, 1);
        assert_eq!(runs[4].attack.kind, AttackKind::Alie);
        assert_eq!(runs[8].rule, Rule::Nna);
    }

    #[test]
    fn seed_override_collapses_the_axis() {
        let text = minimal_config("");
        let mut file: ExperimentFile = serde_json::from_str(&text).unwrap();
        file.seed = vec![1, 2, 3];
        let topo = parse_generator("complete 5").unwrap();
        let runs = expand(&file, &topo, Some(99), true).unwrap();
        assert_eq!(runs.len(), 1);
        assert_eq!(runs[0].seed, 99);
        assert_eq!(runs[0].monitor, MonitorMode::Off);
    }

    #[test]
    fn empty_axis_is_a_config_error() {
        let text = minimal_config("");
        let mut file: ExperimentFile = serde_json::from_str(&text).unwrap();
        file.b = vec![];
        let topo = parse_generator("complete 5").unwrap();
        let err = expand(&file, &topo, None, false).unwrap_err();
        assert!(err.contains("\"b\""), "{err}");
    }
}
