//! `eevc`: evacuation EV charging schedules under distribution voltage limits.
//!
//! Exit codes: 0 success (or converged), 1 error, 2 infeasible, 3 iteration
//! limit. Diagnostics go to standard error; results go to files under `--out`
//! (except `pf` and `netcheck`, which print to standard output).

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use eevc_core::artifacts::{self, Provenance, SweepRow};
use eevc_core::cla::{self, ClaModel, ClaProvenance};
use eevc_core::congen::{self, CongenConfig, CongenResult, CongenStatus, TOOL};
use eevc_core::eevc::Backend;
use eevc_core::fixtures;
use eevc_core::mathprog::SolverOptions;
use eevc_core::netmodel::{
    self, generate_synthetic_feeder, FeederSpec, NetworkModel, PhasePattern, ScenarioData,
};
use eevc_core::powerflow::{self, InjectionSnapshot, PowerFlowModel};
use eevc_core::{NodeId, Sense};
use serde_json::json;

const EXIT_ERROR: u8 = 1;
const EXIT_INFEASIBLE: u8 = 2;
const EXIT_LIMIT: u8 = 3;

#[derive(Parser)]
#[command(name = "eevc", version, about = "Evacuation EV charging schedules under voltage limits")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    opts: Opts,
}

#[derive(Args)]
struct Opts {
    /// Directory with network.json, loads.csv, evs.csv, tazs.csv and config.json;
    /// individual file flags override it.
    #[arg(long, global = true)]
    scenario: Option<PathBuf>,
    #[arg(long, global = true)]
    network: Option<PathBuf>,
    #[arg(long, global = true)]
    loads: Option<PathBuf>,
    #[arg(long, global = true)]
    evs: Option<PathBuf>,
    #[arg(long, global = true)]
    tazs: Option<PathBuf>,
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (file for `pf`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Initial sample count.
    #[arg(long = "M", global = true)]
    m: Option<usize>,
    #[arg(long, global = true)]
    lambda_max: Option<f64>,
    /// Comma-separated violation budgets for `sweep`.
    #[arg(long, global = true, allow_hyphen_values = true)]
    lambdas: Option<String>,
    #[arg(long, global = true)]
    max_iters: Option<usize>,
    /// Solve without voltage constraints (first iteration only).
    #[arg(long, global = true)]
    naive: bool,
    /// Worker threads.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Hand MILPs to the command in EEVC_SOLVER_CMD via MPS files.
    #[arg(long, global = true)]
    external_solver: bool,
    /// Record wall-clock times in trace.csv (makes output non-reproducible).
    #[arg(long, global = true)]
    timing: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Validate input files and print a summary.
    Netcheck,
    /// Power flow of the background load at one step; prints node voltages.
    Pf {
        #[arg(long)]
        t: usize,
    },
    /// Draw EV demand samples, optionally with power-flow targets.
    Sample {
        #[command(flatten)]
        sel: Selection,
    },
    /// Fit conservative affine estimators and write cla.json.
    Fit {
        #[command(flatten)]
        sel: Selection,
        #[arg(long, value_enum, default_value = "both")]
        sense: SenseArg,
    },
    /// Run constraint generation and write the schedule artifacts.
    Solve,
    /// Solve once per violation budget.
    Sweep,
    /// Enumerate TAZ start times and simulate each schedule.
    Oracle,
    /// Collect plot-ready series from the artifacts in --out.
    Report,
    /// Write a synthetic scenario directory.
    Generate(GenerateArgs),
}

#[derive(Args)]
struct Selection {
    /// Comma-separated `bus.phase` nodes, or `all`.
    #[arg(long)]
    nodes: Option<String>,
    /// Comma-separated steps or ranges (`1,4-6`), or `all`.
    #[arg(long)]
    times: Option<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SenseArg {
    Over,
    Under,
    Both,
}

#[derive(Clone, Copy, ValueEnum)]
enum FixtureArg {
    Tiny,
    WeakFeeder,
}

#[derive(Clone, Copy, ValueEnum)]
enum PhasesArg {
    Three,
    Mixed,
    Single,
}

#[derive(Args)]
struct GenerateArgs {
    /// Bundled scenario; the feeder flags are ignored when set.
    #[arg(long, value_enum)]
    fixture: Option<FixtureArg>,
    #[arg(long, default_value_t = 6)]
    buses: usize,
    #[arg(long, value_enum, default_value = "three")]
    phases: PhasesArg,
    #[arg(long = "n-tazs", default_value_t = 2)]
    n_tazs: usize,
    #[arg(long, default_value_t = 2)]
    evs_per_taz: usize,
    #[arg(long = "steps", default_value_t = 96)]
    t_steps: usize,
    #[arg(long, default_value_t = 32)]
    beta: u32,
    #[arg(long, default_value_t = 1000.0)]
    base_kva: f64,
    #[arg(long, default_value_t = 1.0)]
    impedance_scale: f64,
    #[arg(long, default_value_t = 0.02)]
    load_level: f64,
    #[arg(long, default_value_t = 0.0)]
    start_hour: f64,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_ERROR } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {}", message(&e));
            ExitCode::from(EXIT_ERROR)
        }
    }
}

/// The error chain, skipping causes already spelled out by their parent.
fn message(e: &anyhow::Error) -> String {
    let mut out = e.to_string();
    let mut prev = out.clone();
    for cause in e.chain().skip(1) {
        let text = cause.to_string();
        if !prev.contains(&text) {
            write!(out, ": {text}").unwrap();
        }
        prev = text;
    }
    out
}

fn run(cli: Cli) -> Result<u8> {
    if let Some(n) = cli.opts.jobs {
        if n == 0 {
            bail!("--jobs must be at least 1");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring worker threads")?;
    }
    let o = &cli.opts;
    match &cli.command {
        Command::Netcheck => netcheck(o),
        Command::Pf { t } => pf(o, *t),
        Command::Sample { sel } => sample(o, sel),
        Command::Fit { sel, sense } => fit(o, sel, *sense),
        Command::Solve => solve(o),
        Command::Sweep => sweep(o),
        Command::Oracle => oracle(o),
        Command::Report => report(o),
        Command::Generate(g) => generate(o, g),
    }
}

fn input(o: &Opts, explicit: &Option<PathBuf>, name: &str) -> Option<PathBuf> {
    explicit
        .clone()
        .or_else(|| o.scenario.as_ref().map(|d| d.join(name)))
}

fn require(o: &Opts, explicit: &Option<PathBuf>, name: &str, flag: &str) -> Result<PathBuf> {
    input(o, explicit, name)
        .ok_or_else(|| anyhow!("missing --{flag} (or --scenario DIR containing {name})"))
}

fn load_network(o: &Opts) -> Result<NetworkModel> {
    let path = require(o, &o.network, "network.json", "network")?;
    Ok(netmodel::parse_network(&path)?)
}

fn config_path(o: &Opts) -> Option<PathBuf> {
    match (&o.config, &o.scenario) {
        (Some(p), _) => Some(p.clone()),
        (None, Some(d)) => Some(d.join("config.json")).filter(|p| p.exists()),
        (None, None) => None,
    }
}

fn load_scenario(o: &Opts) -> Result<ScenarioData> {
    let net = load_network(o)?;
    let loads = require(o, &o.loads, "loads.csv", "loads")?;
    let evs = require(o, &o.evs, "evs.csv", "evs")?;
    let tazs = require(o, &o.tazs, "tazs.csv", "tazs")?;
    let config = config_path(o);
    Ok(netmodel::parse_scenario(
        net,
        &loads,
        &evs,
        &tazs,
        config.as_deref(),
    )?)
}

fn out_dir(o: &Opts) -> Result<PathBuf> {
    let dir = o.out.clone().ok_or_else(|| anyhow!("missing --out DIR"))?;
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn seed(o: &Opts) -> Result<u64> {
    o.seed
        .ok_or_else(|| anyhow!("--seed is required for sampling (no clock-based seeding)"))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn netcheck(o: &Opts) -> Result<u8> {
    let net = load_network(o)?;
    println!("buses: {}", net.buses().len());
    println!("lines: {}", net.lines().len());
    println!("nodes: {}", net.nodes().len());
    println!("source: {}", net.source_bus());
    println!("radial: {}", net.is_radial());
    let have_rest = [(&o.loads, "loads.csv"), (&o.evs, "evs.csv"), (&o.tazs, "tazs.csv")]
        .iter()
        .all(|(p, name)| input(o, p, name).is_some_and(|p| p.exists()));
    if have_rest {
        let s = load_scenario(o)?;
        let (_, report) = powerflow::simulate_profile(
            &PowerFlowModel::default(),
            &s,
            &vec![vec![false; s.evs().len()]; s.t_steps()],
        )?;
        println!("steps: {}", s.t_steps());
        println!("tazs: {}", s.tazs().len());
        println!("evs: {}", s.evs().len());
        println!("ev_buses: {}", s.ev_buses().join(" "));
        println!("base_case_violations: {}", report.count());
        println!("scenario_hash: {}", s.content_hash());
    }
    Ok(0)
}

fn pf(o: &Opts, t: usize) -> Result<u8> {
    let net = load_network(o)?;
    let loads_path = require(o, &o.loads, "loads.csv", "loads")?;
    let cfg = match config_path(o) {
        Some(p) => netmodel::parse_config(
            &fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?,
        )?,
        None => netmodel::ScenarioConfig::default(),
    };
    if t == 0 || t > cfg.t_steps {
        bail!("--t must be in 1..={}", cfg.t_steps);
    }
    let text = fs::read_to_string(&loads_path)
        .with_context(|| format!("reading {}", loads_path.display()))?;
    let loads = netmodel::parse_loads(&text, cfg.t_steps)?;
    let mut snap = InjectionSnapshot::zero(&net, t);
    for (node, s) in &loads[t - 1] {
        snap.add(&net, node, s / net.base_kva())?;
    }
    let sol = powerflow::solve_pf(&net, &snap)?;
    let mut csv = Provenance::new(None).csv_header();
    csv.push_str("node,mag_pu,angle_deg,v_pu2\n");
    for (i, node) in net.nodes().iter().enumerate() {
        let (mag, ang) = sol.phasors[i].to_polar();
        writeln!(csv, "{node},{mag},{},{}", ang.to_degrees(), sol.v[i]).unwrap();
    }
    match &o.out {
        Some(path) => write_file(path, &csv)?,
        None => print!("{csv}"),
    }
    Ok(0)
}

fn parse_nodes(spec: Option<&str>, s: &ScenarioData) -> Result<Vec<NodeId>> {
    match spec {
        None | Some("all") => Ok(s.network().nodes().to_vec()),
        Some(list) => list
            .split(',')
            .map(|n| {
                let node: NodeId = n.trim().parse()?;
                if !s.network().has_node(&node) {
                    bail!("unknown node {node}");
                }
                Ok(node)
            })
            .collect(),
    }
}

fn parse_times(spec: Option<&str>, t_steps: usize) -> Result<Vec<usize>> {
    let Some(list) = spec.filter(|l| *l != "all") else {
        return Ok((1..=t_steps).collect());
    };
    let mut out = Vec::new();
    for part in list.split(',').map(str::trim) {
        let (a, b) = match part.split_once('-') {
            Some((a, b)) => (a.parse::<usize>()?, b.parse::<usize>()?),
            None => {
                let v = part.parse::<usize>()?;
                (v, v)
            }
        };
        if a == 0 || b > t_steps || a > b {
            bail!("bad step range `{part}` (steps are 1..={t_steps})");
        }
        out.extend(a..=b);
    }
    out.sort_unstable();
    out.dedup();
    Ok(out)
}

fn sample_count(o: &Opts, s: &ScenarioData) -> usize {
    o.m
        .unwrap_or_else(|| cla::default_sample_count(s.ev_buses().len()))
}

fn sample(o: &Opts, sel: &Selection) -> Result<u8> {
    let s = load_scenario(o)?;
    let seed = seed(o)?;
    let dir = out_dir(o)?;
    let mut samples = cla::draw_samples(&s, sample_count(o, &s), seed)?;
    let prov = Provenance::for_scenario(&s, Some(seed));
    let mut csv = prov.csv_header();
    writeln!(csv, "m,{}", s.ev_buses().join(",")).unwrap();
    for (m, col) in samples.demand().iter().enumerate() {
        let vals: Vec<String> = col.iter().map(f64::to_string).collect();
        writeln!(csv, "{},{}", m + 1, vals.join(",")).unwrap();
    }
    write_file(&dir.join("samples.csv"), &csv)?;
    if sel.nodes.is_some() || sel.times.is_some() {
        let nodes = parse_nodes(sel.nodes.as_deref(), &s)?;
        let times = parse_times(sel.times.as_deref(), s.t_steps())?;
        cla::compute_targets(&PowerFlowModel::default(), &s, &mut samples, &nodes, &times)?;
        let mut csv = prov.csv_header();
        csv.push_str("node,t,m,v_pu2\n");
        for (node, t) in samples.target_keys() {
            for (m, v) in samples.targets(node, *t).unwrap().iter().enumerate() {
                writeln!(csv, "{node},{t},{},{v}", m + 1).unwrap();
            }
        }
        write_file(&dir.join("targets.csv"), &csv)?;
    }
    Ok(0)
}

fn fit(o: &Opts, sel: &Selection, sense: SenseArg) -> Result<u8> {
    let s = load_scenario(o)?;
    let seed = seed(o)?;
    let dir = out_dir(o)?;
    let m = sample_count(o, &s);
    let mut samples = cla::draw_samples(&s, m, seed)?;
    let nodes = parse_nodes(sel.nodes.as_deref(), &s)?;
    let times = parse_times(sel.times.as_deref(), s.t_steps())?;
    cla::compute_targets(&PowerFlowModel::default(), &s, &mut samples, &nodes, &times)?;
    let senses: &[Sense] = match sense {
        SenseArg::Over => &[Sense::Over],
        SenseArg::Under => &[Sense::Under],
        SenseArg::Both => &[Sense::Over, Sense::Under],
    };
    let keys: Vec<(NodeId, usize, Sense)> = times
        .iter()
        .flat_map(|&t| {
            nodes
                .iter()
                .flat_map(move |n| senses.iter().map(move |&d| (n.clone(), t, d)))
        })
        .collect();
    let mut model = ClaModel::new(
        s.ev_buses().to_vec(),
        ClaProvenance {
            tool: TOOL.into(),
            seed,
            m,
            scenario_hash: s.content_hash(),
        },
    );
    for f in cla::fit_many(&samples, &keys)? {
        model.insert(f);
    }
    write_file(&dir.join("cla.json"), &model.to_json())?;
    eprintln!("fitted {} estimators from {m} samples", model.len());
    Ok(0)
}

fn congen_config(o: &Opts, dir: &Path) -> Result<CongenConfig> {
    let seed = if o.naive { o.seed.unwrap_or(0) } else { seed(o)? };
    let backend = if o.external_solver {
        Backend::External(dir.join("solver"))
    } else {
        Backend::Builtin(SolverOptions::default())
    };
    Ok(CongenConfig {
        m: o.m,
        seed,
        max_iters: o.max_iters.unwrap_or(10),
        lambda_max: if o.naive {
            Some(f64::INFINITY)
        } else {
            o.lambda_max
        },
        backend,
    })
}

fn status_code(status: CongenStatus) -> u8 {
    match status {
        CongenStatus::Converged => 0,
        CongenStatus::Infeasible => EXIT_INFEASIBLE,
        CongenStatus::IterationLimit => EXIT_LIMIT,
    }
}

fn describe(r: &CongenResult) -> String {
    format!(
        "{} after {} iteration(s); gamma_max {}; violation total {} over {} entries",
        r.status.as_str(),
        r.iterations(),
        r.gamma()
            .map_or_else(|| "none".to_string(), |g| g.to_string()),
        r.report.total,
        r.report.count()
    )
}

fn solve(o: &Opts) -> Result<u8> {
    let s = load_scenario(o)?;
    let dir = out_dir(o)?;
    let cfg = congen_config(o, &dir)?;
    let result = congen::run(&s, &cfg)?;
    let prov = Provenance::for_scenario(&s, (!o.naive).then_some(cfg.seed));
    artifacts::write_solve_artifacts(&dir, &s, &result, &prov, o.timing)?;
    eprintln!("{}", describe(&result));
    Ok(status_code(result.status))
}

/// Worst outcome first: errors, then iteration limits, then infeasibility.
fn severity(code: u8) -> u8 {
    match code {
        0 => 0,
        EXIT_INFEASIBLE => 1,
        EXIT_LIMIT => 2,
        _ => 3,
    }
}

fn parse_lambdas(o: &Opts) -> Result<Vec<f64>> {
    let raw = o
        .lambdas
        .as_deref()
        .ok_or_else(|| anyhow!("sweep needs --lambdas (comma-separated)"))?;
    let values = raw
        .split(',')
        .map(str::trim)
        .filter(|v| !v.is_empty())
        .map(|v| {
            v.parse::<f64>()
                .with_context(|| format!("bad violation budget `{v}`"))
        })
        .collect::<Result<Vec<_>>>()?;
    let (values, dropped) = congen::normalise_lambdas(&values)?;
    if dropped {
        eprintln!("warning: repeated violation budgets dropped");
    }
    Ok(values)
}

fn sweep(o: &Opts) -> Result<u8> {
    let lambdas = parse_lambdas(o)?;
    let s = load_scenario(o)?;
    let dir = out_dir(o)?;
    let base = congen_config(o, &dir)?;
    let prov = Provenance::for_scenario(&s, Some(base.seed));
    let mut rows = Vec::new();
    let mut worst = 0u8;
    for (i, &lambda) in lambdas.iter().enumerate() {
        let sub = dir.join(format!("lambda_{:02}", i + 1));
        let cfg = CongenConfig {
            lambda_max: Some(lambda),
            backend: match &base.backend {
                Backend::External(_) => Backend::External(sub.join("solver")),
                b => b.clone(),
            },
            ..base.clone()
        };
        let outcome = congen::run(&s, &cfg).map_err(anyhow::Error::from).and_then(|r| {
            artifacts::write_solve_artifacts(&sub, &s, &r, &prov, o.timing)?;
            Ok(r)
        });
        let (row, code) = match outcome {
            Ok(r) => {
                eprintln!("lambda {lambda}: {}", describe(&r));
                let p = congen::SweepPoint { lambda, result: r };
                (SweepRow::from(&p), status_code(p.result.status))
            }
            Err(e) => {
                eprintln!("lambda {lambda}: error: {}", message(&e));
                let row = SweepRow {
                    lambda,
                    charge_time_steps: None,
                    viol_total: None,
                    viol_count: None,
                    iters: None,
                    status: "error".into(),
                };
                (row, EXIT_ERROR)
            }
        };
        rows.push(row);
        if severity(code) > severity(worst) {
            worst = code;
        }
    }
    write_file(&dir.join("sweep.csv"), &artifacts::sweep_csv(&rows, &s, &prov))?;
    Ok(worst)
}

fn oracle(o: &Opts) -> Result<u8> {
    let s = load_scenario(o)?;
    let dir = out_dir(o)?;
    let lambda = o.lambda_max.unwrap_or(s.config().lambda_max);
    let r = congen::brute_force_oracle(&s, lambda, &PowerFlowModel::default())?;
    let starts: serde_json::Map<String, serde_json::Value> = s
        .tazs()
        .iter()
        .zip(&r.starts)
        .map(|(z, st)| (z.id.clone(), json!(st)))
        .collect();
    let doc = json!({
        "provenance": Provenance::for_scenario(&s, None).to_json(),
        "lambda_max": lambda,
        "gamma_max": r.gamma_opt,
        "starts": starts,
        "violation_total": if r.gamma_opt.is_some() { json!(r.violation_total) } else { json!(null) },
        "evaluated": r.evaluated,
    });
    let mut text = serde_json::to_string_pretty(&doc)?;
    text.push('\n');
    write_file(&dir.join("oracle.json"), &text)?;
    match r.gamma_opt {
        Some(g) => {
            eprintln!("oracle gamma_max {g} after {} schedules", r.evaluated);
            Ok(0)
        }
        None => {
            eprintln!("no start-time tuple meets the budget ({} schedules)", r.evaluated);
            Ok(EXIT_INFEASIBLE)
        }
    }
}

fn report(o: &Opts) -> Result<u8> {
    let dir = o.out.clone().ok_or_else(|| anyhow!("missing --out DIR"))?;
    let text = artifacts::report_json(&dir)?;
    write_file(&dir.join("report.json"), &text)?;
    Ok(0)
}

fn generate(o: &Opts, g: &GenerateArgs) -> Result<u8> {
    let dir = out_dir(o)?;
    let spec = match g.fixture {
        Some(FixtureArg::Tiny) => fixtures::tiny_spec(),
        Some(FixtureArg::WeakFeeder) => fixtures::weak_feeder_spec(),
        None => FeederSpec {
            n_buses: g.buses,
            phases: match g.phases {
                PhasesArg::Three => PhasePattern::ThreePhase,
                PhasesArg::Mixed => PhasePattern::Mixed,
                PhasesArg::Single => PhasePattern::SinglePhase,
            },
            n_tazs: g.n_tazs,
            evs_per_taz: g.evs_per_taz,
            seed: o.seed.unwrap_or(FeederSpec::default().seed),
            t_steps: g.t_steps,
            beta: g.beta,
            base_kva: g.base_kva,
            impedance_scale: g.impedance_scale,
            load_level: g.load_level,
            start_hour: g.start_hour,
            ..FeederSpec::default()
        },
    };
    let (_, s) = generate_synthetic_feeder(&spec)?;
    netmodel::write_scenario_dir(&s, &dir).with_context(|| format!("writing {}", dir.display()))?;
    Ok(0)
}
