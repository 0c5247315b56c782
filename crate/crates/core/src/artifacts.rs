//! CSV/JSON output files and the readers behind the `report` command.
//!
//! CSV files start with `#` comment lines carrying provenance; JSON files hold
//! a `provenance` object. Numbers are written with Rust's shortest round-trip
//! formatting, so identical runs give byte-identical files.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::congen::{CongenResult, IterationTrace, SweepPoint, TOOL};
use crate::eevc::ChargeSchedule;
use crate::netmodel::ScenarioData;
use crate::powerflow::ViolationReport;

#[derive(Debug, thiserror::Error)]
pub enum ArtifactError {
    #[error("missing artifact file(s): {}", .0.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(", "))]
    Missing(Vec<PathBuf>),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {message}")]
    Malformed { path: PathBuf, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub seed: Option<u64>,
    /// (name, SHA-256) of each input.
    pub inputs: Vec<(String, String)>,
}

impl Provenance {
    pub fn new(seed: Option<u64>) -> Self {
        Provenance {
            tool: TOOL.to_string(),
            seed,
            inputs: Vec::new(),
        }
    }

    pub fn for_scenario(scenario: &ScenarioData, seed: Option<u64>) -> Self {
        Provenance::new(seed).with_input("scenario", scenario.content_hash())
    }

    pub fn with_input(mut self, name: impl Into<String>, hash: impl Into<String>) -> Self {
        self.inputs.push((name.into(), hash.into()));
        self
    }

    pub fn csv_header(&self) -> String {
        let mut s = format!("# tool: {}\n", self.tool);
        match self.seed {
            Some(seed) => writeln!(s, "# seed: {seed}").unwrap(),
            None => s.push_str("# seed: none\n"),
        }
        for (name, hash) in &self.inputs {
            writeln!(s, "# input {name}: {hash}").unwrap();
        }
        s
    }

    pub fn to_json(&self) -> serde_json::Value {
        json!({
            "tool": self.tool,
            "seed": self.seed,
            "inputs": self
                .inputs
                .iter()
                .map(|(n, h)| json!({"name": n, "sha256": h}))
                .collect::<Vec<_>>(),
        })
    }
}

fn pretty(v: &serde_json::Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serialisable");
    s.push('\n');
    s
}

fn flag(b: bool) -> u8 {
    u8::from(b)
}

/// `taz,t,charging`
pub fn schedule_csv(schedule: &ChargeSchedule, scenario: &ScenarioData, prov: &Provenance) -> String {
    let mut s = prov.csv_header();
    s.push_str("taz,t,charging\n");
    for (taz, c) in scenario.tazs().iter().zip(&schedule.c_taz) {
        for (ti, &on) in c.iter().enumerate() {
            writeln!(s, "{},{},{}", taz.id, ti + 1, flag(on)).unwrap();
        }
    }
    s
}

/// `ev,t,charging,battery`; battery is the level in charging steps after step t.
pub fn evs_schedule_csv(
    schedule: &ChargeSchedule,
    scenario: &ScenarioData,
    prov: &Provenance,
) -> String {
    let mut s = prov.csv_header();
    s.push_str("ev,t,charging,battery\n");
    for (h, ev) in scenario.evs().iter().enumerate() {
        for ti in 0..schedule.t_steps() {
            writeln!(
                s,
                "{},{},{},{}",
                ev.id,
                ti + 1,
                flag(schedule.c_ev[h][ti]),
                schedule.batteries[h][ti + 1]
            )
            .unwrap();
        }
    }
    s
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GanttBar {
    pub taz: String,
    pub start_t: usize,
    pub end_t: usize,
}

pub fn gantt_bars(schedule: &ChargeSchedule, scenario: &ScenarioData) -> Vec<GanttBar> {
    scenario
        .tazs()
        .iter()
        .zip(schedule.taz_windows())
        .filter_map(|(taz, w)| {
            w.map(|(start_t, end_t)| GanttBar {
                taz: taz.id.clone(),
                start_t,
                end_t,
            })
        })
        .collect()
}

pub fn gantt_json(schedule: &ChargeSchedule, scenario: &ScenarioData, prov: &Provenance) -> String {
    pretty(&json!({
        "provenance": prov.to_json(),
        "t_steps": schedule.t_steps(),
        "step_minutes": 60.0 / scenario.config().beta as f64,
        "gamma_max": schedule.gamma_max,
        "bars": gantt_bars(schedule, scenario),
    }))
}

/// `node,t,kind,magnitude` followed by a `total,,,<sum>` row.
pub fn violations_csv(report: &ViolationReport, prov: &Provenance) -> String {
    let mut s = prov.csv_header();
    s.push_str("node,t,kind,magnitude\n");
    for v in &report.entries {
        writeln!(s, "{},{},{},{}", v.node, v.t, v.kind, v.magnitude).unwrap();
    }
    writeln!(s, "total,,,{}", report.total).unwrap();
    s
}

/// `iter,gamma,pred_slack,actual_viol,n_constraints,wall_s`. Wall times are
/// written as `NA` unless `timing` is set, keeping repeated runs identical.
pub fn trace_csv(trace: &IterationTrace, prov: &Provenance, timing: bool) -> String {
    let mut s = prov.csv_header();
    s.push_str("iter,gamma,pred_slack,actual_viol,n_constraints,wall_s\n");
    for r in &trace.records {
        let wall = if timing {
            format!("{:.6}", r.wall_s)
        } else {
            "NA".to_string()
        };
        writeln!(
            s,
            "{},{},{},{},{},{}",
            r.iteration,
            r.gamma,
            r.pred_slack + 0.0,
            r.actual_viol + 0.0,
            r.n_constraints,
            wall
        )
        .unwrap();
    }
    s
}

/// One line of `sweep.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub lambda: f64,
    pub charge_time_steps: Option<usize>,
    pub viol_total: Option<f64>,
    pub viol_count: Option<usize>,
    pub iters: Option<usize>,
    pub status: String,
}

impl From<&SweepPoint> for SweepRow {
    fn from(p: &SweepPoint) -> Self {
        SweepRow {
            lambda: p.lambda,
            charge_time_steps: p.charge_time_steps(),
            viol_total: Some(p.result.report.total),
            viol_count: Some(p.result.report.count()),
            iters: Some(p.result.iterations()),
            status: p.result.status.as_str().to_string(),
        }
    }
}

fn opt<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map_or_else(|| "NA".to_string(), T::to_string)
}

/// `lambda,charge_time_steps,viol_total,viol_count,iters,status`.
pub fn sweep_csv(rows: &[SweepRow], scenario: &ScenarioData, prov: &Provenance) -> String {
    let mut s = prov.csv_header();
    writeln!(
        s,
        "# charge_time_steps = T - gamma_max with T = {}; one step = {} min",
        scenario.t_steps(),
        60.0 / scenario.config().beta as f64
    )
    .unwrap();
    s.push_str("lambda,charge_time_steps,viol_total,viol_count,iters,status\n");
    for r in rows {
        writeln!(
            s,
            "{},{},{},{},{},{}",
            r.lambda,
            opt(&r.charge_time_steps),
            opt(&r.viol_total),
            opt(&r.viol_count),
            opt(&r.iters),
            r.status
        )
        .unwrap();
    }
    s
}

pub fn summary_json(result: &CongenResult, prov: &Provenance) -> String {
    pretty(&json!({
        "provenance": prov.to_json(),
        "status": result.status.as_str(),
        "gamma_max": result.gamma(),
        "naive_gamma_max": result.naive_gamma,
        "charge_time_steps": result.schedule.as_ref().map(|s| s.charge_time_steps()),
        "iterations": result.iterations(),
        "lambda_max": result.lambda_max,
        "viol_total": result.report.total,
        "viol_count": result.report.count(),
        "active_constraints": result.cla.len(),
    }))
}

fn write(dir: &Path, name: &str, text: &str) -> Result<(), ArtifactError> {
    let path = dir.join(name);
    fs::write(&path, text).map_err(|source| ArtifactError::Io { path, source })
}

/// Writes `schedule.csv`, `evs_schedule.csv`, `gantt.json` (when a schedule
/// exists), `violations.csv`, `trace.csv`, `cla.json` and `summary.json`.
pub fn write_solve_artifacts(
    dir: &Path,
    scenario: &ScenarioData,
    result: &CongenResult,
    prov: &Provenance,
    timing: bool,
) -> Result<(), ArtifactError> {
    fs::create_dir_all(dir).map_err(|source| ArtifactError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    if let Some(schedule) = &result.schedule {
        write(dir, "schedule.csv", &schedule_csv(schedule, scenario, prov))?;
        write(dir, "evs_schedule.csv", &evs_schedule_csv(schedule, scenario, prov))?;
        write(dir, "gantt.json", &gantt_json(schedule, scenario, prov))?;
    }
    write(dir, "violations.csv", &violations_csv(&result.report, prov))?;
    write(dir, "trace.csv", &trace_csv(&result.trace, prov, timing))?;
    write(dir, "cla.json", &result.cla.to_json())?;
    write(dir, "summary.json", &summary_json(result, prov))?;
    Ok(())
}

fn read(path: &Path) -> Result<String, ArtifactError> {
    fs::read_to_string(path).map_err(|source| ArtifactError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn records(path: &Path, text: &str) -> Result<Vec<csv::StringRecord>, ArtifactError> {
    csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(text.as_bytes())
        .records()
        .collect::<Result<_, _>>()
        .map_err(|e| ArtifactError::Malformed {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
}

fn field<T: std::str::FromStr>(
    path: &Path,
    rec: &csv::StringRecord,
    i: usize,
) -> Result<Option<T>, ArtifactError> {
    let raw = rec.get(i).ok_or_else(|| ArtifactError::Malformed {
        path: path.to_path_buf(),
        message: format!("missing column {i} in {rec:?}"),
    })?;
    if raw == "NA" {
        return Ok(None);
    }
    raw.parse().map(Some).map_err(|_| ArtifactError::Malformed {
        path: path.to_path_buf(),
        message: format!("cannot parse `{raw}`"),
    })
}

#[derive(Deserialize)]
struct GanttFile {
    t_steps: usize,
    bars: Vec<GanttBar>,
}

pub fn read_gantt(path: &Path) -> Result<(usize, Vec<GanttBar>), ArtifactError> {
    let g: GanttFile =
        serde_json::from_str(&read(path)?).map_err(|e| ArtifactError::Malformed {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
    Ok((g.t_steps, g.bars))
}

pub fn read_sweep(path: &Path) -> Result<Vec<SweepRow>, ArtifactError> {
    let text = read(path)?;
    records(path, &text)?
        .iter()
        .map(|r| {
            Ok(SweepRow {
                lambda: field(path, r, 0)?.unwrap_or(f64::NAN),
                charge_time_steps: field(path, r, 1)?,
                viol_total: field(path, r, 2)?,
                viol_count: field(path, r, 3)?,
                iters: field(path, r, 4)?,
                status: field::<String>(path, r, 5)?.unwrap_or_default(),
            })
        })
        .collect()
}

/// One row of `trace.csv`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRow {
    pub iter: usize,
    pub gamma: usize,
    pub pred_slack: f64,
    pub actual_viol: f64,
    pub n_constraints: usize,
    pub wall_s: Option<f64>,
}

pub fn read_trace(path: &Path) -> Result<Vec<TraceRow>, ArtifactError> {
    let text = read(path)?;
    let bad = |m: &str| ArtifactError::Malformed {
        path: path.to_path_buf(),
        message: m.to_string(),
    };
    records(path, &text)?
        .iter()
        .map(|r| {
            Ok(TraceRow {
                iter: field(path, r, 0)?.ok_or_else(|| bad("iter is NA"))?,
                gamma: field(path, r, 1)?.ok_or_else(|| bad("gamma is NA"))?,
                pred_slack: field(path, r, 2)?.unwrap_or(f64::NAN),
                actual_viol: field(path, r, 3)?.unwrap_or(f64::NAN),
                n_constraints: field(path, r, 4)?.ok_or_else(|| bad("n_constraints is NA"))?,
                wall_s: field(path, r, 5)?,
            })
        })
        .collect()
}

/// Maximal runs of steps between the first start and the last end during
/// which no TAZ charges, as inclusive `(from, to)` pairs.
pub fn idle_gaps(bars: &[GanttBar]) -> Vec<(usize, usize)> {
    let (Some(first), Some(last)) = (
        bars.iter().map(|b| b.start_t).min(),
        bars.iter().map(|b| b.end_t).max(),
    ) else {
        return Vec::new();
    };
    let busy = |t: usize| bars.iter().any(|b| b.start_t <= t && t <= b.end_t);
    let mut gaps = Vec::new();
    let mut open = None;
    for t in first..=last {
        match (busy(t), open) {
            (false, None) => open = Some(t),
            (true, Some(from)) => {
                gaps.push((from, t - 1));
                open = None;
            }
            _ => {}
        }
    }
    gaps
}

/// Plot-ready series from the artifacts in `dir`: Gantt bars with idle gaps
/// (from `gantt.json`), the trade-off curve (from `sweep.csv`) and the
/// iteration trajectory (from `trace.csv`). At least one of `gantt.json` and
/// `sweep.csv` must exist.
pub fn build_report(dir: &Path) -> Result<serde_json::Value, ArtifactError> {
    let gantt = dir.join("gantt.json");
    let sweep = dir.join("sweep.csv");
    let trace = dir.join("trace.csv");
    if !gantt.exists() && !sweep.exists() {
        return Err(ArtifactError::Missing(vec![gantt, sweep]));
    }
    let mut out = serde_json::Map::new();
    if gantt.exists() {
        let (t_steps, bars) = read_gantt(&gantt)?;
        let gaps: Vec<_> = idle_gaps(&bars)
            .into_iter()
            .map(|(from, to)| json!({"from_t": from, "to_t": to, "steps": to - from + 1}))
            .collect();
        out.insert(
            "gantt".into(),
            json!({"t_steps": t_steps, "bars": bars, "idle_gaps": gaps}),
        );
    }
    if sweep.exists() {
        let rows = read_sweep(&sweep)?;
        out.insert(
            "tradeoff".into(),
            json!({
                "lambda": rows.iter().map(|r| r.lambda).collect::<Vec<_>>(),
                "charge_time_steps": rows.iter().map(|r| r.charge_time_steps).collect::<Vec<_>>(),
                "viol_total": rows.iter().map(|r| r.viol_total).collect::<Vec<_>>(),
                "viol_count": rows.iter().map(|r| r.viol_count).collect::<Vec<_>>(),
                "status": rows.iter().map(|r| r.status.clone()).collect::<Vec<_>>(),
            }),
        );
    }
    if trace.exists() {
        let rows = read_trace(&trace)?;
        out.insert(
            "iterations".into(),
            json!({
                "iter": rows.iter().map(|r| r.iter).collect::<Vec<_>>(),
                "gamma": rows.iter().map(|r| r.gamma).collect::<Vec<_>>(),
                "pred_slack": rows.iter().map(|r| r.pred_slack).collect::<Vec<_>>(),
                "actual_viol": rows.iter().map(|r| r.actual_viol).collect::<Vec<_>>(),
                "n_constraints": rows.iter().map(|r| r.n_constraints).collect::<Vec<_>>(),
            }),
        );
    }
    Ok(serde_json::Value::Object(out))
}

pub fn report_json(dir: &Path) -> Result<String, ArtifactError> {
    Ok(pretty(&build_report(dir)?))
}
