//! The emergency charging MILP, its decoding and schedule validation.
//!
//! Steps run over `1..=T`. Charging at step `t` draws power at `t` and raises
//! the battery at `t + 1`; battery levels are indexed `0..=T` with level 0 the
//! initial state of charge.
//!
//! Program size, with `Z` TAZs, `N` EVs and `A` active surrogate constraints:
//!
//! - variables: `1 + T + Z·T + 2·N·T + A` (Γ, τ, TAZ and EV charging flags,
//!   battery levels, one slack per active constraint)
//! - constraints: `2T + N·T + 2·Z·T + 2·N·T + Z`, plus `A + 1` with the grid
//!   (Γ/τ definition, battery recursion, TAZ continuation and stop rules, EV
//!   charging bounds, departure; surrogate voltage rows and the slack budget)
//!
//! Battery ranges `[soc0, 1]` are variable bounds rather than rows.

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use crate::cla::ClaModel;
use crate::mathprog::{
    self, ObjSense, Program, ProgramError, Relation, Solution, SolveStatus, SolverOptions, VarId,
};
use crate::netmodel::ScenarioData;
use crate::types::{NodeId, Sense};

const TOL: f64 = 1e-6;

#[derive(Debug, thiserror::Error)]
pub enum EevcError {
    #[error("no surrogate function for active constraint {node} t={t} {sense}")]
    MissingCla { node: NodeId, t: usize, sense: Sense },
    #[error("grid constraints requested but the active set is empty")]
    EmptyActiveSet,
    #[error(transparent)]
    Program(#[from] ProgramError),
    #[error("solver returned no usable point (status {status:?}): {message}")]
    NoSolution { status: SolveStatus, message: String },
    #[error("binary `{name}` is fractional: {value}")]
    Fractional { name: String, value: f64 },
    #[error("schedule check failed: {0}")]
    Invariant(String),
}

/// One EEV-C solve: a scenario plus the currently active surrogate
/// constraints.
#[derive(Debug, Clone)]
pub struct EevcInstance<'a> {
    pub scenario: &'a ScenarioData,
    pub active: BTreeSet<(NodeId, usize, Sense)>,
    pub lambda_max: f64,
    pub include_grid: bool,
}

impl<'a> EevcInstance<'a> {
    /// Scheduling constraints only.
    pub fn naive(scenario: &'a ScenarioData) -> Self {
        EevcInstance {
            scenario,
            active: BTreeSet::new(),
            lambda_max: scenario.config().lambda_max,
            include_grid: false,
        }
    }

    pub fn with_grid(
        scenario: &'a ScenarioData,
        active: BTreeSet<(NodeId, usize, Sense)>,
        lambda_max: f64,
    ) -> Self {
        EevcInstance {
            scenario,
            active,
            lambda_max,
            include_grid: true,
        }
    }

    pub fn expected_size(&self) -> (usize, usize) {
        let s = self.scenario;
        let (t, z, n) = (s.t_steps(), s.tazs().len(), s.evs().len());
        let a = if self.include_grid { self.active.len() } else { 0 };
        let vars = 1 + t + z * t + 2 * n * t + a;
        let rows = 2 * t + n * t + 2 * z * t + 2 * n * t + z + if self.include_grid { a + 1 } else { 0 };
        (vars, rows)
    }
}

pub fn gamma_name() -> &'static str {
    "gamma"
}
pub fn tau_name(t: usize) -> String {
    format!("tau[{t}]")
}
pub fn taz_name(taz: &str, t: usize) -> String {
    format!("c[{taz},{t}]")
}
pub fn ev_name(ev: &str, t: usize) -> String {
    format!("ch[{ev},{t}]")
}
pub fn battery_name(ev: &str, t: usize) -> String {
    format!("L[{ev},{t}]")
}
pub fn slack_name(node: &NodeId, t: usize, sense: Sense) -> String {
    match sense {
        Sense::Over => format!("lp[{node},{t}]"),
        Sense::Under => format!("lm[{node},{t}]"),
    }
}

/// Builds the MILP for `inst`; surrogate rows take their coefficients from `cla`.
pub fn build_program(inst: &EevcInstance, cla: &ClaModel) -> Result<Program, EevcError> {
    let s = inst.scenario;
    let cfg = s.config();
    let tt = s.t_steps();
    let big_t = tt as f64;
    let beta = cfg.beta as f64;
    let n_taz = s.tazs().len();
    if inst.include_grid && inst.active.is_empty() {
        return Err(EevcError::EmptyActiveSet);
    }

    let mut p = Program::new(ObjSense::Max);
    let gamma = p.add_continuous(gamma_name(), f64::NEG_INFINITY, f64::INFINITY)?;
    let tau: Vec<VarId> = (1..=tt)
        .map(|t| p.add_binary(tau_name(t)))
        .collect::<Result<_, _>>()?;
    let mut c_taz = Vec::with_capacity(n_taz);
    for z in s.tazs() {
        c_taz.push(
            (1..=tt)
                .map(|t| p.add_binary(taz_name(&z.id, t)))
                .collect::<Result<Vec<_>, _>>()?,
        );
    }
    let mut c_ev = Vec::with_capacity(s.evs().len());
    for ev in s.evs() {
        c_ev.push(
            (1..=tt)
                .map(|t| p.add_binary(ev_name(&ev.id, t)))
                .collect::<Result<Vec<_>, _>>()?,
        );
    }
    let mut batt = Vec::with_capacity(s.evs().len());
    for ev in s.evs() {
        batt.push(
            (1..=tt)
                .map(|t| p.add_continuous(battery_name(&ev.id, t), ev.soc0, 1.0))
                .collect::<Result<Vec<_>, _>>()?,
        );
    }
    p.set_objective(vec![(gamma, 1.0)])?;
    // the relaxation bound on Γ only moves once τ is integral
    for &v in &tau {
        p.set_branch_priority(v, 2 * tt as u32 + 1);
    }
    for c in &c_taz {
        for (ti, &v) in c.iter().enumerate() {
            p.set_branch_priority(v, (tt - ti) as u32);
        }
    }

    // Γ ≤ tτᵗ + T(1 − τᵗ)
    for t in 1..=tt {
        p.add_constraint(
            format!("gamma_def[{t}]"),
            vec![(gamma, 1.0), (tau[t - 1], big_t - t as f64)],
            Relation::Le,
            big_t,
        )?;
    }
    // τᵗ ≥ Σ_ξ Σ_{t'≤t} C_ξ^{t'} / (T|Ξ|)
    let w = 1.0 / (big_t * n_taz as f64);
    for t in 1..=tt {
        let mut terms = vec![(tau[t - 1], 1.0)];
        for c in &c_taz {
            terms.extend(c[..t].iter().map(|&v| (v, -w)));
        }
        p.add_constraint(format!("tau_link[{t}]"), terms, Relation::Ge, 0.0)?;
    }
    // Lᵗ = Lᵗ⁻¹ + Cᵗ⁻¹/β, with no charging before step 1
    for (h, ev) in s.evs().iter().enumerate() {
        p.add_constraint(
            format!("batt[{},1]", ev.id),
            vec![(batt[h][0], 1.0)],
            Relation::Eq,
            ev.soc0,
        )?;
        for t in 2..=tt {
            p.add_constraint(
                format!("batt[{},{t}]", ev.id),
                vec![
                    (batt[h][t - 1], 1.0),
                    (batt[h][t - 2], -1.0),
                    (c_ev[h][t - 2], -1.0 / beta),
                ],
                Relation::Eq,
                0.0,
            )?;
        }
    }
    for (zi, z) in s.tazs().iter().enumerate() {
        let members = s.taz_members(zi);
        let e = members.len() as f64;
        for t in 1..=tt {
            // C_ξᵗ ≥ C_ξᵗ⁻¹ − Σ_h L_hᵗ / |E_ξ|
            let mut terms = vec![(c_taz[zi][t - 1], 1.0)];
            if t > 1 {
                terms.push((c_taz[zi][t - 2], -1.0));
            }
            terms.extend(members.iter().map(|&h| (batt[h][t - 1], 1.0 / e)));
            p.add_constraint(format!("stop[{},{t}]", z.id), terms, Relation::Ge, 0.0)?;
        }
        for t in 1..=tt {
            // C_ξᵗ ≤ 2 − (1 + β Σ_h L_hᵗ) / (β|E_ξ|)
            let mut terms = vec![(c_taz[zi][t - 1], 1.0)];
            terms.extend(members.iter().map(|&h| (batt[h][t - 1], 1.0 / e)));
            p.add_constraint(
                format!("cap[{},{t}]", z.id),
                terms,
                Relation::Le,
                2.0 - 1.0 / (beta * e),
            )?;
        }
    }
    // C_ξᵗ − L_hᵗ ≤ C_hᵗ ≤ C_ξᵗ
    let taz_of: Vec<usize> = s
        .evs()
        .iter()
        .map(|ev| s.tazs().iter().position(|z| z.id == ev.taz).expect("validated"))
        .collect();
    for (h, ev) in s.evs().iter().enumerate() {
        let zi = taz_of[h];
        for t in 1..=tt {
            p.add_constraint(
                format!("ev_lo[{},{t}]", ev.id),
                vec![
                    (c_ev[h][t - 1], 1.0),
                    (c_taz[zi][t - 1], -1.0),
                    (batt[h][t - 1], 1.0),
                ],
                Relation::Ge,
                0.0,
            )?;
            p.add_constraint(
                format!("ev_hi[{},{t}]", ev.id),
                vec![(c_ev[h][t - 1], 1.0), (c_taz[zi][t - 1], -1.0)],
                Relation::Le,
                0.0,
            )?;
        }
    }
    // Σ_h L_h^{d_ξ} / |E_ξ| = 1
    for (zi, z) in s.tazs().iter().enumerate() {
        let members = s.taz_members(zi);
        let e = members.len() as f64;
        p.add_constraint(
            format!("depart[{}]", z.id),
            members
                .iter()
                .map(|&h| (batt[h][z.departure - 1], 1.0 / e))
                .collect(),
            Relation::Eq,
            1.0,
        )?;
    }

    if inst.include_grid {
        let rate = s.rate_pu();
        let bus_of: Vec<usize> = s
            .evs()
            .iter()
            .map(|ev| s.ev_bus_position(&ev.node.bus).expect("validated"))
            .collect();
        let mut slacks = Vec::with_capacity(inst.active.len());
        for (node, t, sense) in &inst.active {
            let f = cla.get(node, *t, *sense).ok_or_else(|| EevcError::MissingCla {
                node: node.clone(),
                t: *t,
                sense: *sense,
            })?;
            let lam = p.add_continuous(slack_name(node, *t, *sense), 0.0, f64::INFINITY)?;
            slacks.push((lam, 1.0));
            // p_kᵗ = Σ_{h at k} C_hᵗ R
            let mut terms: Vec<(VarId, f64)> = (0..s.evs().len())
                .map(|h| (c_ev[h][t - 1], f.a1[bus_of[h]] * rate))
                .collect();
            match sense {
                Sense::Over => {
                    terms.push((lam, -1.0));
                    p.add_constraint(
                        format!("vmax[{node},{t}]"),
                        terms,
                        Relation::Le,
                        cfg.v_max - f.a0,
                    )?;
                }
                Sense::Under => {
                    terms.push((lam, 1.0));
                    p.add_constraint(
                        format!("vmin[{node},{t}]"),
                        terms,
                        Relation::Ge,
                        cfg.v_min - f.a0,
                    )?;
                }
            }
        }
        p.add_constraint("budget", slacks, Relation::Le, inst.lambda_max)?;
    }
    Ok(p)
}

/// Where the MILP is solved.
#[derive(Debug, Clone)]
pub enum Backend {
    Builtin(SolverOptions),
    /// External solver via MPS files in the given directory.
    External(PathBuf),
}

impl Default for Backend {
    fn default() -> Self {
        Backend::Builtin(SolverOptions::default())
    }
}

pub fn solve_program(p: &Program, backend: &Backend) -> Result<Solution, EevcError> {
    Ok(match backend {
        Backend::Builtin(opts) => mathprog::solve_milp_with(p, opts),
        Backend::External(dir) => mathprog::solve_external(p, dir)?,
    })
}

/// A decoded, validated charging plan.
#[derive(Debug, Clone, PartialEq)]
pub struct ChargeSchedule {
    pub gamma_max: usize,
    /// `tau[t-1]`
    pub tau: Vec<bool>,
    /// `c_taz[taz][t-1]`
    pub c_taz: Vec<Vec<bool>>,
    /// `c_ev[ev][t-1]`
    pub c_ev: Vec<Vec<bool>>,
    /// `batteries[ev][t]` for `t = 0..=T`
    pub batteries: Vec<Vec<f64>>,
    pub predicted_slacks: BTreeMap<(NodeId, usize, Sense), f64>,
}

impl ChargeSchedule {
    /// The unique schedule in which TAZ `z` starts charging at `starts[z]`
    /// (`None`: never) and every EV charges from its TAZ's start until full.
    pub fn from_starts(scenario: &ScenarioData, starts: &[Option<usize>]) -> Self {
        let tt = scenario.t_steps();
        let beta = scenario.config().beta as f64;
        let mut c_taz = vec![vec![false; tt]; scenario.tazs().len()];
        let mut c_ev = vec![vec![false; tt]; scenario.evs().len()];
        for (zi, start) in starts.iter().enumerate() {
            let Some(s) = *start else { continue };
            let w = scenario.taz_window(zi);
            for t in s..(s + w).min(tt + 1) {
                c_taz[zi][t - 1] = true;
            }
            for &h in scenario.taz_members(zi) {
                for t in s..(s + scenario.steps_needed(h)).min(tt + 1) {
                    c_ev[h][t - 1] = true;
                }
            }
        }
        let batteries = (0..scenario.evs().len())
            .map(|h| battery_path(scenario.initial_steps(h), &c_ev[h], beta))
            .collect();
        let first = first_start(&c_taz);
        let tau = (1..=tt).map(|t| first.is_some_and(|s| t >= s)).collect();
        let gamma_max = first.unwrap_or(tt);
        ChargeSchedule {
            gamma_max,
            tau,
            c_taz,
            c_ev,
            batteries,
            predicted_slacks: BTreeMap::new(),
        }
    }

    pub fn t_steps(&self) -> usize {
        self.tau.len()
    }

    /// Steps from Γ_max to the end of the horizon.
    pub fn charge_time_steps(&self) -> usize {
        self.t_steps() - self.gamma_max
    }

    /// First charging step of each TAZ.
    pub fn taz_starts(&self) -> Vec<Option<usize>> {
        self.c_taz
            .iter()
            .map(|c| c.iter().position(|&x| x).map(|i| i + 1))
            .collect()
    }

    /// `(start, end)` charging interval per TAZ, inclusive.
    pub fn taz_windows(&self) -> Vec<Option<(usize, usize)>> {
        self.c_taz
            .iter()
            .map(|c| {
                let first = c.iter().position(|&x| x)?;
                let last = c.iter().rposition(|&x| x)?;
                Some((first + 1, last + 1))
            })
            .collect()
    }

    /// `on[t-1][ev]`
    pub fn ev_on_profile(&self) -> Vec<Vec<bool>> {
        (0..self.t_steps())
            .map(|ti| self.c_ev.iter().map(|c| c[ti]).collect())
            .collect()
    }

    pub fn predicted_slack_total(&self) -> f64 {
        self.predicted_slacks.values().fold(0.0, |a, s| a + s)
    }

    /// Checks the scheduling rules against `scenario`; `lambda_max` bounds the
    /// predicted slack sum.
    pub fn validate(&self, scenario: &ScenarioData, lambda_max: f64) -> Result<(), EevcError> {
        let bad = |m: String| Err(EevcError::Invariant(m));
        let tt = scenario.t_steps();
        let beta = scenario.config().beta as f64;
        if self.tau.len() != tt
            || self.c_taz.len() != scenario.tazs().len()
            || self.c_ev.len() != scenario.evs().len()
        {
            return bad("schedule dimensions do not match the scenario".into());
        }
        for (zi, z) in scenario.tazs().iter().enumerate() {
            let on: Vec<usize> = (1..=tt).filter(|&t| self.c_taz[zi][t - 1]).collect();
            let w = scenario.taz_window(zi);
            if on.len() != w {
                return bad(format!("TAZ {} charges {} steps, needs {w}", z.id, on.len()));
            }
            if let (Some(&a), Some(&b)) = (on.first(), on.last()) {
                if b - a + 1 != on.len() {
                    return bad(format!("TAZ {} charging window is not contiguous", z.id));
                }
            }
        }
        for (h, ev) in scenario.evs().iter().enumerate() {
            let zi = scenario
                .tazs()
                .iter()
                .position(|z| z.id == ev.taz)
                .expect("validated");
            let on: Vec<usize> = (1..=tt).filter(|&t| self.c_ev[h][t - 1]).collect();
            let need = scenario.steps_needed(h);
            if on.len() != need {
                return bad(format!("EV {} charges {} steps, needs {need}", ev.id, on.len()));
            }
            if let (Some(&a), Some(&b)) = (on.first(), on.last()) {
                if b - a + 1 != on.len() {
                    return bad(format!("EV {} charging steps are not consecutive", ev.id));
                }
                if Some(a) != self.taz_starts()[zi] {
                    return bad(format!("EV {} does not start with its TAZ", ev.id));
                }
            }
            if let Some(t) = on.iter().find(|&&t| !self.c_taz[zi][t - 1]) {
                return bad(format!("EV {} charges at t={t} while its TAZ is idle", ev.id));
            }
            let path = battery_path(scenario.initial_steps(h), &self.c_ev[h], beta);
            let b = &self.batteries[h];
            if b.len() != tt + 1 || b.iter().zip(&path).any(|(x, y)| (x - y).abs() > 1e-9) {
                return bad(format!("EV {} battery does not follow its charging", ev.id));
            }
            let d = scenario.tazs()[zi].departure;
            if (b[d] - 1.0).abs() > 1e-9 || b.iter().any(|&x| x > 1.0 + 1e-9) {
                return bad(format!("EV {} is not exactly full by departure t={d}", ev.id));
            }
        }
        let first = first_start(&self.c_taz);
        for t in 1..=tt {
            let want = first.is_some_and(|s| t >= s);
            if self.tau[t - 1] != want {
                return bad(format!("tau[{t}] = {} but first start is {first:?}", self.tau[t - 1]));
            }
        }
        if self.gamma_max != first.unwrap_or(tt) {
            return bad(format!(
                "gamma {} differs from first start {first:?}",
                self.gamma_max
            ));
        }
        if self.predicted_slacks.values().any(|&l| l < -TOL) {
            return bad("negative slack".into());
        }
        let total = self.predicted_slack_total();
        if total > lambda_max + TOL {
            return bad(format!("slack sum {total} exceeds budget {lambda_max}"));
        }
        Ok(())
    }
}

fn first_start(c_taz: &[Vec<bool>]) -> Option<usize> {
    c_taz
        .iter()
        .filter_map(|c| c.iter().position(|&x| x))
        .min()
        .map(|i| i + 1)
}

/// Battery levels `0..=T` from integer step counts, so levels are exact
/// multiples of `1/β`.
fn battery_path(initial_steps: usize, on: &[bool], beta: f64) -> Vec<f64> {
    let mut steps = initial_steps;
    let mut out = Vec::with_capacity(on.len() + 1);
    out.push(steps as f64 / beta);
    // level at step 1 equals the initial one; step t's charging lands at t+1
    for t in 1..=on.len() {
        if t >= 2 && on[t - 2] {
            steps += 1;
        }
        out.push(steps as f64 / beta);
    }
    out
}

/// Rounds and validates a MILP solution of [`build_program`].
pub fn decode(p: &Program, sol: &Solution, inst: &EevcInstance) -> Result<ChargeSchedule, EevcError> {
    if !sol.has_values() || !matches!(sol.status, SolveStatus::Optimal | SolveStatus::Limit) {
        return Err(EevcError::NoSolution {
            status: sol.status,
            message: sol.message.clone(),
        });
    }
    let s = inst.scenario;
    let tt = s.t_steps();
    let value = |name: &str| -> Result<f64, EevcError> {
        sol.value(p, name)
            .ok_or_else(|| EevcError::Invariant(format!("solution lacks `{name}`")))
    };
    let binary = |name: String| -> Result<bool, EevcError> {
        let v = value(&name)?;
        if (v - v.round()).abs() > TOL || !(v.round() == 0.0 || v.round() == 1.0) {
            return Err(EevcError::Fractional { name, value: v });
        }
        Ok(v.round() == 1.0)
    };
    let tau = (1..=tt).map(|t| binary(tau_name(t))).collect::<Result<Vec<_>, _>>()?;
    let c_taz = s
        .tazs()
        .iter()
        .map(|z| (1..=tt).map(|t| binary(taz_name(&z.id, t))).collect())
        .collect::<Result<Vec<Vec<_>>, _>>()?;
    let c_ev = s
        .evs()
        .iter()
        .map(|ev| (1..=tt).map(|t| binary(ev_name(&ev.id, t))).collect())
        .collect::<Result<Vec<Vec<_>>, _>>()?;
    let beta = s.config().beta as f64;
    let mut batteries = Vec::with_capacity(s.evs().len());
    for (h, ev) in s.evs().iter().enumerate() {
        let path = battery_path(s.initial_steps(h), &c_ev[h], beta);
        for t in 1..=tt {
            let l = value(&battery_name(&ev.id, t))?;
            if (l - path[t]).abs() > TOL {
                return Err(EevcError::Invariant(format!(
                    "solver battery {l} for EV {} at t={t} differs from recursion {}",
                    ev.id, path[t]
                )));
            }
        }
        batteries.push(path);
    }
    let mut predicted_slacks = BTreeMap::new();
    if inst.include_grid {
        for (node, t, sense) in &inst.active {
            let l = value(&slack_name(node, *t, *sense))?;
            predicted_slacks.insert((node.clone(), *t, *sense), l.max(0.0));
        }
    }
    let gamma_max = first_start(&c_taz).unwrap_or(tt);
    let solver_gamma = value(gamma_name())?;
    if (solver_gamma - gamma_max as f64).abs() > TOL {
        return Err(EevcError::Invariant(format!(
            "solver objective {solver_gamma} differs from schedule gamma {gamma_max}"
        )));
    }
    let schedule = ChargeSchedule {
        gamma_max,
        tau,
        c_taz,
        c_ev,
        batteries,
        predicted_slacks,
    };
    schedule.validate(s, inst.lambda_max)?;
    Ok(schedule)
}

/// Builds, solves and decodes; `Ok(None)` when the MILP is infeasible.
pub fn solve_instance(
    inst: &EevcInstance,
    cla: &ClaModel,
    backend: &Backend,
) -> Result<(Option<ChargeSchedule>, Solution), EevcError> {
    let p = build_program(inst, cla)?;
    let sol = solve_program(&p, backend)?;
    if sol.status == SolveStatus::Infeasible {
        return Ok((None, sol));
    }
    let schedule = decode(&p, &sol, inst)?;
    Ok((Some(schedule), sol))
}

/// EV demand per bus and step in kW: `out[t-1][k]`, buses ordered like
/// [`ScenarioData::ev_buses`].
pub fn schedule_to_demand(schedule: &ChargeSchedule, scenario: &ScenarioData) -> Vec<Vec<f64>> {
    let rate = scenario.config().rate_kw;
    let mut out = vec![vec![0.0; scenario.ev_buses().len()]; schedule.t_steps()];
    for (h, ev) in scenario.evs().iter().enumerate() {
        let k = scenario.ev_bus_position(&ev.node.bus).expect("validated");
        for (ti, &on) in schedule.c_ev[h].iter().enumerate() {
            if on {
                out[ti][k] += rate;
            }
        }
    }
    out
}
