//! Constraint generation: solve, simulate, add surrogate constraints for the
//! violated bounds, refit, repeat.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::time::Instant;

use crate::cla::{
    self, append_samples, compute_targets, default_sample_count, draw_samples, fit_many, ClaError,
    ClaModel, ClaProvenance, SampleSet,
};
use crate::eevc::{self, Backend, ChargeSchedule, EevcError, EevcInstance};
use crate::netmodel::ScenarioData;
use crate::powerflow::{simulate_profile, PfError, PowerFlowModel, ViolationReport, VoltageModel};
use crate::types::{NodeId, Sense};

pub const TOOL: &str = concat!("eevc ", env!("CARGO_PKG_VERSION"));

#[derive(Debug, thiserror::Error)]
pub enum CongenError {
    #[error(transparent)]
    PowerFlow(#[from] PfError),
    #[error(transparent)]
    Cla(#[from] ClaError),
    #[error(transparent)]
    Eevc(#[from] EevcError),
    #[error("oracle would enumerate {tuples} start tuples, budget is {budget}")]
    OracleBudget { tuples: u128, budget: u128 },
    #[error("empty list of violation budgets")]
    EmptySweep,
    #[error("invalid violation budget {0}")]
    BadLambda(f64),
}

#[derive(Debug, Clone)]
pub struct CongenConfig {
    /// Initial sample count; `None` picks a default from the EV bus count.
    pub m: Option<usize>,
    pub seed: u64,
    pub max_iters: usize,
    /// Overrides the scenario's violation budget.
    pub lambda_max: Option<f64>,
    pub backend: Backend,
}

impl Default for CongenConfig {
    fn default() -> Self {
        CongenConfig {
            m: None,
            seed: 1,
            max_iters: 10,
            lambda_max: None,
            backend: Backend::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CongenStatus {
    Converged,
    Infeasible,
    IterationLimit,
}

impl CongenStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            CongenStatus::Converged => "converged",
            CongenStatus::Infeasible => "infeasible",
            CongenStatus::IterationLimit => "iteration_limit",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub gamma: usize,
    pub pred_slack: f64,
    pub actual_viol: f64,
    pub actual_count: usize,
    /// Active surrogate constraints in this iteration's MILP.
    pub n_constraints: usize,
    /// Constraints activated before this iteration's solve.
    pub added: Vec<(NodeId, usize, Sense)>,
    pub milp_nodes: usize,
    pub wall_s: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct IterationTrace {
    pub records: Vec<IterationRecord>,
}

impl IterationTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last(&self) -> Option<&IterationRecord> {
        self.records.last()
    }
}

#[derive(Debug, Clone)]
pub struct CongenResult {
    pub status: CongenStatus,
    /// Last decoded schedule; `None` only if the naive problem is infeasible.
    pub schedule: Option<ChargeSchedule>,
    /// Simulated violations of `schedule`.
    pub report: ViolationReport,
    pub trace: IterationTrace,
    pub cla: ClaModel,
    pub samples: Option<SampleSet>,
    pub lambda_max: f64,
    /// Γ_max of the first (naive) iteration.
    pub naive_gamma: Option<usize>,
}

impl CongenResult {
    pub fn iterations(&self) -> usize {
        self.trace.len()
    }

    pub fn gamma(&self) -> Option<usize> {
        self.schedule.as_ref().map(|s| s.gamma_max)
    }

    /// Active constraints of the final MILP.
    pub fn active(&self) -> BTreeSet<(NodeId, usize, Sense)> {
        self.cla
            .functions()
            .map(|f| (f.node.clone(), f.t, f.sense))
            .collect()
    }
}

pub fn run(scenario: &ScenarioData, config: &CongenConfig) -> Result<CongenResult, CongenError> {
    run_with_model(scenario, config, &PowerFlowModel::default())
}

/// Runs the loop with `model` as the ground truth for simulation and sampling.
pub fn run_with_model(
    scenario: &ScenarioData,
    config: &CongenConfig,
    model: &dyn VoltageModel,
) -> Result<CongenResult, CongenError> {
    let lambda_max = config.lambda_max.unwrap_or(scenario.config().lambda_max);
    if !(lambda_max >= 0.0) {
        return Err(CongenError::BadLambda(lambda_max));
    }
    let m = config
        .m
        .unwrap_or_else(|| default_sample_count(scenario.ev_buses().len()));
    let mut cla_model = ClaModel::new(
        scenario.ev_buses().to_vec(),
        ClaProvenance {
            tool: TOOL.into(),
            seed: config.seed,
            m,
            scenario_hash: scenario.content_hash(),
        },
    );
    let mut samples: Option<SampleSet> = None;
    let mut active: BTreeSet<(NodeId, usize, Sense)> = BTreeSet::new();
    let mut trace = IterationTrace::default();
    let mut added: Vec<(NodeId, usize, Sense)> = Vec::new();
    let mut last: Option<(ChargeSchedule, ViolationReport)> = None;
    let mut naive_gamma = None;

    for iteration in 1..=config.max_iters.max(1) {
        let started = Instant::now();
        let inst = if active.is_empty() {
            EevcInstance {
                lambda_max,
                ..EevcInstance::naive(scenario)
            }
        } else {
            EevcInstance::with_grid(scenario, active.clone(), lambda_max)
        };
        let (schedule, sol) = eevc::solve_instance(&inst, &cla_model, &config.backend)?;
        let Some(schedule) = schedule else {
            let (schedule, report) = match last {
                Some((s, r)) => (Some(s), r),
                None => (None, ViolationReport::default()),
            };
            return Ok(CongenResult {
                status: CongenStatus::Infeasible,
                schedule,
                report,
                trace,
                cla: cla_model,
                samples,
                lambda_max,
                naive_gamma,
            });
        };
        naive_gamma.get_or_insert(schedule.gamma_max);
        let on = schedule.ev_on_profile();
        let (_, report) = simulate_profile(model, scenario, &on)?;
        trace.records.push(IterationRecord {
            iteration,
            gamma: schedule.gamma_max,
            pred_slack: schedule.predicted_slack_total(),
            actual_viol: report.total,
            actual_count: report.count(),
            n_constraints: active.len(),
            added: std::mem::take(&mut added),
            milp_nodes: sol.nodes,
            wall_s: started.elapsed().as_secs_f64(),
        });
        if report.total <= lambda_max {
            return Ok(CongenResult {
                status: CongenStatus::Converged,
                schedule: Some(schedule),
                report,
                trace,
                cla: cla_model,
                samples,
                lambda_max,
                naive_gamma,
            });
        }
        if iteration == config.max_iters.max(1) {
            return Ok(CongenResult {
                status: CongenStatus::IterationLimit,
                schedule: Some(schedule),
                report,
                trace,
                cla: cla_model,
                samples,
                lambda_max,
                naive_gamma,
            });
        }

        let violated: BTreeSet<(NodeId, usize, Sense)> = report
            .entries
            .iter()
            .map(|v| (v.node.clone(), v.t, v.kind))
            .collect();
        added = violated.difference(&active).cloned().collect();
        active.extend(violated.iter().cloned());

        let set = match samples.as_mut() {
            Some(set) => set,
            None => samples.insert(draw_samples(scenario, m, config.seed)?),
        };
        // operating points of this schedule at the violated steps
        let known: HashSet<&Vec<bool>> = set.patterns().iter().collect();
        let mut fresh: Vec<Vec<bool>> = Vec::new();
        for t in violated.iter().map(|(_, t, _)| *t).collect::<BTreeSet<_>>() {
            let col = &on[t - 1];
            if !known.contains(col) && !fresh.contains(col) {
                fresh.push(col.clone());
            }
        }
        if !fresh.is_empty() {
            append_samples(model, scenario, set, fresh)?;
        }
        let mut by_t: BTreeMap<usize, Vec<NodeId>> = BTreeMap::new();
        for (node, t, _) in &active {
            by_t.entry(*t).or_default().push(node.clone());
        }
        for (t, nodes) in by_t {
            compute_targets(model, scenario, set, &nodes, &[t])?;
        }
        let keys: Vec<_> = active.iter().cloned().collect();
        for f in fit_many(set, &keys)? {
            cla_model.insert(f);
        }
        cla_model.provenance.m = set.len();
        last = Some((schedule, report));
    }
    unreachable!("loop returns on its last iteration")
}

/// Exact optimum by enumeration of TAZ start steps.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult {
    /// Γ_max of the best feasible start tuple; `None` if no tuple is feasible.
    pub gamma_opt: Option<usize>,
    pub starts: Vec<Option<usize>>,
    pub violation_total: f64,
    /// Tuples simulated before the first feasible one.
    pub evaluated: usize,
}

pub const ORACLE_BUDGET: u128 = 1_000_000;

pub fn brute_force_oracle(
    scenario: &ScenarioData,
    lambda_max: f64,
    model: &dyn VoltageModel,
) -> Result<OracleResult, CongenError> {
    let tt = scenario.t_steps();
    // one start per TAZ with s + window ≤ departure; TAZs already full never start
    let choices: Vec<Vec<Option<usize>>> = (0..scenario.tazs().len())
        .map(|zi| {
            let w = scenario.taz_window(zi);
            if w == 0 {
                vec![None]
            } else {
                let d = scenario.tazs()[zi].departure;
                (1..=d.saturating_sub(w)).map(Some).collect()
            }
        })
        .collect();
    let tuples: u128 = choices.iter().map(|c| c.len() as u128).product();
    if tuples > ORACLE_BUDGET {
        return Err(CongenError::OracleBudget {
            tuples,
            budget: ORACLE_BUDGET,
        });
    }
    let mut all: Vec<Vec<Option<usize>>> = vec![Vec::new()];
    for c in &choices {
        all = all
            .into_iter()
            .flat_map(|prefix| {
                c.iter().map(move |&s| {
                    let mut v = prefix.clone();
                    v.push(s);
                    v
                })
            })
            .collect();
    }
    let gamma_of = |starts: &[Option<usize>]| starts.iter().flatten().copied().min().unwrap_or(tt);
    // stable: ties keep lexicographic order
    all.sort_by_key(|s| std::cmp::Reverse(gamma_of(s)));

    for (i, starts) in all.iter().enumerate() {
        let schedule = ChargeSchedule::from_starts(scenario, starts);
        let (_, report) = simulate_profile(model, scenario, &schedule.ev_on_profile())?;
        if report.total <= lambda_max {
            return Ok(OracleResult {
                gamma_opt: Some(gamma_of(starts)),
                starts: starts.clone(),
                violation_total: report.total,
                evaluated: i + 1,
            });
        }
    }
    Ok(OracleResult {
        gamma_opt: None,
        starts: Vec::new(),
        violation_total: f64::NAN,
        evaluated: all.len(),
    })
}

#[derive(Debug, Clone)]
pub struct SweepPoint {
    pub lambda: f64,
    pub result: CongenResult,
}

impl SweepPoint {
    /// Steps between Γ_max and the end of the horizon (15 minutes each).
    pub fn charge_time_steps(&self) -> Option<usize> {
        self.result.schedule.as_ref().map(|s| s.charge_time_steps())
    }
}

/// Sorted, de-duplicated budgets; the flag reports whether duplicates were dropped.
pub fn normalise_lambdas(values: &[f64]) -> Result<(Vec<f64>, bool), CongenError> {
    if values.is_empty() {
        return Err(CongenError::EmptySweep);
    }
    if let Some(&bad) = values.iter().find(|l| !(**l >= 0.0)) {
        return Err(CongenError::BadLambda(bad));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let before = v.len();
    v.dedup();
    let dropped = v.len() != before;
    Ok((v, dropped))
}

/// One congen run per budget, ascending.
pub fn sweep(
    scenario: &ScenarioData,
    lambdas: &[f64],
    config: &CongenConfig,
    model: &dyn VoltageModel,
) -> Result<Vec<SweepPoint>, CongenError> {
    let (lambdas, _) = normalise_lambdas(lambdas)?;
    lambdas
        .into_iter()
        .map(|lambda| {
            let cfg = CongenConfig {
                lambda_max: Some(lambda),
                ..config.clone()
            };
            Ok(SweepPoint {
                lambda,
                result: run_with_model(scenario, &cfg, model)?,
            })
        })
        .collect()
}

/// Relative errors `|pred − true| / true` of over-estimators fitted on
/// `train` and evaluated on `held_out`, for every `(node, t)` in `keys`.
pub fn held_out_relative_errors(
    model: &dyn VoltageModel,
    scenario: &ScenarioData,
    train: &SampleSet,
    held_out: &mut SampleSet,
    keys: &[(NodeId, usize)],
) -> Result<Vec<f64>, CongenError> {
    let mut train = train.clone();
    let mut by_t: BTreeMap<usize, Vec<NodeId>> = BTreeMap::new();
    for (n, t) in keys {
        by_t.entry(*t).or_default().push(n.clone());
    }
    for (t, nodes) in &by_t {
        compute_targets(model, scenario, &mut train, nodes, &[*t])?;
        compute_targets(model, scenario, held_out, nodes, &[*t])?;
    }
    let mut errs = Vec::new();
    for (n, t) in keys {
        let f = cla::fit_cla(&train, n, *t, Sense::Over)?;
        let truth = held_out.targets(n, *t).expect("computed above");
        for (p, &v) in held_out.demand().iter().zip(truth) {
            errs.push((f.predict(p)? - v).abs() / v);
        }
    }
    Ok(errs)
}
