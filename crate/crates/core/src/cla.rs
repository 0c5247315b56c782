//! Conservative affine approximations of squared voltage magnitudes.
//!
//! A sample column is an EV on/off pattern; its features are the aggregate EV
//! demand per EV bus in p.u. For a node `i` and step `t`, an over-estimator
//! `a0 + a1ᵀp ≥ v` (or an under-estimator `≤ v`) is fitted over all columns by
//! minimising the ℓ1 residual.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::mathprog::{self, ObjSense, Program, Relation, SolveStatus};
use crate::netmodel::ScenarioData;
use crate::powerflow::{bus_demand_pu, PfError, VoltageModel};
use crate::types::{NodeId, Sense};

/// Absolute slack allowed on training-set conservativeness, squared p.u.
pub const CONSERVATIVE_TOL: f64 = 1e-6;

#[derive(Debug, thiserror::Error)]
pub enum ClaError {
    #[error("need at least {need} samples for {buses} EV buses, got {m}")]
    TooFewSamples { m: usize, need: usize, buses: usize },
    #[error("power flow for sample {m} at t={t}: {source}")]
    PowerFlow {
        m: usize,
        t: usize,
        #[source]
        source: PfError,
    },
    #[error("no targets for node {node} at t={t}")]
    MissingTargets { node: NodeId, t: usize },
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("time step {t} outside 1..={t_steps}")]
    BadStep { t: usize, t_steps: usize },
    #[error("expected a vector of length {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("fit LP for {what}: {message}")]
    Solver { what: String, message: String },
    #[error("CLA file: {0}")]
    Format(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Sample columns with their per-bus demand and computed voltage targets.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    ev_buses: Vec<String>,
    patterns: Vec<Vec<bool>>,
    demand: Vec<Vec<f64>>,
    targets: BTreeMap<(NodeId, usize), Vec<f64>>,
}

impl SampleSet {
    /// Sample set from explicit EV on/off patterns, targets empty.
    pub fn from_patterns(scenario: &ScenarioData, patterns: Vec<Vec<bool>>) -> Result<Self, ClaError> {
        let n = scenario.evs().len();
        if let Some(bad) = patterns.iter().find(|p| p.len() != n) {
            return Err(ClaError::Dimension {
                expected: n,
                got: bad.len(),
            });
        }
        Ok(SampleSet {
            ev_buses: scenario.ev_buses().to_vec(),
            demand: patterns.iter().map(|p| bus_demand_pu(scenario, p)).collect(),
            patterns,
            targets: BTreeMap::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.patterns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patterns.is_empty()
    }

    pub fn ev_buses(&self) -> &[String] {
        &self.ev_buses
    }

    pub fn patterns(&self) -> &[Vec<bool>] {
        &self.patterns
    }

    /// `demand()[m][k]`: p.u. demand at EV bus `k` in column `m`.
    pub fn demand(&self) -> &[Vec<f64>] {
        &self.demand
    }

    pub fn targets(&self, node: &NodeId, t: usize) -> Option<&[f64]> {
        self.targets.get(&(node.clone(), t)).map(Vec::as_slice)
    }

    pub fn target_keys(&self) -> impl Iterator<Item = &(NodeId, usize)> {
        self.targets.keys()
    }
}

pub fn default_sample_count(n_ev_buses: usize) -> usize {
    (2 * n_ev_buses + 10).max(30)
}

/// Random EV on/off columns, each EV charging with probability ½; column 1 is
/// all-off and column 2 all-on.
pub fn draw_samples(scenario: &ScenarioData, m: usize, seed: u64) -> Result<SampleSet, ClaError> {
    let k = scenario.ev_buses().len();
    if m < k + 2 {
        return Err(ClaError::TooFewSamples {
            m,
            need: k + 2,
            buses: k,
        });
    }
    let n = scenario.evs().len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut patterns = vec![vec![false; n], vec![true; n]];
    for _ in 2..m {
        patterns.push((0..n).map(|_| rng.gen_bool(0.5)).collect());
    }
    SampleSet::from_patterns(scenario, patterns)
}

fn check_keys(scenario: &ScenarioData, nodes: &[NodeId], times: &[usize]) -> Result<(), ClaError> {
    if let Some(n) = nodes.iter().find(|n| !scenario.network().has_node(n)) {
        return Err(ClaError::UnknownNode(n.clone()));
    }
    let t_steps = scenario.t_steps();
    if let Some(&t) = times.iter().find(|&&t| t == 0 || t > t_steps) {
        return Err(ClaError::BadStep { t, t_steps });
    }
    Ok(())
}

/// Squared voltages at every node for columns `cols` at each step in `times`.
fn evaluate(
    model: &dyn VoltageModel,
    scenario: &ScenarioData,
    patterns: &[Vec<bool>],
    offset: usize,
    times: &BTreeSet<usize>,
) -> Result<BTreeMap<usize, Vec<Vec<f64>>>, ClaError> {
    let jobs: Vec<(usize, usize)> = times
        .iter()
        .flat_map(|&t| (0..patterns.len()).map(move |m| (t, m)))
        .collect();
    let results: Vec<Vec<f64>> = jobs
        .par_iter()
        .map(|&(t, m)| {
            model
                .squared_voltages(scenario, t, &patterns[m])
                .map_err(|source| ClaError::PowerFlow {
                    m: offset + m + 1,
                    t,
                    source,
                })
        })
        .collect::<Result<_, _>>()?;
    let mut out: BTreeMap<usize, Vec<Vec<f64>>> = BTreeMap::new();
    for ((t, _), v) in jobs.into_iter().zip(results) {
        out.entry(t).or_default().push(v);
    }
    Ok(out)
}

/// Fills targets for every `nodes × times` pair; one voltage evaluation per
/// (column, step).
pub fn compute_targets(
    model: &dyn VoltageModel,
    scenario: &ScenarioData,
    samples: &mut SampleSet,
    nodes: &[NodeId],
    times: &[usize],
) -> Result<(), ClaError> {
    check_keys(scenario, nodes, times)?;
    let net = scenario.network();
    let wanted: BTreeSet<usize> = times
        .iter()
        .copied()
        .filter(|&t| {
            nodes
                .iter()
                .any(|n| !samples.targets.contains_key(&(n.clone(), t)))
        })
        .collect();
    let volts = evaluate(model, scenario, &samples.patterns, 0, &wanted)?;
    for (t, per_col) in volts {
        for n in nodes {
            let i = net.node_index(n).expect("checked above");
            samples
                .targets
                .entry((n.clone(), t))
                .or_insert_with(|| per_col.iter().map(|v| v[i]).collect());
        }
    }
    Ok(())
}

/// Appends columns and extends every existing target so all stay length M.
pub fn append_samples(
    model: &dyn VoltageModel,
    scenario: &ScenarioData,
    samples: &mut SampleSet,
    patterns: Vec<Vec<bool>>,
) -> Result<(), ClaError> {
    let extra = SampleSet::from_patterns(scenario, patterns)?;
    let times: BTreeSet<usize> = samples.targets.keys().map(|(_, t)| *t).collect();
    let volts = evaluate(model, scenario, &extra.patterns, samples.len(), &times)?;
    let net = scenario.network();
    for ((node, t), target) in samples.targets.iter_mut() {
        let i = net.node_index(node).expect("targets hold known nodes");
        target.extend(volts[t].iter().map(|v| v[i]));
    }
    samples.patterns.extend(extra.patterns);
    samples.demand.extend(extra.demand);
    Ok(())
}

/// An affine estimator of the squared voltage at one node and step.
#[derive(Debug, Clone, PartialEq)]
pub struct ClaFunction {
    pub node: NodeId,
    pub t: usize,
    pub sense: Sense,
    pub a0: f64,
    /// Ordered like [`ScenarioData::ev_buses`].
    pub a1: Vec<f64>,
    /// ℓ1 residual over the training columns.
    pub residual: f64,
}

impl ClaFunction {
    pub fn predict(&self, p: &[f64]) -> Result<f64, ClaError> {
        if p.len() != self.a1.len() {
            return Err(ClaError::Dimension {
                expected: self.a1.len(),
                got: p.len(),
            });
        }
        Ok(self.a0 + self.a1.iter().zip(p).map(|(a, x)| a * x).sum::<f64>())
    }
}

/// Result of an ℓ1 affine fit.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineFit {
    pub a0: f64,
    pub a1: Vec<f64>,
    pub residual: f64,
}

/// Least-absolute-deviation fit of `v ≈ a0 + a1ᵀp`, optionally constrained
/// to over- or under-estimate every point.
pub fn fit_affine(p: &[Vec<f64>], v: &[f64], sense: Option<Sense>) -> Result<AffineFit, String> {
    if p.len() != v.len() {
        return Err(format!("{} feature rows for {} targets", p.len(), v.len()));
    }
    if v.is_empty() {
        return Err("no samples".into());
    }
    let k = p[0].len();
    let mut lp = Program::new(ObjSense::Min);
    let free = |lp: &mut Program, name: String| {
        lp.add_continuous(name, f64::NEG_INFINITY, f64::INFINITY)
            .expect("fresh name")
    };
    let a0 = free(&mut lp, "a0".into());
    let a1: Vec<_> = (0..k).map(|j| free(&mut lp, format!("a1_{j}"))).collect();
    let mut objective = Vec::new();
    for (m, (row, &target)) in p.iter().zip(v).enumerate() {
        if row.len() != k {
            return Err(format!("feature row {m} has length {}", row.len()));
        }
        let mut terms = vec![(a0, 1.0)];
        terms.extend(a1.iter().zip(row).map(|(&id, &x)| (id, x)));
        if sense != Some(Sense::Under) {
            let ep = lp.add_continuous(format!("ep_{m}"), 0.0, f64::INFINITY).unwrap();
            terms.push((ep, -1.0));
            objective.push((ep, 1.0));
        }
        if sense != Some(Sense::Over) {
            let em = lp.add_continuous(format!("em_{m}"), 0.0, f64::INFINITY).unwrap();
            terms.push((em, 1.0));
            objective.push((em, 1.0));
        }
        lp.add_constraint(format!("fit_{m}"), terms, Relation::Eq, target)
            .unwrap();
    }
    lp.set_objective(objective).unwrap();
    let sol = mathprog::solve_lp(&lp).map_err(|e| e.to_string())?;
    if sol.status != SolveStatus::Optimal {
        return Err(format!("status {:?}: {}", sol.status, sol.message));
    }
    let mut fit = AffineFit {
        a0: sol.values[a0.0],
        a1: a1.iter().map(|id| sol.values[id.0]).collect(),
        residual: 0.0,
    };
    // shift the intercept so the bound holds exactly on every point
    let gaps: Vec<f64> = p
        .iter()
        .zip(v)
        .map(|(row, &target)| {
            fit.a0 + fit.a1.iter().zip(row).map(|(a, x)| a * x).sum::<f64>() - target
        })
        .collect();
    match sense {
        Some(Sense::Over) => {
            let worst = gaps.iter().copied().fold(f64::INFINITY, f64::min);
            if worst < 0.0 {
                fit.a0 -= worst;
            }
        }
        Some(Sense::Under) => {
            let worst = gaps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if worst > 0.0 {
                fit.a0 -= worst;
            }
        }
        None => {}
    }
    fit.residual = p
        .iter()
        .zip(v)
        .map(|(row, &target)| {
            (fit.a0 + fit.a1.iter().zip(row).map(|(a, x)| a * x).sum::<f64>() - target).abs()
        })
        .sum();
    Ok(fit)
}

/// Fits the conservative estimator for `(node, t, sense)` over all columns.
pub fn fit_cla(samples: &SampleSet, node: &NodeId, t: usize, sense: Sense) -> Result<ClaFunction, ClaError> {
    let v = samples.targets(node, t).ok_or_else(|| ClaError::MissingTargets {
        node: node.clone(),
        t,
    })?;
    if v.len() != samples.len() {
        return Err(ClaError::Dimension {
            expected: samples.len(),
            got: v.len(),
        });
    }
    let fit = fit_affine(&samples.demand, v, Some(sense)).map_err(|message| ClaError::Solver {
        what: format!("{node} t={t} {sense}"),
        message,
    })?;
    Ok(ClaFunction {
        node: node.clone(),
        t,
        sense,
        a0: fit.a0,
        a1: fit.a1,
        residual: fit.residual,
    })
}

/// Fits several estimators concurrently; output follows `keys`.
pub fn fit_many(samples: &SampleSet, keys: &[(NodeId, usize, Sense)]) -> Result<Vec<ClaFunction>, ClaError> {
    keys.par_iter()
        .map(|(n, t, s)| fit_cla(samples, n, *t, *s))
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClaProvenance {
    pub tool: String,
    pub seed: u64,
    #[serde(rename = "M")]
    pub m: usize,
    pub scenario_hash: String,
}

/// A library of estimators, at most one per (node, step, sense).
#[derive(Debug, Clone, PartialEq)]
pub struct ClaModel {
    pub ev_buses: Vec<String>,
    pub provenance: ClaProvenance,
    functions: BTreeMap<(NodeId, usize, Sense), ClaFunction>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFunction {
    node: NodeId,
    t: usize,
    sense: Sense,
    a0: f64,
    a1: BTreeMap<String, f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawModel {
    provenance: ClaProvenance,
    buses: Vec<String>,
    functions: Vec<RawFunction>,
}

impl ClaModel {
    pub fn new(ev_buses: Vec<String>, provenance: ClaProvenance) -> Self {
        ClaModel {
            ev_buses,
            provenance,
            functions: BTreeMap::new(),
        }
    }

    /// Inserts or replaces the function for its key.
    pub fn insert(&mut self, f: ClaFunction) {
        self.functions.insert((f.node.clone(), f.t, f.sense), f);
    }

    pub fn get(&self, node: &NodeId, t: usize, sense: Sense) -> Option<&ClaFunction> {
        self.functions.get(&(node.clone(), t, sense))
    }

    pub fn functions(&self) -> impl Iterator<Item = &ClaFunction> {
        self.functions.values()
    }

    pub fn len(&self) -> usize {
        self.functions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.functions.is_empty()
    }

    pub fn to_json(&self) -> String {
        let raw = RawModel {
            provenance: self.provenance.clone(),
            buses: self.ev_buses.clone(),
            functions: self
                .functions
                .values()
                .map(|f| RawFunction {
                    node: f.node.clone(),
                    t: f.t,
                    sense: f.sense,
                    a0: f.a0,
                    a1: self
                        .ev_buses
                        .iter()
                        .zip(&f.a1)
                        .filter(|(_, a)| a.abs() >= 1e-12)
                        .map(|(b, &a)| (b.clone(), a))
                        .collect(),
                })
                .collect(),
        };
        let mut s = serde_json::to_string_pretty(&raw).expect("serialisable");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, ClaError> {
        let raw: RawModel = serde_json::from_str(text)?;
        let mut model = ClaModel::new(raw.buses, raw.provenance);
        for f in raw.functions {
            let mut a1 = vec![0.0; model.ev_buses.len()];
            for (bus, a) in f.a1 {
                let k = model
                    .ev_buses
                    .iter()
                    .position(|b| *b == bus)
                    .ok_or_else(|| ClaError::Format(format!("coefficient for unknown bus `{bus}`")))?;
                a1[k] = a;
            }
            let key = (f.node.clone(), f.t, f.sense);
            if model.functions.contains_key(&key) {
                return Err(ClaError::Format(format!(
                    "duplicate function for {} t={} {}",
                    f.node, f.t, f.sense
                )));
            }
            model.functions.insert(
                key,
                ClaFunction {
                    node: f.node,
                    t: f.t,
                    sense: f.sense,
                    a0: f.a0,
                    a1,
                    residual: f64::NAN,
                },
            );
        }
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn col(xs: &[f64]) -> Vec<Vec<f64>> {
        xs.iter().map(|&x| vec![x]).collect()
    }

    #[test]
    fn constant_targets_fit_exactly() {
        let p = vec![vec![0.0, 1.0], vec![1.0, 0.0], vec![2.0, 1.0], vec![1.0, 1.0]];
        let v = vec![0.97; 4];
        for s in [Sense::Over, Sense::Under] {
            let f = fit_affine(&p, &v, Some(s)).unwrap();
            assert!((f.a0 - 0.97).abs() < 1e-9);
            assert!(f.a1.iter().all(|a| a.abs() < 1e-9));
            assert!(f.residual < 1e-9);
        }
    }

    #[test]
    fn two_points_interpolated() {
        for s in [Sense::Over, Sense::Under] {
            let f = fit_affine(&col(&[0.0, 1.0]), &[1.0, 0.9], Some(s)).unwrap();
            assert!((f.a0 - 1.0).abs() < 1e-9);
            assert!((f.a1[0] + 0.1).abs() < 1e-9);
            assert!(f.residual < 1e-9);
        }
    }

    #[test]
    fn over_dominates_under() {
        let p = col(&[0.0, 1.0, 2.0, 3.0, 4.0]);
        let v = [1.0, 0.96, 0.93, 0.91, 0.86];
        let over = fit_affine(&p, &v, Some(Sense::Over)).unwrap();
        let under = fit_affine(&p, &v, Some(Sense::Under)).unwrap();
        let free = fit_affine(&p, &v, None).unwrap();
        for (row, &target) in p.iter().zip(&v) {
            let o = over.a0 + over.a1[0] * row[0];
            let u = under.a0 + under.a1[0] * row[0];
            assert!(o >= target - CONSERVATIVE_TOL);
            assert!(u <= target + CONSERVATIVE_TOL);
            assert!(o >= u);
        }
        assert!(over.residual >= free.residual - 1e-9);
        assert!(under.residual >= free.residual - 1e-9);
    }

    #[test]
    fn predict_is_affine() {
        let f = ClaFunction {
            node: "1.a".parse().unwrap(),
            t: 1,
            sense: Sense::Over,
            a0: 1.0,
            a1: vec![-0.1, 0.2],
            residual: 0.0,
        };
        assert_eq!(f.predict(&[0.0, 0.0]).unwrap(), 1.0);
        let (p, q) = ([1.0, 2.0], [0.5, -1.0]);
        let sum = [p[0] + q[0], p[1] + q[1]];
        let lhs = f.predict(&sum).unwrap();
        let rhs = f.predict(&p).unwrap() + f.predict(&q).unwrap() - f.a0;
        assert!((lhs - rhs).abs() < 1e-12);
        assert!(matches!(f.predict(&[1.0]), Err(ClaError::Dimension { .. })));
    }
}
