//! Unbalanced radial power flow and time-series violation scoring.
//!
//! [`solve_pf`] runs a forward-backward sweep on the full phase-coupled
//! impedance blocks: the backward pass accumulates constant-power load
//! currents towards the source, the forward pass propagates voltage drops
//! `V_child = V_parent - Z I` away from it. Iteration stops when the largest
//! phasor change falls to the tolerance.

use std::collections::BTreeMap;

use num_complex::Complex64;
use rayon::prelude::*;

use crate::netmodel::{NetworkModel, ScenarioData};
use crate::types::{NodeId, Sense};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PfError {
    #[error("power flow did not converge{} after {iterations} iterations (mismatch {mismatch:.3e} p.u.)", at_step(.t))]
    NonConvergence {
        t: Option<usize>,
        iterations: usize,
        mismatch: f64,
    },
    #[error("power flow diverged{} at iteration {iteration}: voltage collapse at {node}", at_step(.t))]
    Diverged {
        t: Option<usize>,
        iteration: usize,
        node: NodeId,
    },
    #[error("injection references unknown node {0}")]
    UnknownNode(NodeId),
}

fn at_step(t: &Option<usize>) -> String {
    t.map(|t| format!(" at t={t}")).unwrap_or_default()
}

impl PfError {
    fn at(self, step: usize) -> PfError {
        match self {
            PfError::NonConvergence {
                iterations,
                mismatch,
                ..
            } => PfError::NonConvergence {
                t: Some(step),
                iterations,
                mismatch,
            },
            PfError::Diverged {
                iteration, node, ..
            } => PfError::Diverged {
                t: Some(step),
                iteration,
                node,
            },
            other => other,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct PfOptions {
    /// Infinity norm of successive voltage-phasor change, p.u.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for PfOptions {
    fn default() -> Self {
        PfOptions {
            tolerance: 1e-8,
            max_iterations: 100,
        }
    }
}

/// Per-node complex power demand in p.u., indexed like [`NetworkModel::nodes`].
#[derive(Debug, Clone, PartialEq)]
pub struct InjectionSnapshot {
    pub t: usize,
    pub demand: Vec<Complex64>,
}

impl InjectionSnapshot {
    pub fn zero(net: &NetworkModel, t: usize) -> Self {
        InjectionSnapshot {
            t,
            demand: vec![Complex64::new(0.0, 0.0); net.nodes().len()],
        }
    }

    /// Background load at step `t` plus unity-power-factor EV demand for the
    /// EVs flagged in `ev_on` (indexed like [`ScenarioData::evs`]).
    pub fn from_scenario(scenario: &ScenarioData, t: usize, ev_on: &[bool]) -> Self {
        let net = scenario.network();
        let base = net.base_kva();
        let mut snap = InjectionSnapshot::zero(net, t);
        for (node, s) in scenario.background(t) {
            let i = net.node_index(node).expect("validated background node");
            snap.demand[i] += s / base;
        }
        let rate = scenario.rate_pu();
        for (ev, &on) in scenario.evs().iter().zip(ev_on) {
            if on {
                let i = net.node_index(&ev.node).expect("validated EV node");
                snap.demand[i] += rate;
            }
        }
        snap
    }

    pub fn add(&mut self, net: &NetworkModel, node: &NodeId, s_pu: Complex64) -> Result<(), PfError> {
        let i = net
            .node_index(node)
            .ok_or_else(|| PfError::UnknownNode(node.clone()))?;
        self.demand[i] += s_pu;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VoltageSolution {
    /// Indexed like [`NetworkModel::nodes`].
    pub phasors: Vec<Complex64>,
    /// Squared magnitudes `|V|²` of `phasors`.
    pub v: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// Last infinity-norm phasor change.
    pub mismatch: f64,
    /// Complex power leaving the source bus, p.u.
    pub source_injection: Complex64,
    pub total_load: Complex64,
    pub losses: Complex64,
}

impl VoltageSolution {
    pub fn v_at(&self, net: &NetworkModel, node: &NodeId) -> Option<f64> {
        net.node_index(node).map(|i| self.v[i])
    }

    pub fn phasor_at(&self, net: &NetworkModel, node: &NodeId) -> Option<Complex64> {
        net.node_index(node).map(|i| self.phasors[i])
    }
}

pub fn solve_pf(net: &NetworkModel, snapshot: &InjectionSnapshot) -> Result<VoltageSolution, PfError> {
    solve_pf_with(net, snapshot, PfOptions::default())
}

pub fn solve_pf_with(
    net: &NetworkModel,
    snapshot: &InjectionSnapshot,
    opts: PfOptions,
) -> Result<VoltageSolution, PfError> {
    let topo = net.topology();
    let buses = net.buses();
    let lines = net.lines();
    let n_nodes = net.nodes().len();
    assert_eq!(snapshot.demand.len(), n_nodes, "snapshot built for another network");

    // flat start: every node at the source phasor of its phase
    let src = net.bus_index(net.source_bus()).expect("validated source");
    let src_v: BTreeMap<_, _> = net
        .source_voltage()
        .iter()
        .map(|s| (s.phase, s.phasor()))
        .collect();
    let mut v = vec![Complex64::new(0.0, 0.0); n_nodes];
    for (bi, b) in buses.iter().enumerate() {
        for &p in &b.phases {
            v[net.node_index_at(bi, p).unwrap()] = src_v[&p];
        }
    }

    // node index for (line, position in line.phases) on the child side and parent side
    let line_nodes: Vec<Option<(Vec<usize>, Vec<usize>)>> = (0..buses.len())
        .map(|bi| {
            topo.parent[bi].map(|(pb, li)| {
                let l = &lines[li];
                let child: Vec<usize> = l
                    .phases
                    .iter()
                    .map(|&p| net.node_index_at(bi, p).unwrap())
                    .collect();
                let parent: Vec<usize> = l
                    .phases
                    .iter()
                    .map(|&p| net.node_index_at(pb, p).unwrap())
                    .collect();
                (child, parent)
            })
        })
        .collect();

    let mut injected = vec![Complex64::new(0.0, 0.0); n_nodes];
    let mut converged = false;
    let mut iterations = 0;
    let mut mismatch = f64::INFINITY;

    while iterations < opts.max_iterations {
        iterations += 1;
        backward_sweep(net, &line_nodes, &snapshot.demand, &v, &mut injected);

        let mut delta: f64 = 0.0;
        for &bi in topo.order.iter().skip(1) {
            let (_, li) = topo.parent[bi].unwrap();
            let (child, parent) = line_nodes[bi].as_ref().unwrap();
            let z = &lines[li].z_pu;
            for (r, &ci) in child.iter().enumerate() {
                let mut drop = Complex64::new(0.0, 0.0);
                for (c, &cj) in child.iter().enumerate() {
                    drop += z[r][c] * injected[cj];
                }
                let new_v = v[parent[r]] - drop;
                if !(new_v.re.is_finite() && new_v.im.is_finite()) || new_v.norm() < 1e-3 {
                    return Err(PfError::Diverged {
                        t: Some(snapshot.t),
                        iteration: iterations,
                        node: net.nodes()[ci].clone(),
                    });
                }
                delta = delta.max((new_v - v[ci]).norm());
                v[ci] = new_v;
            }
        }
        mismatch = delta;
        if delta <= opts.tolerance {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(PfError::NonConvergence {
            t: Some(snapshot.t),
            iterations,
            mismatch,
        });
    }

    // currents consistent with the final voltages
    backward_sweep(net, &line_nodes, &snapshot.demand, &v, &mut injected);
    let mut source_injection = Complex64::new(0.0, 0.0);
    let mut losses = Complex64::new(0.0, 0.0);
    for &bi in topo.order.iter().skip(1) {
        let (pb, li) = topo.parent[bi].unwrap();
        let (child, parent) = line_nodes[bi].as_ref().unwrap();
        let z = &lines[li].z_pu;
        for (r, &ci) in child.iter().enumerate() {
            let mut zi = Complex64::new(0.0, 0.0);
            for (c, &cj) in child.iter().enumerate() {
                zi += z[r][c] * injected[cj];
            }
            losses += zi * injected[ci].conj();
            if pb == src {
                source_injection += v[parent[r]] * injected[ci].conj();
            }
        }
    }
    // loads sitting directly on the source bus
    for &p in &buses[src].phases {
        source_injection += snapshot.demand[net.node_index_at(src, p).unwrap()];
    }
    let total_load = snapshot.demand.iter().sum();

    let sq = v.iter().map(|x| x.norm_sqr()).collect();
    Ok(VoltageSolution {
        phasors: v,
        v: sq,
        converged,
        iterations,
        mismatch,
        source_injection,
        total_load,
        losses,
    })
}

/// Fills `injected[node]` with the current flowing into each non-source
/// node from its parent line: the node's own load current plus everything
/// drawn further downstream on the same phase.
fn backward_sweep(
    net: &NetworkModel,
    line_nodes: &[Option<(Vec<usize>, Vec<usize>)>],
    demand: &[Complex64],
    v: &[Complex64],
    injected: &mut [Complex64],
) {
    let topo = net.topology();
    let src = topo.order[0];
    for (i, cur) in injected.iter_mut().enumerate() {
        *cur = (demand[i] / v[i]).conj();
    }
    for &bi in topo.order.iter().rev() {
        if let Some((child, parent)) = &line_nodes[bi] {
            let (pb, _) = topo.parent[bi].unwrap();
            if pb == src {
                continue;
            }
            for (&ci, &pi) in child.iter().zip(parent) {
                let c = injected[ci];
                injected[pi] += c;
            }
        }
    }
}

/// Maps an EV on/off pattern at one step to squared voltages at every node.
///
/// The power-flow implementation is the physical model; the affine one is a
/// test hook with an exactly linear response.
pub trait VoltageModel: Sync {
    fn squared_voltages(
        &self,
        scenario: &ScenarioData,
        t: usize,
        ev_on: &[bool],
    ) -> Result<Vec<f64>, PfError>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct PowerFlowModel {
    pub options: PfOptions,
}

impl VoltageModel for PowerFlowModel {
    fn squared_voltages(
        &self,
        scenario: &ScenarioData,
        t: usize,
        ev_on: &[bool],
    ) -> Result<Vec<f64>, PfError> {
        let snap = InjectionSnapshot::from_scenario(scenario, t, ev_on);
        solve_pf_with(scenario.network(), &snap, self.options)
            .map(|s| s.v)
            .map_err(|e| e.at(t))
    }
}

/// `v_i(t) = intercept[t-1][i] + Σ_k sensitivity[i][k] · p_k` with `p` the
/// per-EV-bus demand in p.u. (ordered like [`ScenarioData::ev_buses`]).
#[derive(Debug, Clone)]
pub struct AffineVoltageModel {
    pub intercept: Vec<Vec<f64>>,
    pub sensitivity: Vec<Vec<f64>>,
}

impl VoltageModel for AffineVoltageModel {
    fn squared_voltages(
        &self,
        scenario: &ScenarioData,
        t: usize,
        ev_on: &[bool],
    ) -> Result<Vec<f64>, PfError> {
        let p = bus_demand_pu(scenario, ev_on);
        Ok(self.intercept[t - 1]
            .iter()
            .zip(&self.sensitivity)
            .map(|(c, row)| c + row.iter().zip(&p).map(|(a, x)| a * x).sum::<f64>())
            .collect())
    }
}

/// Aggregate EV demand per EV bus, p.u.
pub fn bus_demand_pu(scenario: &ScenarioData, ev_on: &[bool]) -> Vec<f64> {
    let mut p = vec![0.0; scenario.ev_buses().len()];
    let rate = scenario.rate_pu();
    for (ev, &on) in scenario.evs().iter().zip(ev_on) {
        if on {
            let k = scenario.ev_bus_position(&ev.node.bus).unwrap();
            p[k] += rate;
        }
    }
    p
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub node: NodeId,
    pub t: usize,
    pub kind: Sense,
    /// `v - v_max` for over-voltage, `v_min - v` for under-voltage; always > 0.
    pub magnitude: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ViolationReport {
    pub entries: Vec<Violation>,
    pub total: f64,
}

impl ViolationReport {
    pub fn from_entries(entries: Vec<Violation>) -> Self {
        let total = entries.iter().fold(0.0, |acc, e| acc + e.magnitude);
        ViolationReport { entries, total }
    }

    pub fn count(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

pub fn violation_total(report: &ViolationReport) -> f64 {
    report.entries.iter().fold(0.0, |acc, e| acc + e.magnitude)
}

/// Squared voltages for every node at every step: `v[t-1][node]`.
pub type VoltageSeries = Vec<Vec<f64>>;

/// Scores one step's squared voltages against the scenario bounds.
pub fn score_step(scenario: &ScenarioData, t: usize, v: &[f64]) -> Vec<Violation> {
    let cfg = scenario.config();
    let mut out = Vec::new();
    for (node, &vi) in scenario.network().nodes().iter().zip(v) {
        if vi > cfg.v_max {
            out.push(Violation {
                node: node.clone(),
                t,
                kind: Sense::Over,
                magnitude: vi - cfg.v_max,
            });
        }
        if vi < cfg.v_min {
            out.push(Violation {
                node: node.clone(),
                t,
                kind: Sense::Under,
                magnitude: cfg.v_min - vi,
            });
        }
    }
    out
}

/// Runs one voltage evaluation per step for an EV on/off profile
/// (`on[t-1][ev]`) and scores every bound exceedance.
pub fn simulate_profile(
    model: &dyn VoltageModel,
    scenario: &ScenarioData,
    on: &[Vec<bool>],
) -> Result<(VoltageSeries, ViolationReport), PfError> {
    assert_eq!(on.len(), scenario.t_steps());
    let series: VoltageSeries = on
        .par_iter()
        .enumerate()
        .map(|(ti, ev_on)| model.squared_voltages(scenario, ti + 1, ev_on))
        .collect::<Result<_, _>>()?;
    let entries = series
        .iter()
        .enumerate()
        .flat_map(|(ti, v)| score_step(scenario, ti + 1, v))
        .collect();
    Ok((series, ViolationReport::from_entries(entries)))
}

/// Time-series power flow of a decoded charging schedule.
pub fn simulate_schedule(
    scenario: &ScenarioData,
    schedule: &crate::eevc::ChargeSchedule,
) -> Result<(VoltageSeries, ViolationReport), PfError> {
    simulate_profile(&PowerFlowModel::default(), scenario, &schedule.ev_on_profile())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::{Bus, Line};
    use crate::types::Phase;

    fn two_bus(z: Complex64) -> NetworkModel {
        NetworkModel::new(
            vec![
                Bus {
                    id: "1".into(),
                    phases: vec![Phase::A],
                },
                Bus {
                    id: "2".into(),
                    phases: vec![Phase::A],
                },
            ],
            vec![Line {
                from: "1".into(),
                to: "2".into(),
                phases: vec![Phase::A],
                z_pu: vec![vec![z]],
            }],
            "1".into(),
            vec![],
            7.2,
            1000.0,
        )
        .unwrap()
    }

    #[test]
    fn zero_load_gives_source_voltage() {
        let net = two_bus(Complex64::new(0.01, 0.02));
        let sol = solve_pf(&net, &InjectionSnapshot::zero(&net, 1)).unwrap();
        assert!(sol.v.iter().all(|&v| v == 1.0));
        assert_eq!(sol.iterations, 1);
    }

    #[test]
    fn two_bus_matches_quadratic() {
        let z = Complex64::new(0.01, 0.02);
        let s = Complex64::new(0.1, 0.05);
        let net = two_bus(z);
        let mut snap = InjectionSnapshot::zero(&net, 1);
        snap.add(&net, &"2.a".parse().unwrap(), s).unwrap();
        let sol = solve_pf(&net, &snap).unwrap();
        // |V2|^4 + (2(PR+QX) - |V1|^2)|V2|^2 + |S|^2|Z|^2 = 0, high-voltage root
        let b = 2.0 * (s.re * z.re + s.im * z.im) - 1.0;
        let c = s.norm_sqr() * z.norm_sqr();
        let u = (-b + (b * b - 4.0 * c).sqrt()) / 2.0;
        let v2 = sol.v_at(&net, &"2.a".parse().unwrap()).unwrap();
        assert!((v2.sqrt() - u.sqrt()).abs() < 1e-8, "{} vs {}", v2.sqrt(), u.sqrt());
    }

    #[test]
    fn heavy_load_diverges_or_fails_to_converge() {
        let net = two_bus(Complex64::new(0.5, 1.0));
        let mut snap = InjectionSnapshot::zero(&net, 3);
        snap.add(&net, &"2.a".parse().unwrap(), Complex64::new(5.0, 2.0))
            .unwrap();
        let err = solve_pf(&net, &snap).unwrap_err();
        assert!(
            matches!(err, PfError::NonConvergence { t: Some(3), .. } | PfError::Diverged { t: Some(3), .. }),
            "{err:?}"
        );
    }

    #[test]
    fn report_total_is_additive() {
        let node: NodeId = "2.a".parse().unwrap();
        let r = ViolationReport::from_entries(vec![
            Violation {
                node: node.clone(),
                t: 1,
                kind: Sense::Under,
                magnitude: 0.002,
            },
            Violation {
                node,
                t: 2,
                kind: Sense::Under,
                magnitude: 0.003,
            },
        ]);
        assert!((violation_total(&r) - 0.005).abs() < 1e-15);
        assert_eq!(violation_total(&ViolationReport::default()), 0.0);
    }
}
