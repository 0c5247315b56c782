//! Feeder topology, evacuation scenario data and their validation.
//!
//! Everything electrical is held in per-unit: line impedances come in per-unit,
//! and load/EV powers are divided by the single-phase power base `base_kva`
//! when they are handed to the power flow. Scenario files keep engineering
//! units (kW, kvar) so that they round-trip exactly.

mod io;
mod synth;

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};

use num_complex::Complex64;

use crate::types::{NodeId, Phase};

pub use io::{
    load_scenario_dir, parse_config, parse_evs, parse_loads, parse_network, parse_network_str,
    parse_scenario, parse_tazs, write_config_json, write_evs_csv, write_loads_csv,
    write_network_json, write_scenario_dir, write_tazs_csv, ScenarioPaths,
};
pub use synth::{generate_synthetic_feeder, FeederSpec, PhasePattern};

#[derive(Debug, thiserror::Error)]
pub enum NetError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("schema violation in {file}: {message}")]
    Schema { file: String, message: String },
    #[error("invalid value for `{field}`: {message}")]
    Field { field: String, message: String },
    #[error("duplicate bus id `{0}`")]
    DuplicateBus(String),
    #[error("bus `{0}` has no phases")]
    EmptyPhases(String),
    #[error("unknown bus `{0}`")]
    UnknownBus(String),
    #[error("line {from}-{to} carries phase {phase} which bus `{bus}` does not have")]
    PhaseMismatch {
        from: String,
        to: String,
        phase: Phase,
        bus: String,
    },
    #[error("line {from}-{to}: {message}")]
    Impedance {
        from: String,
        to: String,
        message: String,
    },
    #[error("network is not radial: {buses} buses but {lines} lines")]
    NonRadial { buses: usize, lines: usize },
    #[error("bus `{0}` is not connected to the source")]
    Disconnected(String),
    #[error("node {0} cannot be reached from the source on its phase")]
    UnreachableNode(NodeId),
    #[error("source bus `{0}` does not exist")]
    MissingSource(String),
    #[error("EV `{ev}` references unknown node {node}")]
    UnknownNode { ev: String, node: String },
    #[error("EV `{ev}` references unknown TAZ `{taz}`")]
    UnknownTaz { ev: String, taz: String },
    #[error("TAZ `{taz}` departs at t={departure}, outside 1..={t_steps}")]
    DepartureOutOfRange {
        taz: String,
        departure: usize,
        t_steps: usize,
    },
    #[error(
        "EV `{ev}` has soc0={soc0}, not a multiple of 1/{beta}; nearest valid value is {nearest}"
    )]
    SocNotQuantized {
        ev: String,
        soc0: f64,
        beta: u32,
        nearest: f64,
    },
    #[error("TAZ `{0}` has no EVs")]
    EmptyTaz(String),
    #[error("scenario has no EVs")]
    NoEvs,
    #[error("load row for {node} at t={t}: {message}")]
    BadLoad { node: String, t: usize, message: String },
    #[error("duplicate id `{0}`")]
    DuplicateId(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bus {
    pub id: String,
    /// Sorted, deduplicated.
    pub phases: Vec<Phase>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Line {
    pub from: String,
    pub to: String,
    /// Sorted, deduplicated; indexes the rows/columns of `z_pu`.
    pub phases: Vec<Phase>,
    pub z_pu: Vec<Vec<Complex64>>,
}

impl Line {
    fn phase_pos(&self, p: Phase) -> Option<usize> {
        self.phases.iter().position(|&q| q == p)
    }
}

/// Source voltage for one phase as given in the network file.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SourcePhase {
    pub phase: Phase,
    pub mag: f64,
    pub angle_deg: f64,
}

impl SourcePhase {
    pub fn phasor(&self) -> Complex64 {
        Complex64::from_polar(self.mag, self.angle_deg.to_radians())
    }
}

/// Precomputed radial structure, oriented away from the source.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Topology {
    /// Bus indices in breadth-first order from the source.
    pub order: Vec<usize>,
    /// For every bus except the source: (parent bus, line index).
    pub parent: Vec<Option<(usize, usize)>>,
    pub children: Vec<Vec<usize>>,
}

/// A validated radial multi-phase feeder. Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkModel {
    buses: Vec<Bus>,
    lines: Vec<Line>,
    source_bus: String,
    source_voltage: Vec<SourcePhase>,
    base_kv: f64,
    base_kva: f64,
    index: HashMap<String, usize>,
    topo: Topology,
    nodes: Vec<NodeId>,
    node_offset: Vec<usize>,
}

impl NetworkModel {
    /// Validates and builds a network. Missing source phases default to
    /// 1.0 p.u. at the balanced angles.
    pub fn new(
        buses: Vec<Bus>,
        lines: Vec<Line>,
        source_bus: String,
        source_voltage: Vec<SourcePhase>,
        base_kv: f64,
        base_kva: f64,
    ) -> Result<Self, NetError> {
        if !(base_kv > 0.0 && base_kv.is_finite()) {
            return Err(NetError::Field {
                field: "base_kv".into(),
                message: format!("must be positive, got {base_kv}"),
            });
        }
        if !(base_kva > 0.0 && base_kva.is_finite()) {
            return Err(NetError::Field {
                field: "base_kva".into(),
                message: format!("must be positive, got {base_kva}"),
            });
        }

        let mut buses = buses;
        let mut index = HashMap::new();
        for (i, b) in buses.iter_mut().enumerate() {
            b.phases.sort();
            b.phases.dedup();
            if b.phases.is_empty() {
                return Err(NetError::EmptyPhases(b.id.clone()));
            }
            if index.insert(b.id.clone(), i).is_some() {
                return Err(NetError::DuplicateBus(b.id.clone()));
            }
        }
        let src = *index
            .get(&source_bus)
            .ok_or_else(|| NetError::MissingSource(source_bus.clone()))?;

        let mut lines = lines;
        for l in lines.iter_mut() {
            validate_line(l, &buses, &index)?;
        }

        if lines.len() + 1 != buses.len() {
            return Err(NetError::NonRadial {
                buses: buses.len(),
                lines: lines.len(),
            });
        }

        let topo = build_topology(&buses, &lines, &index, src)?;

        // every node must be fed through lines carrying its phase
        for &bi in &topo.order {
            if let Some((_, li)) = topo.parent[bi] {
                for &p in &buses[bi].phases {
                    if lines[li].phase_pos(p).is_none() {
                        return Err(NetError::UnreachableNode(NodeId::new(
                            buses[bi].id.clone(),
                            p,
                        )));
                    }
                }
            }
        }

        let mut sv = Vec::new();
        for &p in &buses[src].phases {
            match source_voltage.iter().find(|s| s.phase == p) {
                Some(s) => {
                    if !(s.mag > 0.0 && s.mag.is_finite() && s.angle_deg.is_finite()) {
                        return Err(NetError::Field {
                            field: "source.voltage_pu".into(),
                            message: format!("phase {p}: magnitude must be positive"),
                        });
                    }
                    sv.push(*s);
                }
                None => sv.push(SourcePhase {
                    phase: p,
                    mag: 1.0,
                    angle_deg: p.nominal_angle_deg(),
                }),
            }
        }
        if let Some(extra) = source_voltage
            .iter()
            .find(|s| !buses[src].phases.contains(&s.phase))
        {
            return Err(NetError::Field {
                field: "source.voltage_pu".into(),
                message: format!("phase {} not present on source bus", extra.phase),
            });
        }

        let mut nodes = Vec::new();
        let mut node_offset = Vec::with_capacity(buses.len());
        for b in &buses {
            node_offset.push(nodes.len());
            nodes.extend(b.phases.iter().map(|&p| NodeId::new(b.id.clone(), p)));
        }

        Ok(NetworkModel {
            buses,
            lines,
            source_bus,
            source_voltage: sv,
            base_kv,
            base_kva,
            index,
            topo,
            nodes,
            node_offset,
        })
    }

    pub fn buses(&self) -> &[Bus] {
        &self.buses
    }

    pub fn lines(&self) -> &[Line] {
        &self.lines
    }

    pub fn source_bus(&self) -> &str {
        &self.source_bus
    }

    pub fn source_voltage(&self) -> &[SourcePhase] {
        &self.source_voltage
    }

    pub fn base_kv(&self) -> f64 {
        self.base_kv
    }

    /// Single-phase power base.
    pub fn base_kva(&self) -> f64 {
        self.base_kva
    }

    pub fn bus_index(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn bus(&self, id: &str) -> Option<&Bus> {
        self.bus_index(id).map(|i| &self.buses[i])
    }

    pub fn has_node(&self, node: &NodeId) -> bool {
        self.bus(&node.bus)
            .is_some_and(|b| b.phases.contains(&node.phase))
    }

    /// All single-phase nodes, in bus order then phase order. Positions in
    /// this slice are the node indices used by power-flow results.
    pub fn nodes(&self) -> &[NodeId] {
        &self.nodes
    }

    pub fn node_index(&self, node: &NodeId) -> Option<usize> {
        let b = self.bus_index(&node.bus)?;
        self.node_index_at(b, node.phase)
    }

    pub(crate) fn node_index_at(&self, bus: usize, phase: Phase) -> Option<usize> {
        let k = self.buses[bus].phases.iter().position(|&p| p == phase)?;
        Some(self.node_offset[bus] + k)
    }

    pub(crate) fn topology(&self) -> &Topology {
        &self.topo
    }

    /// Buses in the subtree rooted at `bus` (including itself).
    pub fn subtree(&self, bus: &str) -> Vec<String> {
        let Some(root) = self.bus_index(bus) else {
            return Vec::new();
        };
        let mut out = Vec::new();
        let mut queue = VecDeque::from([root]);
        while let Some(b) = queue.pop_front() {
            out.push(self.buses[b].id.clone());
            queue.extend(self.topo.children[b].iter().copied());
        }
        out
    }

    /// Breadth-first reachability from the source over the undirected line graph.
    pub fn is_radial(&self) -> bool {
        if self.lines.len() + 1 != self.buses.len() {
            return false;
        }
        let mut adj = vec![Vec::new(); self.buses.len()];
        for l in &self.lines {
            let (a, b) = (self.index[&l.from], self.index[&l.to]);
            adj[a].push(b);
            adj[b].push(a);
        }
        let mut seen = vec![false; self.buses.len()];
        let src = self.index[&self.source_bus];
        seen[src] = true;
        let mut queue = VecDeque::from([src]);
        while let Some(b) = queue.pop_front() {
            for &n in &adj[b] {
                if !seen[n] {
                    seen[n] = true;
                    queue.push_back(n);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }
}

fn validate_line(
    l: &mut Line,
    buses: &[Bus],
    index: &HashMap<String, usize>,
) -> Result<(), NetError> {
    let from = *index
        .get(&l.from)
        .ok_or_else(|| NetError::UnknownBus(l.from.clone()))?;
    let to = *index
        .get(&l.to)
        .ok_or_else(|| NetError::UnknownBus(l.to.clone()))?;
    let imp_err = |message: String| NetError::Impedance {
        from: l.from.clone(),
        to: l.to.clone(),
        message,
    };
    if from == to {
        return Err(imp_err("line connects a bus to itself".into()));
    }
    // Sort phases and permute the impedance matrix consistently.
    let mut perm: Vec<usize> = (0..l.phases.len()).collect();
    perm.sort_by_key(|&i| l.phases[i]);
    let n = l.phases.len();
    if n == 0 {
        return Err(imp_err("line has no phases".into()));
    }
    if l.z_pu.len() != n || l.z_pu.iter().any(|r| r.len() != n) {
        return Err(imp_err(format!(
            "impedance matrix must be {n}x{n} for {n} phases"
        )));
    }
    let phases: Vec<Phase> = perm.iter().map(|&i| l.phases[i]).collect();
    if phases.windows(2).any(|w| w[0] == w[1]) {
        return Err(imp_err("repeated phase".into()));
    }
    let z: Vec<Vec<Complex64>> = perm
        .iter()
        .map(|&i| perm.iter().map(|&j| l.z_pu[i][j]).collect())
        .collect();
    for (i, row) in z.iter().enumerate() {
        for (j, zij) in row.iter().enumerate() {
            if !(zij.re.is_finite() && zij.im.is_finite()) {
                return Err(imp_err("non-finite impedance entry".into()));
            }
            if (zij - z[j][i]).norm() > 1e-12 * (1.0 + zij.norm()) {
                return Err(imp_err("impedance matrix is not symmetric".into()));
            }
        }
        if row[i].re < 0.0 {
            return Err(imp_err("negative self resistance".into()));
        }
        if row[i].norm() == 0.0 {
            return Err(imp_err("zero self impedance".into()));
        }
    }
    for &p in &phases {
        for &b in &[from, to] {
            if !buses[b].phases.contains(&p) {
                return Err(NetError::PhaseMismatch {
                    from: l.from.clone(),
                    to: l.to.clone(),
                    phase: p,
                    bus: buses[b].id.clone(),
                });
            }
        }
    }
    l.phases = phases;
    l.z_pu = z;
    Ok(())
}

fn build_topology(
    buses: &[Bus],
    lines: &[Line],
    index: &HashMap<String, usize>,
    src: usize,
) -> Result<Topology, NetError> {
    let mut adj: Vec<Vec<(usize, usize)>> = vec![Vec::new(); buses.len()];
    for (li, l) in lines.iter().enumerate() {
        let (a, b) = (index[&l.from], index[&l.to]);
        adj[a].push((b, li));
        adj[b].push((a, li));
    }
    let mut parent = vec![None; buses.len()];
    let mut children = vec![Vec::new(); buses.len()];
    let mut seen = vec![false; buses.len()];
    let mut order = Vec::with_capacity(buses.len());
    seen[src] = true;
    let mut queue = VecDeque::from([src]);
    while let Some(b) = queue.pop_front() {
        order.push(b);
        for &(n, li) in &adj[b] {
            if !seen[n] {
                seen[n] = true;
                parent[n] = Some((b, li));
                children[b].push(n);
                queue.push_back(n);
            }
        }
    }
    if let Some(i) = seen.iter().position(|s| !s) {
        return Err(NetError::Disconnected(buses[i].id.clone()));
    }
    Ok(Topology {
        order,
        parent,
        children,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Taz {
    pub id: String,
    /// 1-based departure time step.
    pub departure: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ev {
    pub id: String,
    pub taz: String,
    pub node: NodeId,
    pub soc0: f64,
}

/// Horizon, charging and voltage parameters of a scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    /// Number of 15-minute periods.
    pub t_steps: usize,
    /// Periods needed for a 0 → 100 % charge.
    pub beta: u32,
    pub rate_kw: f64,
    /// Squared per-unit voltage bounds.
    pub v_max: f64,
    pub v_min: f64,
    /// Budget on the summed squared-voltage violations.
    pub lambda_max: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            t_steps: 96,
            beta: 32,
            rate_kw: 7.5,
            v_max: 1.05 * 1.05,
            v_min: 0.95 * 0.95,
            lambda_max: 0.0,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), NetError> {
        let bad = |field: &str, message: String| NetError::Field {
            field: field.into(),
            message,
        };
        if self.t_steps == 0 {
            return Err(bad("T", "must be at least 1".into()));
        }
        if self.beta == 0 {
            return Err(bad("beta", "must be at least 1".into()));
        }
        if !(self.rate_kw > 0.0 && self.rate_kw.is_finite()) {
            return Err(bad("rate_kw", format!("must be positive, got {}", self.rate_kw)));
        }
        if !(self.v_min < self.v_max) || !self.v_min.is_finite() || !self.v_max.is_finite() {
            return Err(bad(
                "v_min_pu2",
                format!("need v_min < v_max, got {} >= {}", self.v_min, self.v_max),
            ));
        }
        if !(self.lambda_max >= 0.0) {
            return Err(bad(
                "lambda_max",
                format!("must be non-negative, got {}", self.lambda_max),
            ));
        }
        Ok(())
    }
}

/// A validated evacuation scenario on a network. Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioData {
    network: NetworkModel,
    /// Index `t-1`; complex power in kW + j kvar.
    background: Vec<BTreeMap<NodeId, Complex64>>,
    tazs: Vec<Taz>,
    evs: Vec<Ev>,
    config: ScenarioConfig,
    ev_buses: Vec<String>,
    taz_members: Vec<Vec<usize>>,
}

impl ScenarioData {
    pub fn new(
        network: NetworkModel,
        background: Vec<BTreeMap<NodeId, Complex64>>,
        tazs: Vec<Taz>,
        evs: Vec<Ev>,
        config: ScenarioConfig,
    ) -> Result<Self, NetError> {
        config.validate()?;
        let t_steps = config.t_steps;

        let mut background = background;
        if background.len() > t_steps {
            return Err(NetError::Field {
                field: "loads.t".into(),
                message: format!(
                    "background covers {} steps but T={t_steps}",
                    background.len()
                ),
            });
        }
        background.resize(t_steps, BTreeMap::new());
        for (ti, snap) in background.iter().enumerate() {
            for (node, s) in snap {
                if !network.has_node(node) {
                    return Err(NetError::BadLoad {
                        node: node.to_string(),
                        t: ti + 1,
                        message: "unknown node".into(),
                    });
                }
                if !(s.re.is_finite() && s.im.is_finite()) {
                    return Err(NetError::BadLoad {
                        node: node.to_string(),
                        t: ti + 1,
                        message: "non-finite power".into(),
                    });
                }
            }
        }

        let mut taz_pos = HashMap::new();
        for (i, z) in tazs.iter().enumerate() {
            if taz_pos.insert(z.id.clone(), i).is_some() {
                return Err(NetError::DuplicateId(z.id.clone()));
            }
            if z.departure == 0 || z.departure > t_steps {
                return Err(NetError::DepartureOutOfRange {
                    taz: z.id.clone(),
                    departure: z.departure,
                    t_steps,
                });
            }
        }

        if evs.is_empty() {
            return Err(NetError::NoEvs);
        }
        let mut taz_members = vec![Vec::new(); tazs.len()];
        let mut ev_ids = BTreeSet::new();
        let mut ev_bus_set = BTreeSet::new();
        let beta = config.beta;
        for (h, ev) in evs.iter().enumerate() {
            if !ev_ids.insert(ev.id.clone()) {
                return Err(NetError::DuplicateId(ev.id.clone()));
            }
            if !network.has_node(&ev.node) {
                return Err(NetError::UnknownNode {
                    ev: ev.id.clone(),
                    node: ev.node.to_string(),
                });
            }
            let zi = *taz_pos.get(&ev.taz).ok_or_else(|| NetError::UnknownTaz {
                ev: ev.id.clone(),
                taz: ev.taz.clone(),
            })?;
            check_soc(&ev.id, ev.soc0, beta)?;
            taz_members[zi].push(h);
            ev_bus_set.insert(ev.node.bus.clone());
        }
        if let Some(zi) = taz_members.iter().position(|m| m.is_empty()) {
            return Err(NetError::EmptyTaz(tazs[zi].id.clone()));
        }
        let ev_buses = network
            .buses()
            .iter()
            .filter(|b| ev_bus_set.contains(&b.id))
            .map(|b| b.id.clone())
            .collect();

        Ok(ScenarioData {
            network,
            background,
            tazs,
            evs,
            config,
            ev_buses,
            taz_members,
        })
    }

    pub fn network(&self) -> &NetworkModel {
        &self.network
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.config
    }

    pub fn t_steps(&self) -> usize {
        self.config.t_steps
    }

    pub fn tazs(&self) -> &[Taz] {
        &self.tazs
    }

    pub fn evs(&self) -> &[Ev] {
        &self.evs
    }

    /// Indices into [`Self::evs`] of the EVs registered in TAZ `zi`.
    pub fn taz_members(&self, zi: usize) -> &[usize] {
        &self.taz_members[zi]
    }

    /// Buses hosting at least one EV, in network bus order.
    pub fn ev_buses(&self) -> &[String] {
        &self.ev_buses
    }

    pub fn ev_bus_position(&self, bus: &str) -> Option<usize> {
        self.ev_buses.iter().position(|b| b == bus)
    }

    /// Background load at 1-based step `t`, kW + j kvar.
    pub fn background(&self, t: usize) -> &BTreeMap<NodeId, Complex64> {
        &self.background[t - 1]
    }

    pub fn rate_pu(&self) -> f64 {
        self.config.rate_kw / self.network.base_kva()
    }

    /// Charging steps EV `h` needs to reach a full battery.
    pub fn steps_needed(&self, h: usize) -> usize {
        let beta = self.config.beta as f64;
        ((1.0 - self.evs[h].soc0) * beta).round() as usize
    }

    /// Initial battery expressed in charging steps.
    pub fn initial_steps(&self, h: usize) -> usize {
        (self.evs[h].soc0 * self.config.beta as f64).round() as usize
    }

    /// Length of the charging window of TAZ `zi`: the longest need among its EVs.
    pub fn taz_window(&self, zi: usize) -> usize {
        self.taz_members[zi]
            .iter()
            .map(|&h| self.steps_needed(h))
            .max()
            .unwrap_or(0)
    }

    /// Copy with a different violation budget.
    pub fn with_lambda_max(&self, lambda_max: f64) -> ScenarioData {
        let mut s = self.clone();
        s.config.lambda_max = lambda_max;
        s
    }

    /// SHA-256 over the canonical file serialisation of the scenario.
    pub fn content_hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for part in [
            write_network_json(&self.network),
            write_loads_csv(self),
            write_evs_csv(self),
            write_tazs_csv(self),
            write_config_json(&self.config),
        ] {
            h.update(part.as_bytes());
            h.update([0u8]);
        }
        hex::encode(h.finalize())
    }
}

fn check_soc(ev: &str, soc0: f64, beta: u32) -> Result<(), NetError> {
    if !(0.0..=1.0).contains(&soc0) {
        return Err(NetError::Field {
            field: format!("soc0 of EV `{ev}`"),
            message: format!("must lie in [0, 1], got {soc0}"),
        });
    }
    let steps = soc0 * beta as f64;
    if (steps - steps.round()).abs() > 1e-9 {
        return Err(NetError::SocNotQuantized {
            ev: ev.to_string(),
            soc0,
            beta,
            nearest: steps.round() / beta as f64,
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn z1() -> Vec<Vec<Complex64>> {
        vec![vec![Complex64::new(0.01, 0.02)]]
    }

    fn bus(id: &str, phases: &[Phase]) -> Bus {
        Bus {
            id: id.into(),
            phases: phases.to_vec(),
        }
    }

    fn line(from: &str, to: &str) -> Line {
        Line {
            from: from.into(),
            to: to.into(),
            phases: vec![Phase::A],
            z_pu: z1(),
        }
    }

    #[test]
    fn cycle_is_rejected() {
        let buses = vec![
            bus("1", &[Phase::A]),
            bus("2", &[Phase::A]),
            bus("3", &[Phase::A]),
        ];
        let lines = vec![line("1", "2"), line("2", "3"), line("3", "1")];
        let err = NetworkModel::new(buses, lines, "1".into(), vec![], 7.2, 1000.0).unwrap_err();
        assert!(matches!(err, NetError::NonRadial { buses: 3, lines: 3 }));
    }

    #[test]
    fn disconnected_with_right_line_count() {
        // 4 buses, 3 lines, but one component is a triangle-free pair plus an isolated bus
        let buses = vec![
            bus("1", &[Phase::A]),
            bus("2", &[Phase::A]),
            bus("3", &[Phase::A]),
            bus("4", &[Phase::A]),
        ];
        let lines = vec![line("1", "2"), line("3", "4"), line("4", "3")];
        let err = NetworkModel::new(buses, lines, "1".into(), vec![], 7.2, 1000.0).unwrap_err();
        assert!(matches!(err, NetError::Disconnected(_)), "{err}");
    }

    #[test]
    fn phase_mismatch_is_rejected() {
        let buses = vec![bus("1", &[Phase::A]), bus("2", &[Phase::A])];
        let mut l = line("1", "2");
        l.phases = vec![Phase::B];
        let err = NetworkModel::new(buses, vec![l], "1".into(), vec![], 7.2, 1000.0).unwrap_err();
        assert!(matches!(err, NetError::PhaseMismatch { phase: Phase::B, .. }));
    }

    #[test]
    fn node_without_feeding_phase_is_unreachable() {
        let buses = vec![
            bus("1", &[Phase::A, Phase::B]),
            bus("2", &[Phase::A, Phase::B]),
        ];
        let err =
            NetworkModel::new(buses, vec![line("1", "2")], "1".into(), vec![], 7.2, 1000.0)
                .unwrap_err();
        assert!(matches!(err, NetError::UnreachableNode(n) if n.phase == Phase::B));
    }

    #[test]
    fn asymmetric_impedance_is_rejected() {
        let buses = vec![
            bus("1", &[Phase::A, Phase::B]),
            bus("2", &[Phase::A, Phase::B]),
        ];
        let l = Line {
            from: "1".into(),
            to: "2".into(),
            phases: vec![Phase::A, Phase::B],
            z_pu: vec![
                vec![Complex64::new(0.01, 0.02), Complex64::new(0.001, 0.0)],
                vec![Complex64::new(0.002, 0.0), Complex64::new(0.01, 0.02)],
            ],
        };
        let err = NetworkModel::new(buses, vec![l], "1".into(), vec![], 7.2, 1000.0).unwrap_err();
        assert!(matches!(err, NetError::Impedance { .. }));
    }

    #[test]
    fn line_phases_are_sorted_with_matrix() {
        let buses = vec![
            bus("1", &[Phase::A, Phase::B]),
            bus("2", &[Phase::A, Phase::B]),
        ];
        let za = Complex64::new(0.01, 0.0);
        let zb = Complex64::new(0.02, 0.0);
        let zm = Complex64::new(0.001, 0.0);
        let l = Line {
            from: "1".into(),
            to: "2".into(),
            phases: vec![Phase::B, Phase::A],
            z_pu: vec![vec![zb, zm], vec![zm, za]],
        };
        let net = NetworkModel::new(buses, vec![l], "1".into(), vec![], 7.2, 1000.0).unwrap();
        assert_eq!(net.lines()[0].phases, vec![Phase::A, Phase::B]);
        assert_eq!(net.lines()[0].z_pu[0][0], za);
        assert_eq!(net.lines()[0].z_pu[1][1], zb);
    }

    #[test]
    fn default_source_voltages_are_balanced() {
        let buses = vec![bus("1", &Phase::ALL), bus("2", &[Phase::C])];
        let mut l = line("1", "2");
        l.phases = vec![Phase::C];
        let net = NetworkModel::new(buses, vec![l], "1".into(), vec![], 7.2, 1000.0).unwrap();
        let angles: Vec<f64> = net.source_voltage().iter().map(|s| s.angle_deg).collect();
        assert_eq!(angles, vec![0.0, -120.0, 120.0]);
        assert!(net.is_radial());
    }

    #[test]
    fn soc_quantization() {
        assert!(check_soc("e", 0.5, 32).is_ok());
        match check_soc("e", 0.51, 32) {
            Err(NetError::SocNotQuantized { nearest, .. }) => assert_eq!(nearest, 0.5),
            other => panic!("{other:?}"),
        }
        assert!(check_soc("e", 1.2, 32).is_err());
    }
}
