use eevc_core::fixtures;
use eevc_core::netmodel::{generate_synthetic_feeder, parse_network_str, NetworkModel};
use eevc_core::powerflow::{solve_pf, InjectionSnapshot};
use eevc_core::{NodeId, Phase, ScenarioData};
use num_complex::Complex64;

/// Larger root of `v² + (2(RP + XQ) − |Vs|²) v + |Z|²|S|² = 0`, the squared
/// receiving-end voltage of a single line feeding a constant-power load.
fn two_bus_v2(vs: f64, r: f64, x: f64, p: f64, q: f64) -> f64 {
    let b = 2.0 * (r * p + x * q) - vs * vs;
    let c = (r * r + x * x) * (p * p + q * q);
    (-b + (b * b - 4.0 * c).sqrt()) / 2.0
}

fn two_bus(r: f64, x: f64, mag: f64) -> NetworkModel {
    parse_network_str(&format!(
        r#"{{"base_kv": 12.47, "base_kva": 1000,
            "source": {{"bus": "s", "voltage_pu": [{{"phase": "a", "mag": {mag}, "angle_deg": 0}}]}},
            "buses": [{{"id": "s", "phases": ["a"]}}, {{"id": "n", "phases": ["a"]}}],
            "lines": [{{"from": "s", "to": "n", "phases": ["a"], "z_pu": [[[{r}, {x}]]]}}]}}"#
    ))
    .unwrap()
}

#[test]
fn two_bus_closed_form() {
    let node = NodeId::new("n", Phase::A);
    for &(r, x, mag, p, q) in &[
        (0.01, 0.02, 1.0, 0.5, 0.1),
        (0.05, 0.03, 1.02, 1.2, 0.4),
        (0.002, 0.008, 0.98, 3.0, -0.5),
        (0.03, 0.06, 1.0, 0.0, 0.0),
    ] {
        let net = two_bus(r, x, mag);
        let mut snap = InjectionSnapshot::zero(&net, 1);
        snap.add(&net, &node, Complex64::new(p, q)).unwrap();
        let sol = solve_pf(&net, &snap).unwrap();
        let v = sol.v_at(&net, &node).unwrap();
        let expect = two_bus_v2(mag, r, x, p, q);
        assert!((v - expect).abs() < 1e-8, "{v} vs {expect}");
    }
}

#[test]
fn diagonal_impedance_decouples_phases() {
    let net = parse_network_str(
        r#"{"base_kv": 12.47, "base_kva": 1000,
            "source": {"bus": "s", "voltage_pu": [
                {"phase": "a", "mag": 1.0, "angle_deg": 0},
                {"phase": "b", "mag": 1.0, "angle_deg": -120},
                {"phase": "c", "mag": 1.0, "angle_deg": 120}]},
            "buses": [{"id": "s", "phases": ["a", "b", "c"]}, {"id": "n", "phases": ["a", "b", "c"]}],
            "lines": [{"from": "s", "to": "n", "phases": ["a", "b", "c"], "z_pu": [
                [[0.01, 0.02], [0, 0], [0, 0]],
                [[0, 0], [0.02, 0.03], [0, 0]],
                [[0, 0], [0, 0], [0.015, 0.01]]]}]}"#,
    )
    .unwrap();
    let loads = [(Phase::A, 0.6, 0.2, 0.01, 0.02), (Phase::B, 0.3, 0.0, 0.02, 0.03), (Phase::C, 1.1, 0.3, 0.015, 0.01)];
    let mut snap = InjectionSnapshot::zero(&net, 1);
    for &(ph, p, q, _, _) in &loads {
        snap.add(&net, &NodeId::new("n", ph), Complex64::new(p, q)).unwrap();
    }
    let sol = solve_pf(&net, &snap).unwrap();
    for &(ph, p, q, r, x) in &loads {
        let v = sol.v_at(&net, &NodeId::new("n", ph)).unwrap();
        assert!((v - two_bus_v2(1.0, r, x, p, q)).abs() < 1e-8);
    }
}

#[test]
fn balanced_symmetric_feeder_is_phase_symmetric() {
    let z = "[[[0.01, 0.03], [0.004, 0.01], [0.004, 0.01]], [[0.004, 0.01], [0.01, 0.03], [0.004, 0.01]], [[0.004, 0.01], [0.004, 0.01], [0.01, 0.03]]]";
    let net = parse_network_str(&format!(
        r#"{{"base_kv": 12.47, "base_kva": 1000,
            "source": {{"bus": "s", "voltage_pu": [
                {{"phase": "a", "mag": 1.0, "angle_deg": 0}},
                {{"phase": "b", "mag": 1.0, "angle_deg": -120}},
                {{"phase": "c", "mag": 1.0, "angle_deg": 120}}]}},
            "buses": [{{"id": "s", "phases": ["a", "b", "c"]}}, {{"id": "m", "phases": ["a", "b", "c"]}}, {{"id": "n", "phases": ["a", "b", "c"]}}],
            "lines": [{{"from": "s", "to": "m", "phases": ["a", "b", "c"], "z_pu": {z}}},
                      {{"from": "m", "to": "n", "phases": ["a", "b", "c"], "z_pu": {z}}}]}}"#
    ))
    .unwrap();
    let mut snap = InjectionSnapshot::zero(&net, 1);
    for bus in ["m", "n"] {
        for ph in Phase::ALL {
            snap.add(&net, &NodeId::new(bus, ph), Complex64::new(0.4, 0.15)).unwrap();
        }
    }
    let sol = solve_pf(&net, &snap).unwrap();
    for bus in ["m", "n"] {
        let va = sol.phasor_at(&net, &NodeId::new(bus, Phase::A)).unwrap();
        let rot = Complex64::from_polar(1.0, (-120f64).to_radians());
        let vb = sol.phasor_at(&net, &NodeId::new(bus, Phase::B)).unwrap();
        let vc = sol.phasor_at(&net, &NodeId::new(bus, Phase::C)).unwrap();
        assert!((vb - va * rot).norm() < 1e-10);
        assert!((vc - va * rot * rot).norm() < 1e-10);
        assert!(va.norm() < 1.0);
    }
}

fn all_fixtures() -> Vec<(String, ScenarioData)> {
    let mut out = vec![
        ("tiny".to_string(), fixtures::tiny()),
        ("weak".to_string(), fixtures::weak_feeder()),
    ];
    for spec in fixtures::oracle_specs() {
        out.push((format!("oracle seed {}", spec.seed), generate_synthetic_feeder(&spec).unwrap().1));
    }
    out
}

#[test]
fn power_balance_on_fixtures() {
    for (name, s) in all_fixtures() {
        for t in 1..=s.t_steps() {
            for on in [false, true] {
                let snap = InjectionSnapshot::from_scenario(&s, t, &vec![on; s.evs().len()]);
                let sol = solve_pf(s.network(), &snap).unwrap();
                let gap = sol.source_injection - sol.total_load - sol.losses;
                assert!(gap.norm() <= 1e-6, "{name} t={t}: {gap}");
                assert!(sol.losses.re >= 0.0);
            }
        }
    }
}

#[test]
fn extra_demand_sags_downstream_same_phase() {
    for (name, s) in all_fixtures() {
        let net = s.network();
        for t in [1, s.t_steps() / 2, s.t_steps()] {
            let base = InjectionSnapshot::from_scenario(&s, t, &vec![false; s.evs().len()]);
            let v0 = solve_pf(net, &base).unwrap().v;
            for (i, node) in net.nodes().iter().enumerate() {
                if node.bus == net.source_bus() {
                    continue;
                }
                let mut snap = base.clone();
                snap.demand[i] += Complex64::new(0.02, 0.0);
                let v1 = solve_pf(net, &snap).unwrap().v;
                for bus in net.subtree(&node.bus) {
                    let Some(j) = net.node_index(&NodeId::new(bus.clone(), node.phase)) else {
                        continue;
                    };
                    assert!(v1[j] <= v0[j] + 1e-12, "{name} t={t}: load at {node} raised {bus}");
                }
            }
        }
    }
}

#[test]
fn generated_base_case_has_no_violations() {
    for (name, s) in all_fixtures() {
        let (_, report) = eevc_core::powerflow::simulate_profile(
            &eevc_core::powerflow::PowerFlowModel::default(),
            &s,
            &vec![vec![false; s.evs().len()]; s.t_steps()],
        )
        .unwrap();
        assert!(report.is_empty(), "{name}");
    }
}
