//! Small bundled scenarios used by tests, benchmarks and the `generate`
//! subcommand.

use crate::netmodel::{generate_synthetic_feeder, FeederSpec, ScenarioData};
use crate::powerflow::AffineVoltageModel;

/// The weak-feeder layout with another random draw.
pub fn desk_spec(seed: u64) -> FeederSpec {
    FeederSpec {
        n_buses: 6,
        n_tazs: 2,
        evs_per_taz: 2,
        seed,
        t_steps: 16,
        beta: 4,
        base_kva: 100.0,
        impedance_scale: 10.0,
        load_level: 0.1,
        start_hour: 14.0,
        ..FeederSpec::default()
    }
}

/// Six-bus three-phase feeder, 2 TAZs of 2 EVs, 16 steps from 14:00, where
/// the naive schedule drives voltages below the lower bound.
pub fn weak_feeder_spec() -> FeederSpec {
    desk_spec(2)
}

pub fn weak_feeder() -> ScenarioData {
    generate_synthetic_feeder(&weak_feeder_spec())
        .expect("weak feeder spec is valid")
        .1
}

/// Four-bus feeder with one EV per TAZ.
pub fn tiny_spec() -> FeederSpec {
    FeederSpec {
        n_buses: 4,
        evs_per_taz: 1,
        impedance_scale: 12.0,
        ..desk_spec(5)
    }
}

pub fn tiny() -> ScenarioData {
    generate_synthetic_feeder(&tiny_spec())
        .expect("tiny spec is valid")
        .1
}

/// Specs of the small instances compared against the brute-force oracle.
/// Each converges under the default congen settings with `lambda_max = 0`.
pub fn oracle_specs() -> Vec<FeederSpec> {
    [(2, 10.0), (2, 12.0), (3, 10.0), (4, 12.0), (7, 10.0), (7, 12.0), (14, 10.0)]
        .into_iter()
        .map(|(seed, z)| FeederSpec {
            impedance_scale: z,
            ..desk_spec(seed)
        })
        .collect()
}

/// An exactly affine voltage response on `scenario`: every node sits at 1.0
/// p.u.² except `node_index`, which sags linearly with EV demand at any EV bus
/// and whose level drops to just above `v_min` from `danger_from` onwards.
/// Any charging at or after `danger_from` violates the lower bound there;
/// nothing else can violate.
pub fn danger_zone_model(
    scenario: &ScenarioData,
    node_index: usize,
    danger_from: usize,
) -> AffineVoltageModel {
    let n = scenario.network().nodes().len();
    let k = scenario.ev_buses().len();
    let v_min = scenario.config().v_min;
    let rate = scenario.rate_pu();
    let slope = 0.5 * (1.0 - v_min) / (rate * scenario.evs().len().max(1) as f64);
    let intercept = (1..=scenario.t_steps())
        .map(|t| {
            let mut v = vec![1.0; n];
            if t >= danger_from {
                v[node_index] = v_min + 0.5 * slope * rate;
            }
            v
        })
        .collect();
    let mut sensitivity = vec![vec![0.0; k]; n];
    sensitivity[node_index] = vec![-slope; k];
    AffineVoltageModel {
        intercept,
        sensitivity,
    }
}

/// The danger zone starting where the naive schedule's first TAZ starts.
pub fn naive_danger_model(scenario: &ScenarioData) -> AffineVoltageModel {
    let start = (0..scenario.tazs().len())
        .filter(|&zi| scenario.taz_window(zi) > 0)
        .map(|zi| scenario.tazs()[zi].departure - scenario.taz_window(zi))
        .min()
        .unwrap_or(scenario.t_steps());
    let node = scenario.network().nodes().len() - 1;
    danger_zone_model(scenario, node, start)
}
