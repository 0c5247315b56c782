use std::collections::BTreeMap;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Bus, Ev, Line, NetError, NetworkModel, ScenarioConfig, ScenarioData, Taz};
use crate::powerflow::{simulate_profile, PowerFlowModel};
use crate::types::{NodeId, Phase};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhasePattern {
    /// Every bus carries a, b and c.
    ThreePhase,
    /// Three-phase trunk with single-phase laterals.
    Mixed,
    /// Every bus carries phase a only.
    SinglePhase,
}

/// Parameters of a generated feeder and evacuation scenario.
#[derive(Debug, Clone)]
pub struct FeederSpec {
    pub n_buses: usize,
    pub phases: PhasePattern,
    pub n_tazs: usize,
    pub evs_per_taz: usize,
    pub seed: u64,
    pub t_steps: usize,
    pub beta: u32,
    pub rate_kw: f64,
    pub base_kva: f64,
    /// Multiplier on segment impedances; larger means a weaker feeder.
    pub impedance_scale: f64,
    /// Peak background demand per node as a fraction of `base_kva`.
    pub load_level: f64,
    /// Hour of day at step 1.
    pub start_hour: f64,
    /// Departure step shared by every TAZ; `None` means the last step.
    pub departure: Option<usize>,
    /// Largest initial state of charge handed to an EV.
    pub max_soc0: f64,
    pub lambda_max: f64,
}

impl Default for FeederSpec {
    fn default() -> Self {
        let cfg = ScenarioConfig::default();
        FeederSpec {
            n_buses: 6,
            phases: PhasePattern::ThreePhase,
            n_tazs: 2,
            evs_per_taz: 2,
            seed: 7,
            t_steps: cfg.t_steps,
            beta: cfg.beta,
            rate_kw: cfg.rate_kw,
            base_kva: 1000.0,
            impedance_scale: 1.0,
            load_level: 0.02,
            start_hour: 0.0,
            departure: None,
            max_soc0: 0.5,
            lambda_max: cfg.lambda_max,
        }
    }
}

/// Relative residential demand over a mid-summer day, peaking in the early
/// evening with a shallower late-morning shoulder.
fn summer_profile(hour: f64) -> f64 {
    let h = hour.rem_euclid(24.0);
    let bump = |centre: f64, width: f64| {
        let d = (h - centre).abs().min(24.0 - (h - centre).abs());
        (-(d / width).powi(2)).exp()
    };
    0.42 + 0.18 * bump(10.0, 3.0) + 0.58 * bump(18.0, 3.5)
}

/// Deterministic radial feeder plus scenario for a given seed. Background
/// loads are scaled down until the scenario without EV charging has no
/// voltage violation at any step.
pub fn generate_synthetic_feeder(
    spec: &FeederSpec,
) -> Result<(NetworkModel, ScenarioData), NetError> {
    if spec.n_buses < 2 {
        return Err(NetError::Field {
            field: "n_buses".into(),
            message: "need at least 2 buses".into(),
        });
    }
    if spec.n_tazs == 0 || spec.evs_per_taz == 0 {
        return Err(NetError::NoEvs);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let mut buses = vec![Bus {
        id: "b0".into(),
        phases: match spec.phases {
            PhasePattern::SinglePhase => vec![Phase::A],
            _ => Phase::ALL.to_vec(),
        },
    }];
    let mut lines = Vec::new();
    for i in 1..spec.n_buses {
        // mostly a trunk with occasional branching back to an earlier bus
        let parent = if i == 1 || rng.gen_bool(0.65) {
            i - 1
        } else {
            rng.gen_range(0..i)
        };
        let parent_phases = buses[parent].phases.clone();
        let phases = match spec.phases {
            PhasePattern::Mixed if parent_phases.len() == 3 && i > 2 && rng.gen_bool(0.4) => {
                vec![parent_phases[rng.gen_range(0..3)]]
            }
            _ => parent_phases,
        };
        let len = rng.gen_range(0.5..1.5) * spec.impedance_scale;
        let self_z = Complex64::new(0.006, 0.012) * len;
        let mutual_z = Complex64::new(0.002, 0.005) * len;
        let n = phases.len();
        let z_pu = (0..n)
            .map(|r| {
                (0..n)
                    .map(|c| if r == c { self_z } else { mutual_z })
                    .collect()
            })
            .collect();
        let id = format!("b{i}");
        lines.push(Line {
            from: buses[parent].id.clone(),
            to: id.clone(),
            phases: phases.clone(),
            z_pu,
        });
        buses.push(Bus { id, phases });
    }
    let net = NetworkModel::new(buses, lines, "b0".into(), vec![], 7.2, spec.base_kva)?;

    // background: per-node peak scaled by the daily profile, 0.95 power factor
    let q_ratio = (1.0f64 - 0.95 * 0.95).sqrt() / 0.95;
    let peaks: Vec<(NodeId, f64)> = net
        .nodes()
        .iter()
        .filter(|n| n.bus != "b0")
        .map(|n| (n.clone(), rng.gen_range(0.5..1.5) * spec.load_level * spec.base_kva))
        .collect();

    let beta = spec.beta.max(1);
    let departure = spec.departure.unwrap_or(spec.t_steps).clamp(1, spec.t_steps);
    let tazs: Vec<Taz> = (1..=spec.n_tazs)
        .map(|z| Taz {
            id: format!("taz{z}"),
            departure,
        })
        .collect();
    // a full charge must fit before departure: steps needed ≤ departure - 1
    let min_k = (beta as i64 - (departure as i64 - 1)).max(0) as u32;
    let max_k = ((spec.max_soc0 * beta as f64).floor() as u32).clamp(min_k, beta);
    let ev_hosts: Vec<&NodeId> = peaks.iter().map(|(n, _)| n).collect();
    let mut evs = Vec::new();
    for z in &tazs {
        for h in 1..=spec.evs_per_taz {
            let node = ev_hosts[rng.gen_range(0..ev_hosts.len())].clone();
            let k = rng.gen_range(min_k..=max_k);
            evs.push(Ev {
                id: format!("ev_{}_{h}", z.id),
                taz: z.id.clone(),
                node,
                soc0: k as f64 / beta as f64,
            });
        }
    }

    let config = ScenarioConfig {
        t_steps: spec.t_steps,
        beta,
        rate_kw: spec.rate_kw,
        lambda_max: spec.lambda_max,
        ..ScenarioConfig::default()
    };

    let mut scale = 1.0;
    for _ in 0..60 {
        let background: Vec<BTreeMap<NodeId, Complex64>> = (0..spec.t_steps)
            .map(|ti| {
                let f = summer_profile(spec.start_hour + ti as f64 * 0.25) * scale;
                peaks
                    .iter()
                    .map(|(n, peak)| {
                        let p = round_kw(peak * f);
                        (n.clone(), Complex64::new(p, round_kw(p * q_ratio)))
                    })
                    .collect()
            })
            .collect();
        let scenario = ScenarioData::new(
            net.clone(),
            background,
            tazs.clone(),
            evs.clone(),
            config.clone(),
        )?;
        let off = vec![vec![false; evs.len()]; spec.t_steps];
        if let Ok((_, report)) = simulate_profile(&PowerFlowModel::default(), &scenario, &off) {
            if report.is_empty() {
                return Ok((net, scenario));
            }
        }
        scale *= 0.9;
    }
    Err(NetError::Field {
        field: "load_level".into(),
        message: "could not scale background loads to a violation-free base case".into(),
    })
}

fn round_kw(x: f64) -> f64 {
    (x * 1000.0).round() / 1000.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::io::{write_evs_csv, write_loads_csv, write_network_json};

    #[test]
    fn same_seed_same_bytes() {
        let spec = FeederSpec {
            n_buses: 6,
            n_tazs: 2,
            evs_per_taz: 2,
            seed: 7,
            ..FeederSpec::default()
        };
        let (n1, s1) = generate_synthetic_feeder(&spec).unwrap();
        let (n2, s2) = generate_synthetic_feeder(&spec).unwrap();
        assert_eq!(write_network_json(&n1), write_network_json(&n2));
        assert_eq!(write_loads_csv(&s1), write_loads_csv(&s2));
        assert_eq!(write_evs_csv(&s1), write_evs_csv(&s2));
        assert_eq!(s1.content_hash(), s2.content_hash());
    }

    #[test]
    fn two_bus_minimal() {
        let spec = FeederSpec {
            n_buses: 2,
            n_tazs: 1,
            evs_per_taz: 1,
            ..FeederSpec::default()
        };
        let (net, s) = generate_synthetic_feeder(&spec).unwrap();
        assert_eq!(net.buses().len(), 2);
        assert_eq!(s.evs().len(), 1);
        assert_eq!(s.ev_buses(), &["b1".to_string()]);
    }

    #[test]
    fn rejects_single_bus() {
        let spec = FeederSpec {
            n_buses: 1,
            ..FeederSpec::default()
        };
        assert!(generate_synthetic_feeder(&spec).is_err());
    }

    #[test]
    fn profile_peaks_in_evening() {
        let evening = summer_profile(18.0);
        assert!(evening > summer_profile(4.0));
        assert!(evening > summer_profile(10.0));
    }
}
