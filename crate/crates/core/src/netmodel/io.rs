use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{
    Bus, Ev, Line, NetError, NetworkModel, ScenarioConfig, ScenarioData, SourcePhase, Taz,
};
use crate::types::{NodeId, Phase};

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawNetwork {
    base_kv: f64,
    base_kva: f64,
    source: RawSource,
    buses: Vec<RawBus>,
    lines: Vec<RawLine>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSource {
    bus: String,
    #[serde(default)]
    voltage_pu: Vec<RawSourcePhase>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSourcePhase {
    phase: Phase,
    mag: f64,
    angle_deg: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBus {
    id: String,
    phases: RawPhases,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLine {
    from: String,
    to: String,
    phases: RawPhases,
    z_pu: Vec<Vec<[f64; 2]>>,
}

/// Phases may be written as `["a","b"]` or as the compact string `"ab"`.
#[derive(Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum RawPhases {
    List(Vec<Phase>),
    Compact(String),
}

impl RawPhases {
    fn resolve(self, field: &str) -> Result<Vec<Phase>, NetError> {
        match self {
            RawPhases::List(v) => Ok(v),
            RawPhases::Compact(s) => s
                .chars()
                .map(|c| {
                    Phase::from_char(c).ok_or_else(|| NetError::Field {
                        field: field.to_string(),
                        message: format!("unknown phase `{c}`"),
                    })
                })
                .collect(),
        }
    }
}

fn read(path: &Path) -> Result<String, NetError> {
    fs::read_to_string(path).map_err(|source| NetError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn parse_network(path: &Path) -> Result<NetworkModel, NetError> {
    let text = read(path)?;
    parse_network_named(&text, &path.display().to_string())
}

pub fn parse_network_str(text: &str) -> Result<NetworkModel, NetError> {
    parse_network_named(text, "network.json")
}

fn parse_network_named(text: &str, file: &str) -> Result<NetworkModel, NetError> {
    let raw: RawNetwork = serde_json::from_str(text).map_err(|e| NetError::Schema {
        file: file.to_string(),
        message: e.to_string(),
    })?;
    let buses = raw
        .buses
        .into_iter()
        .map(|b| {
            let field = format!("buses[{}].phases", b.id);
            Ok(Bus {
                phases: b.phases.resolve(&field)?,
                id: b.id,
            })
        })
        .collect::<Result<Vec<_>, NetError>>()?;
    let lines = raw
        .lines
        .into_iter()
        .map(|l| {
            let field = format!("lines[{}-{}].phases", l.from, l.to);
            Ok(Line {
                phases: l.phases.resolve(&field)?,
                z_pu: l
                    .z_pu
                    .iter()
                    .map(|row| row.iter().map(|&[r, x]| Complex64::new(r, x)).collect())
                    .collect(),
                from: l.from,
                to: l.to,
            })
        })
        .collect::<Result<Vec<_>, NetError>>()?;
    let source = raw
        .source
        .voltage_pu
        .into_iter()
        .map(|s| SourcePhase {
            phase: s.phase,
            mag: s.mag,
            angle_deg: s.angle_deg,
        })
        .collect();
    NetworkModel::new(
        buses,
        lines,
        raw.source.bus,
        source,
        raw.base_kv,
        raw.base_kva,
    )
}

pub fn write_network_json(net: &NetworkModel) -> String {
    let raw = RawNetwork {
        base_kv: net.base_kv(),
        base_kva: net.base_kva(),
        source: RawSource {
            bus: net.source_bus().to_string(),
            voltage_pu: net
                .source_voltage()
                .iter()
                .map(|s| RawSourcePhase {
                    phase: s.phase,
                    mag: s.mag,
                    angle_deg: s.angle_deg,
                })
                .collect(),
        },
        buses: net
            .buses()
            .iter()
            .map(|b| RawBus {
                id: b.id.clone(),
                phases: RawPhases::List(b.phases.clone()),
            })
            .collect(),
        lines: net
            .lines()
            .iter()
            .map(|l| RawLine {
                from: l.from.clone(),
                to: l.to.clone(),
                phases: RawPhases::List(l.phases.clone()),
                z_pu: l
                    .z_pu
                    .iter()
                    .map(|row| row.iter().map(|z| [z.re, z.im]).collect())
                    .collect(),
            })
            .collect(),
    };
    let mut s = serde_json::to_string_pretty(&raw).expect("network serialises");
    s.push('\n');
    s
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    #[serde(rename = "T", skip_serializing_if = "Option::is_none")]
    t_steps: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    beta: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    rate_kw: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    v_max_pu2: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    v_min_pu2: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    lambda_max: Option<f64>,
}

/// Parses `config.json`; absent keys take the [`ScenarioConfig`] defaults.
pub fn parse_config(text: &str) -> Result<ScenarioConfig, NetError> {
    let raw: RawConfig = serde_json::from_str(text).map_err(|e| NetError::Schema {
        file: "config.json".into(),
        message: e.to_string(),
    })?;
    let d = ScenarioConfig::default();
    let cfg = ScenarioConfig {
        t_steps: raw.t_steps.unwrap_or(d.t_steps),
        beta: raw.beta.unwrap_or(d.beta),
        rate_kw: raw.rate_kw.unwrap_or(d.rate_kw),
        v_max: raw.v_max_pu2.unwrap_or(d.v_max),
        v_min: raw.v_min_pu2.unwrap_or(d.v_min),
        lambda_max: raw.lambda_max.unwrap_or(d.lambda_max),
    };
    cfg.validate()?;
    Ok(cfg)
}

pub fn write_config_json(cfg: &ScenarioConfig) -> String {
    let raw = RawConfig {
        t_steps: Some(cfg.t_steps),
        beta: Some(cfg.beta),
        rate_kw: Some(cfg.rate_kw),
        v_max_pu2: Some(cfg.v_max),
        v_min_pu2: Some(cfg.v_min),
        lambda_max: Some(cfg.lambda_max),
    };
    let mut s = serde_json::to_string_pretty(&raw).expect("config serialises");
    s.push('\n');
    s
}

fn csv_reader(text: &str) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes())
}

fn csv_err(file: &str, e: csv::Error) -> NetError {
    NetError::Schema {
        file: file.to_string(),
        message: e.to_string(),
    }
}

fn check_header(file: &str, rdr: &mut csv::Reader<&[u8]>, want: &[&str]) -> Result<(), NetError> {
    let got = rdr.headers().map_err(|e| csv_err(file, e))?;
    let got: Vec<&str> = got.iter().collect();
    if got != want {
        return Err(NetError::Schema {
            file: file.to_string(),
            message: format!("expected header `{}`, got `{}`", want.join(","), got.join(",")),
        });
    }
    Ok(())
}

#[derive(Deserialize)]
struct LoadRow {
    node: String,
    t: usize,
    p_kw: f64,
    q_kvar: f64,
}

/// Parses `loads.csv` into per-step background maps (index `t-1`).
pub fn parse_loads(
    text: &str,
    t_steps: usize,
) -> Result<Vec<BTreeMap<NodeId, Complex64>>, NetError> {
    let mut rdr = csv_reader(text);
    check_header("loads.csv", &mut rdr, &["node", "t", "p_kw", "q_kvar"])?;
    let mut out = vec![BTreeMap::new(); t_steps];
    for row in rdr.deserialize::<LoadRow>() {
        let row = row.map_err(|e| csv_err("loads.csv", e))?;
        let node: NodeId = row.node.parse().map_err(|e: crate::ParseNodeError| {
            NetError::BadLoad {
                node: row.node.clone(),
                t: row.t,
                message: e.to_string(),
            }
        })?;
        if row.t == 0 || row.t > t_steps {
            return Err(NetError::BadLoad {
                node: row.node,
                t: row.t,
                message: format!("time step outside 1..={t_steps}"),
            });
        }
        if out[row.t - 1]
            .insert(node, Complex64::new(row.p_kw, row.q_kvar))
            .is_some()
        {
            return Err(NetError::BadLoad {
                node: row.node,
                t: row.t,
                message: "duplicate row".into(),
            });
        }
    }
    Ok(out)
}

pub fn write_loads_csv(s: &ScenarioData) -> String {
    let mut out = String::from("node,t,p_kw,q_kvar\n");
    for t in 1..=s.t_steps() {
        for (node, p) in s.background(t) {
            let _ = writeln!(out, "{node},{t},{},{}", p.re, p.im);
        }
    }
    out
}

#[derive(Deserialize)]
struct EvRow {
    ev_id: String,
    taz_id: String,
    node: String,
    soc0: f64,
}

pub fn parse_evs(text: &str) -> Result<Vec<Ev>, NetError> {
    let mut rdr = csv_reader(text);
    check_header("evs.csv", &mut rdr, &["ev_id", "taz_id", "node", "soc0"])?;
    rdr.deserialize::<EvRow>()
        .map(|row| {
            let row = row.map_err(|e| csv_err("evs.csv", e))?;
            let node = row.node.parse().map_err(|_| NetError::UnknownNode {
                ev: row.ev_id.clone(),
                node: row.node.clone(),
            })?;
            Ok(Ev {
                id: row.ev_id,
                taz: row.taz_id,
                node,
                soc0: row.soc0,
            })
        })
        .collect()
}

pub fn write_evs_csv(s: &ScenarioData) -> String {
    let mut out = String::from("ev_id,taz_id,node,soc0\n");
    for ev in s.evs() {
        let _ = writeln!(out, "{},{},{},{}", ev.id, ev.taz, ev.node, ev.soc0);
    }
    out
}

#[derive(Deserialize)]
struct TazRow {
    taz_id: String,
    departure_t: usize,
}

pub fn parse_tazs(text: &str) -> Result<Vec<Taz>, NetError> {
    let mut rdr = csv_reader(text);
    check_header("tazs.csv", &mut rdr, &["taz_id", "departure_t"])?;
    rdr.deserialize::<TazRow>()
        .map(|row| {
            let row = row.map_err(|e| csv_err("tazs.csv", e))?;
            Ok(Taz {
                id: row.taz_id,
                departure: row.departure_t,
            })
        })
        .collect()
}

pub fn write_tazs_csv(s: &ScenarioData) -> String {
    let mut out = String::from("taz_id,departure_t\n");
    for z in s.tazs() {
        let _ = writeln!(out, "{},{}", z.id, z.departure);
    }
    out
}

/// Locations of the five scenario input files.
#[derive(Debug, Clone)]
pub struct ScenarioPaths {
    pub network: PathBuf,
    pub loads: PathBuf,
    pub evs: PathBuf,
    pub tazs: PathBuf,
    pub config: Option<PathBuf>,
}

impl ScenarioPaths {
    /// Conventional file names inside one directory.
    pub fn in_dir(dir: &Path) -> Self {
        let config = dir.join("config.json");
        ScenarioPaths {
            network: dir.join("network.json"),
            loads: dir.join("loads.csv"),
            evs: dir.join("evs.csv"),
            tazs: dir.join("tazs.csv"),
            config: Some(config),
        }
    }
}

pub fn parse_scenario(
    net: NetworkModel,
    loads_path: &Path,
    evs_path: &Path,
    tazs_path: &Path,
    config_path: Option<&Path>,
) -> Result<ScenarioData, NetError> {
    let config = match config_path {
        Some(p) if p.exists() => parse_config(&read(p)?)?,
        Some(p) => {
            return Err(NetError::Io {
                path: p.display().to_string(),
                source: std::io::Error::from(std::io::ErrorKind::NotFound),
            })
        }
        None => ScenarioConfig::default(),
    };
    let background = parse_loads(&read(loads_path)?, config.t_steps)?;
    let evs = parse_evs(&read(evs_path)?)?;
    let tazs = parse_tazs(&read(tazs_path)?)?;
    ScenarioData::new(net, background, tazs, evs, config)
}

pub fn load_scenario_dir(dir: &Path) -> Result<ScenarioData, NetError> {
    let paths = ScenarioPaths::in_dir(dir);
    let net = parse_network(&paths.network)?;
    let config = paths.config.filter(|p| p.exists());
    parse_scenario(
        net,
        &paths.loads,
        &paths.evs,
        &paths.tazs,
        config.as_deref(),
    )
}

pub fn write_scenario_dir(s: &ScenarioData, dir: &Path) -> std::io::Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("network.json"), write_network_json(s.network()))?;
    fs::write(dir.join("loads.csv"), write_loads_csv(s))?;
    fs::write(dir.join("evs.csv"), write_evs_csv(s))?;
    fs::write(dir.join("tazs.csv"), write_tazs_csv(s))?;
    fs::write(dir.join("config.json"), write_config_json(s.config()))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const TWO_BUS: &str = r#"{
        "base_kv": 7.2, "base_kva": 1000,
        "source": {"bus": "s", "voltage_pu": [{"phase": "a", "mag": 1.0, "angle_deg": 0.0}]},
        "buses": [{"id": "s", "phases": ["a"]}, {"id": "n1", "phases": "a"}],
        "lines": [{"from": "s", "to": "n1", "phases": ["a"], "z_pu": [[[0.01, 0.02]]]}]
    }"#;

    #[test]
    fn smallest_network_parses() {
        let net = parse_network_str(TWO_BUS).unwrap();
        assert_eq!(net.buses().len(), 2);
        assert_eq!(net.lines().len(), 1);
        assert_eq!(net.lines()[0].z_pu[0][0], Complex64::new(0.01, 0.02));
    }

    #[test]
    fn cycle_file_is_non_radial() {
        let text = r#"{
            "base_kv": 7.2, "base_kva": 1000, "source": {"bus": "1"},
            "buses": [{"id": "1", "phases": "a"}, {"id": "2", "phases": "a"}, {"id": "3", "phases": "a"}],
            "lines": [
                {"from": "1", "to": "2", "phases": "a", "z_pu": [[[0.01, 0.02]]]},
                {"from": "2", "to": "3", "phases": "a", "z_pu": [[[0.01, 0.02]]]},
                {"from": "3", "to": "1", "phases": "a", "z_pu": [[[0.01, 0.02]]]}
            ]
        }"#;
        assert!(matches!(
            parse_network_str(text),
            Err(NetError::NonRadial { .. })
        ));
    }

    #[test]
    fn phase_b_on_phase_a_bus_is_rejected() {
        let text = TWO_BUS.replace(r#""phases": ["a"], "z_pu""#, r#""phases": ["b"], "z_pu""#);
        assert!(matches!(
            parse_network_str(&text),
            Err(NetError::PhaseMismatch { .. })
        ));
    }

    #[test]
    fn schema_error_names_the_field() {
        let text = TWO_BUS.replace("\"base_kva\": 1000,", "");
        let err = parse_network_str(&text).unwrap_err().to_string();
        assert!(err.contains("base_kva"), "{err}");
        let text = TWO_BUS.replace("\"base_kv\"", "\"base_kvv\"");
        let err = parse_network_str(&text).unwrap_err().to_string();
        assert!(err.contains("base_kvv"), "{err}");
    }

    #[test]
    fn config_defaults() {
        let cfg = parse_config("{}").unwrap();
        assert_eq!(cfg.t_steps, 96);
        assert_eq!(cfg.beta, 32);
        assert_eq!(cfg.rate_kw, 7.5);
        assert!((cfg.v_max - 1.1025).abs() < 1e-15);
        assert!((cfg.v_min - 0.9025).abs() < 1e-15);
        assert!(parse_config(r#"{"v_min_pu2": 1.2}"#).is_err());
        assert!(parse_config(r#"{"nope": 1}"#).is_err());
    }

    fn scenario_with(evs: &str, tazs: &str) -> Result<ScenarioData, NetError> {
        let net = parse_network_str(TWO_BUS)?;
        let cfg = ScenarioConfig::default();
        let loads = parse_loads("node,t,p_kw,q_kvar\nn1.a,1,10,3\n", cfg.t_steps)?;
        ScenarioData::new(net, loads, parse_tazs(tazs)?, parse_evs(evs)?, cfg)
    }

    #[test]
    fn soc_half_accepted_and_point51_rejected() {
        let tazs = "taz_id,departure_t\nz1,96\n";
        let s = scenario_with("ev_id,taz_id,node,soc0\ne1,z1,n1.a,0.5\n", tazs).unwrap();
        assert_eq!(s.steps_needed(0), 16);
        assert_eq!(s.ev_buses(), &["n1".to_string()]);
        let err = scenario_with("ev_id,taz_id,node,soc0\ne1,z1,n1.a,0.51\n", tazs).unwrap_err();
        assert!(err.to_string().contains("nearest valid value is 0.5"), "{err}");
    }

    #[test]
    fn unknown_node_and_late_departure() {
        let err = scenario_with(
            "ev_id,taz_id,node,soc0\ne1,z1,n9.a,0.5\n",
            "taz_id,departure_t\nz1,96\n",
        )
        .unwrap_err();
        assert!(matches!(err, NetError::UnknownNode { .. }));
        let err = scenario_with(
            "ev_id,taz_id,node,soc0\ne1,z1,n1.a,0.5\n",
            "taz_id,departure_t\nz1,97\n",
        )
        .unwrap_err();
        assert!(matches!(err, NetError::DepartureOutOfRange { .. }));
    }

    #[test]
    fn bad_header_rejected() {
        assert!(parse_evs("id,taz,node,soc\n").is_err());
        assert!(parse_loads("node,t,p_kw,q_kvar\nn1.a,0,1,1\n", 4).is_err());
        assert!(parse_loads("node,t,p_kw,q_kvar\nn1.a,1,1,1\nn1.a,1,2,2\n", 4).is_err());
    }

    #[test]
    fn empty_taz_rejected() {
        let err = scenario_with(
            "ev_id,taz_id,node,soc0\ne1,z1,n1.a,0.5\n",
            "taz_id,departure_t\nz1,96\nz2,96\n",
        )
        .unwrap_err();
        assert!(matches!(err, NetError::EmptyTaz(z) if z == "z2"));
    }
}
