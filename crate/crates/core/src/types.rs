use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// One conductor phase of a distribution bus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    A,
    B,
    C,
}

impl Phase {
    pub const ALL: [Phase; 3] = [Phase::A, Phase::B, Phase::C];

    pub fn as_char(self) -> char {
        match self {
            Phase::A => 'a',
            Phase::B => 'b',
            Phase::C => 'c',
        }
    }

    /// Nominal angle of the balanced positive-sequence source phasor, in degrees.
    pub fn nominal_angle_deg(self) -> f64 {
        match self {
            Phase::A => 0.0,
            Phase::B => -120.0,
            Phase::C => 120.0,
        }
    }

    pub fn from_char(c: char) -> Option<Phase> {
        match c.to_ascii_lowercase() {
            'a' => Some(Phase::A),
            'b' => Some(Phase::B),
            'c' => Some(Phase::C),
            _ => None,
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_char())
    }
}

/// A single-phase node `(bus, phase)`, written `bus.phase` in files.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId {
    pub bus: String,
    pub phase: Phase,
}

impl NodeId {
    pub fn new(bus: impl Into<String>, phase: Phase) -> Self {
        NodeId {
            bus: bus.into(),
            phase,
        }
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.bus, self.phase)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid node `{0}`: expected `busid.phase` with phase a, b or c")]
pub struct ParseNodeError(pub String);

impl FromStr for NodeId {
    type Err = ParseNodeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (bus, phase) = s
            .rsplit_once('.')
            .ok_or_else(|| ParseNodeError(s.to_string()))?;
        let mut chars = phase.chars();
        let phase = match (chars.next(), chars.next()) {
            (Some(c), None) => Phase::from_char(c),
            _ => None,
        }
        .ok_or_else(|| ParseNodeError(s.to_string()))?;
        if bus.is_empty() {
            return Err(ParseNodeError(s.to_string()));
        }
        Ok(NodeId::new(bus, phase))
    }
}

impl Serialize for NodeId {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for NodeId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Direction of a voltage bound: `Over` is the upper bound (and the
/// over-estimating surrogate that guards it), `Under` the lower one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sense {
    Over,
    Under,
}

impl fmt::Display for Sense {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Sense::Over => "over",
            Sense::Under => "under",
        })
    }
}

impl FromStr for Sense {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "over" => Ok(Sense::Over),
            "under" => Ok(Sense::Under),
            other => Err(format!("unknown sense `{other}` (expected over/under)")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn node_id_parses_last_dot() {
        let n: NodeId = "feeder.12.b".parse().unwrap();
        assert_eq!(n.bus, "feeder.12");
        assert_eq!(n.phase, Phase::B);
        assert_eq!(n.to_string(), "feeder.12.b");
    }

    #[test]
    fn node_id_rejects_bad_phase() {
        assert!("n1.d".parse::<NodeId>().is_err());
        assert!("n1".parse::<NodeId>().is_err());
        assert!(".a".parse::<NodeId>().is_err());
        assert!("n1.ab".parse::<NodeId>().is_err());
    }
}
