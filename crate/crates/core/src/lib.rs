//! Emergency EV charging scheduling on unbalanced distribution feeders.
//!
//! The crate is organised bottom-up:
//!
//! - [`netmodel`]: feeder and evacuation-scenario data, file ingestion, synthetic feeders.
//! - [`powerflow`]: unbalanced radial power flow (forward-backward sweep), time-series
//!   simulation of charging schedules and voltage-violation scoring.
//! - [`cla`]: sample generation and conservative affine surrogates of squared voltage
//!   magnitudes fitted by constrained ℓ1 regression.
//! - [`mathprog`]: LP/MILP representation, dense bounded simplex, branch-and-bound,
//!   fixed-format MPS export.
//! - [`eevc`]: the charging MILP with slacked surrogate voltage constraints, decoding and
//!   schedule validation.
//! - [`congen`]: the constraint-generation driver, the brute-force start-time oracle and
//!   violation-budget sweeps.
//! - [`artifacts`]: CSV/JSON outputs with provenance headers, and the report builder.
//! - [`fixtures`]: the bundled desk-scale scenarios.

pub mod artifacts;
pub mod cla;
pub mod congen;
pub mod eevc;
pub mod fixtures;
pub mod mathprog;
pub mod netmodel;
pub mod powerflow;
mod types;

pub use cla::{ClaFunction, ClaModel, SampleSet};
pub use congen::{CongenConfig, CongenResult, CongenStatus, IterationTrace};
pub use eevc::{ChargeSchedule, EevcInstance};
pub use mathprog::{Program, Solution, SolveStatus};
pub use netmodel::{Ev, NetworkModel, ScenarioData, Taz};
pub use powerflow::{VoltageSolution, ViolationReport};
pub use types::{NodeId, ParseNodeError, Phase, Sense};
