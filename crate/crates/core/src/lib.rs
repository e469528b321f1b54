//! Stochastic shortest paths on road networks with spatially and temporally
//! correlated link speeds.
//!
//! The pipeline: load a [`network::RoadNetwork`] and an empirical
//! [`panel::SpeedPanel`], analyse correlations ([`speedstats`]), build scenario
//! sets by random sampling or scenario generation ([`scengen`]), find optimal
//! paths for one of six objectives ([`objectives`], [`solver`]) and measure how
//! stable those optima are across scenario sets ([`stability`]). [`synth`]
//! produces synthetic networks and panels with controllable correlation.

// `!(x > 0.0)` is used on purpose so that NaN is rejected
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod network;
pub mod objectives;
pub mod panel;
pub mod scenario;
pub mod scengen;
pub mod solver;
pub mod speedstats;
pub mod stability;
pub mod synth;

pub use network::{Link, NetworkError, NodeId, RoadNetwork};
pub use objectives::{MeetParams, Objective, ObjectiveKind, ObjectiveSpec, Path};
pub use panel::{SpeedPanel, TimeGrid, VarKey};
pub use scenario::{Method, ScenarioSet};
