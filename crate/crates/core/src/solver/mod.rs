//! Exact optimal path search by interleaving k-shortest paths on lower-bound
//! weights with exact objective evaluation.
//!
//! Paths `P1, P2, ...` are produced in non-decreasing bound `g(P)`. After each
//! new path `Pk` the previous one is evaluated and the incumbent value `tau`
//! updated; once `tau < g(Pk)` no unexplored path can beat the incumbent,
//! because every later path `Q` satisfies `g(Pk) <= g(Q) <= f(Q)`.

pub mod bounds;
pub mod yen;

use serde::Serialize;
use thiserror::Error;

use crate::network::{NetworkError, NodeId, RoadNetwork};
use crate::objectives::{evaluate, ObjectiveError, ObjectiveSpec, Path};
use crate::scenario::ScenarioSet;

pub use bounds::{lower_bound_weights, BoundWeights};
pub use yen::{yen_next_path, YenPaths};

pub const DEFAULT_K_MAX: usize = 10_000;

// slack for comparing bounds against values computed along a different
// floating-point route
const BOUND_SLACK: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum SolveError {
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error("no path from {0} to {1}")]
    NoPath(NodeId, NodeId),
    #[error("origin and destination are both {0}")]
    SameEndpoints(NodeId),
    #[error("scenario set covers {got} links, network has {expected}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("bound invariant violated: {0}")]
    Invariant(String),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExploredPath {
    pub path: Path,
    pub bound: f64,
    /// `None` for the last path generated, which is never evaluated unless
    /// the enumeration ran out.
    pub value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveResult {
    pub path: Path,
    pub value: f64,
    /// Number of paths generated by the k-shortest path enumeration.
    pub k_explored: usize,
    /// Incumbent value after each evaluation; non-increasing.
    pub tau_history: Vec<f64>,
    /// False when the search stopped at `k_max` before proving optimality.
    pub optimal: bool,
    pub explored: Vec<ExploredPath>,
}

fn check_bound(bound: f64, value: f64, path: &Path) -> Result<(), SolveError> {
    if bound > value + BOUND_SLACK * value.abs().max(1.0) {
        return Err(SolveError::Invariant(format!("g = {bound} exceeds f = {value} on path {:?}", path.nodes)));
    }
    Ok(())
}

pub fn hall_solve(
    net: &RoadNetwork,
    set: &ScenarioSet,
    spec: &ObjectiveSpec,
    o: NodeId,
    d: NodeId,
    k_max: usize,
) -> Result<SolveResult, SolveError> {
    spec.validate()?;
    if set.n_links() != net.n_links() {
        return Err(SolveError::ShapeMismatch { expected: net.n_links(), got: set.n_links() });
    }
    if o == d {
        net.node_index(o)?;
        return Err(SolveError::SameEndpoints(o));
    }
    let k_max = k_max.max(1);
    let weights = lower_bound_weights(set, spec, net);
    let mut paths = YenPaths::new(net, &weights.per_link, o, d)?;

    let (first, first_w) = paths.next().ok_or(SolveError::NoPath(o, d))?;
    let mut explored = vec![ExploredPath { bound: weights.path_bound(first_w, spec), path: first, value: None }];
    let mut tau = f64::INFINITY;
    let mut best = 0usize;
    let mut tau_history = Vec::new();

    loop {
        let prev = explored.len() - 1;
        let value = evaluate(net, &explored[prev].path, set, spec)?;
        check_bound(explored[prev].bound, value, &explored[prev].path)?;
        explored[prev].value = Some(value);
        if value < tau {
            tau = value;
            best = prev;
        }
        tau_history.push(tau);

        let next = if explored.len() < k_max { paths.next() } else { None };
        let capped = next.is_none() && explored.len() >= k_max;
        let Some((path, w)) = next else {
            // enumeration exhausted (every path evaluated) or cap reached
            return Ok(SolveResult {
                path: explored[best].path.clone(),
                value: tau,
                k_explored: explored.len(),
                tau_history,
                optimal: !capped,
                explored,
            });
        };
        let bound = weights.path_bound(w, spec);
        if bound < explored[prev].bound {
            return Err(SolveError::Invariant(format!(
                "bounds decreased from {} to {bound}",
                explored[prev].bound
            )));
        }
        explored.push(ExploredPath { path, bound, value: None });
        if tau < bound {
            return Ok(SolveResult {
                path: explored[best].path.clone(),
                value: tau,
                k_explored: explored.len(),
                tau_history,
                optimal: true,
                explored,
            });
        }
    }
}
