//! Static per-link weights whose path sums never exceed a path's objective.

use serde::Serialize;

use crate::network::RoadNetwork;
use crate::objectives::{Objective, ObjectiveKind, ObjectiveSpec};
use crate::scenario::ScenarioSet;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundWeights {
    pub kind: ObjectiveKind,
    /// Seconds for the travel-time objectives, grams for F3.
    pub per_link: Vec<f64>,
}

/// Travel-time objectives use `d / v_max` with `v_max` taken over every period
/// and scenario; F3 uses `d` times the smallest emission rate seen on the link.
pub fn lower_bound_weights(set: &ScenarioSet, spec: &ObjectiveSpec, net: &RoadNetwork) -> BoundWeights {
    let per_link = net
        .links()
        .iter()
        .enumerate()
        .map(|(l, link)| {
            let speeds = set.scenarios().flat_map(|sc| (0..sc.n_periods()).map(move |p| sc.speed(l, p)));
            match spec.objective {
                Objective::ExpectedEmission { meet } => {
                    link.length_km * speeds.map(|v| meet.rate(v)).fold(f64::INFINITY, f64::min)
                }
                _ => link.length_km / speeds.fold(0.0, f64::max) * 3600.0,
            }
        })
        .collect();
    BoundWeights { kind: spec.kind(), per_link }
}

impl BoundWeights {
    /// Lower bound `g(P)` of a path's objective from its summed weight.
    pub fn path_bound(&self, weight_sum: f64, spec: &ObjectiveSpec) -> f64 {
        match spec.objective {
            Objective::ExpectedEmission { .. } => weight_sum / 1000.0,
            // earliness can always be avoided by slowing down, so only lateness is bounded
            Objective::Tardiness { due_s } | Objective::TardinessEarliness { due_s, .. } => {
                (spec.depart_s + weight_sum - due_s).max(0.0)
            }
            _ => weight_sum,
        }
    }
}
