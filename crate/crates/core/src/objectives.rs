//! Time-dependent path traversal and the six path objectives.
//!
//! Speeds are piecewise constant over the periods of a [`TimeGrid`]: inside a
//! period a vehicle on a link moves at that link's period speed, and the
//! distance is split at period boundaries. Before the first period the first
//! speed applies and after the last period the last speed holds.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::network::{NodeId, RoadNetwork};
use crate::panel::TimeGrid;
use crate::scenario::{Scenario, ScenarioSet};

/// F1 risk-aversion weight commonly used for commuters.
pub const DEFAULT_THETA: f64 = 1.27;

#[derive(Debug, Error, PartialEq)]
pub enum ObjectiveError {
    #[error("invalid objective specification: {0}")]
    InvalidSpec(String),
    #[error("invalid path: {0}")]
    InvalidPath(String),
}

/// A loopless chain of links, stored as link positions in the network.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct Path {
    pub nodes: Vec<NodeId>,
    pub links: Vec<usize>,
}

impl Path {
    pub fn from_links(net: &RoadNetwork, links: Vec<usize>) -> Result<Self, ObjectiveError> {
        let Some(&first) = links.first() else {
            return Err(ObjectiveError::InvalidPath("empty path".into()));
        };
        let mut nodes = vec![net.links()[first].from];
        for (i, &p) in links.iter().enumerate() {
            let link = net.links().get(p).ok_or_else(|| ObjectiveError::InvalidPath(format!("no link at {p}")))?;
            if link.from != *nodes.last().expect("non-empty") {
                return Err(ObjectiveError::InvalidPath(format!("link {} does not continue the path at step {i}", link.link_id)));
            }
            if nodes.contains(&link.to) {
                return Err(ObjectiveError::InvalidPath(format!("node {} repeated", link.to)));
            }
            nodes.push(link.to);
        }
        Ok(Self { nodes, links })
    }

    pub fn origin(&self) -> NodeId {
        self.nodes[0]
    }

    pub fn destination(&self) -> NodeId {
        *self.nodes.last().expect("paths have at least two nodes")
    }

    pub fn length_km(&self, net: &RoadNetwork) -> f64 {
        self.links.iter().map(|&p| net.links()[p].length_km).sum()
    }

    pub fn link_ids(&self, net: &RoadNetwork) -> Vec<i64> {
        self.links.iter().map(|&p| net.links()[p].link_id).collect()
    }
}

/// Emission rate polynomial in speed: `K + a v + b v² + c v³ + d/v + e/v² + f/v³` (g/km).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeetParams {
    pub k: f64,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub e: f64,
    pub f: f64,
}

impl MeetParams {
    /// Goods vehicle of 3.5–7.5 t gross weight.
    pub const GOODS_3_5_TO_7_5_T: MeetParams =
        MeetParams { k: 110.0, a: 0.0, b: 0.0, c: 0.000375, d: 8702.0, e: 0.0, f: 0.0 };

    pub fn rate(&self, v_kmh: f64) -> f64 {
        let v = v_kmh;
        self.k + self.a * v + self.b * v * v + self.c * v * v * v + self.d / v + self.e / (v * v) + self.f / (v * v * v)
    }
}

impl Default for MeetParams {
    fn default() -> Self {
        Self::GOODS_3_5_TO_7_5_T
    }
}

pub fn meet_rate(v_kmh: f64, params: &MeetParams) -> f64 {
    params.rate(v_kmh)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ObjectiveKind {
    F1,
    F2,
    F3,
    F4,
    F5,
    F6,
}

impl fmt::Display for ObjectiveKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", format!("{self:?}").to_lowercase())
    }
}

impl FromStr for ObjectiveKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "f1" => Self::F1,
            "f2" => Self::F2,
            "f3" => Self::F3,
            "f4" => Self::F4,
            "f5" => Self::F5,
            "f6" => Self::F6,
            _ => return Err(format!("unknown objective `{s}` (expected f1..f6)")),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Objective {
    /// F1: mean plus `theta` population standard deviations of travel time.
    MeanStd { theta: f64 },
    /// F2: expected travel time.
    ExpectedTime,
    /// F3: expected emission in kilograms.
    ExpectedEmission { meet: MeetParams },
    /// F4: expected lateness past `due_s`.
    Tardiness { due_s: f64 },
    /// F5: expected lateness past `due_s` plus earliness before `earliest_s`.
    TardinessEarliness { earliest_s: f64, due_s: f64 },
    /// F6: smallest scenario travel time whose cumulative probability reaches `alpha`.
    Budget { alpha: f64 },
}

impl Objective {
    pub fn kind(&self) -> ObjectiveKind {
        match self {
            Objective::MeanStd { .. } => ObjectiveKind::F1,
            Objective::ExpectedTime => ObjectiveKind::F2,
            Objective::ExpectedEmission { .. } => ObjectiveKind::F3,
            Objective::Tardiness { .. } => ObjectiveKind::F4,
            Objective::TardinessEarliness { .. } => ObjectiveKind::F5,
            Objective::Budget { .. } => ObjectiveKind::F6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveSpec {
    pub objective: Objective,
    /// Departure time, seconds from midnight.
    pub depart_s: f64,
}

impl ObjectiveSpec {
    pub fn new(objective: Objective, depart_s: f64) -> Result<Self, ObjectiveError> {
        let spec = Self { objective, depart_s };
        spec.validate()?;
        Ok(spec)
    }

    pub fn kind(&self) -> ObjectiveKind {
        self.objective.kind()
    }

    pub fn validate(&self) -> Result<(), ObjectiveError> {
        let bad = |m: String| Err(ObjectiveError::InvalidSpec(m));
        if !(self.depart_s >= 0.0) || !self.depart_s.is_finite() {
            return bad(format!("departure time {} must be a non-negative number", self.depart_s));
        }
        match self.objective {
            Objective::MeanStd { theta } if !(theta >= 0.0) || !theta.is_finite() => {
                bad(format!("theta must be >= 0, got {theta}"))
            }
            Objective::Tardiness { due_s } if !due_s.is_finite() => bad("due time must be finite".into()),
            Objective::TardinessEarliness { earliest_s, due_s } if !(earliest_s <= due_s) => {
                bad(format!("earliest time {earliest_s} s is after due time {due_s} s"))
            }
            Objective::Budget { alpha } if !(alpha > 0.0 && alpha <= 1.0) => {
                bad(format!("alpha must lie in (0, 1], got {alpha}"))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Segment {
    pub link: usize,
    pub period: usize,
    pub km: f64,
    pub speed_kmh: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraversalTrace {
    pub total_time_s: f64,
    pub segments: Vec<Segment>,
}

/// Drives a vehicle along `links` and reports every (link, period) piece to
/// `visit`. Returns the arrival time.
pub(crate) fn walk(
    net: &RoadNetwork,
    links: &[usize],
    scenario: Scenario<'_>,
    grid: &TimeGrid,
    depart_s: f64,
    mut visit: impl FnMut(Segment),
) -> f64 {
    let mut t = depart_s;
    let mut period = grid.period_at(t);
    for &link in links {
        let mut remaining = net.links()[link].length_km;
        loop {
            let v = scenario.speed(link, period);
            let end = grid.period_end(period);
            let needed = remaining / v * 3600.0;
            if t + needed <= end {
                t += needed;
                visit(Segment { link, period, km: remaining, speed_kmh: v });
                break;
            }
            let km = v * (end - t) / 3600.0;
            if km >= remaining {
                t = end;
                visit(Segment { link, period, km: remaining, speed_kmh: v });
                break;
            }
            visit(Segment { link, period, km, speed_kmh: v });
            remaining -= km;
            t = end;
            period += 1;
        }
    }
    t
}

pub fn traverse(net: &RoadNetwork, path: &Path, scenario: Scenario<'_>, grid: &TimeGrid, depart_s: f64) -> TraversalTrace {
    let mut segments = Vec::new();
    let arrival = walk(net, &path.links, scenario, grid, depart_s, |s| segments.push(s));
    TraversalTrace { total_time_s: arrival - depart_s, segments }
}

/// Per-scenario contribution: travel time (F1, F2, F6), emission in kg (F3),
/// tardiness (F4) or tardiness plus earliness (F5).
pub fn evaluate_all_scenarios(net: &RoadNetwork, path: &Path, set: &ScenarioSet, spec: &ObjectiveSpec) -> Vec<f64> {
    let grid = set.grid();
    let dp = spec.depart_s;
    set.scenarios()
        .map(|sc| match spec.objective {
            Objective::ExpectedEmission { meet } => {
                let mut grams = 0.0;
                walk(net, &path.links, sc, &grid, dp, |s| grams += meet.rate(s.speed_kmh) * s.km);
                grams / 1000.0
            }
            _ => {
                let time = walk(net, &path.links, sc, &grid, dp, |_| {}) - dp;
                match spec.objective {
                    Objective::Tardiness { due_s } => (dp + time - due_s).max(0.0),
                    Objective::TardinessEarliness { earliest_s, due_s } => {
                        (dp + time - due_s).max(0.0) + (earliest_s - time - dp).max(0.0)
                    }
                    _ => time,
                }
            }
        })
        .collect()
}

/// Objective value from per-scenario contributions.
pub fn aggregate(values: &[f64], probabilities: &[f64], objective: &Objective) -> f64 {
    let mean: f64 = values.iter().zip(probabilities).map(|(x, p)| p * x).sum();
    match *objective {
        Objective::MeanStd { theta } => {
            let var: f64 = values.iter().zip(probabilities).map(|(x, p)| p * (x - mean) * (x - mean)).sum();
            mean + theta * var.sqrt()
        }
        Objective::Budget { alpha } => {
            let mut order: Vec<usize> = (0..values.len()).collect();
            order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
            let mut cum = 0.0;
            for &s in &order {
                cum += probabilities[s];
                // tolerance absorbs rounding in sums like 5 × 0.2
                if cum >= alpha - 1e-12 {
                    return values[s];
                }
            }
            values[*order.last().expect("non-empty set")]
        }
        _ => mean,
    }
}

pub fn evaluate(net: &RoadNetwork, path: &Path, set: &ScenarioSet, spec: &ObjectiveSpec) -> Result<f64, ObjectiveError> {
    spec.validate()?;
    let values = evaluate_all_scenarios(net, path, set, spec);
    Ok(aggregate(&values, set.probabilities(), &spec.objective))
}

/// Parses a clock time as decimal hours (`8.88`) or `HH:MM[:SS]` into seconds
/// from midnight, rounded to the microsecond.
pub fn parse_clock(s: &str) -> Result<f64, String> {
    let s = s.trim();
    let secs = if s.contains(':') {
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() > 3 {
            return Err(format!("bad clock time `{s}`"));
        }
        let mut total = 0.0;
        for (i, part) in parts.iter().enumerate() {
            let x: f64 = part.parse().map_err(|_| format!("bad clock time `{s}`"))?;
            total += x * [3600.0, 60.0, 1.0][i];
        }
        total
    } else {
        let h: f64 = s.parse().map_err(|_| format!("bad clock time `{s}`"))?;
        h * 3600.0
    };
    if !secs.is_finite() || secs < 0.0 {
        return Err(format!("bad clock time `{s}`"));
    }
    Ok((secs * 1e6).round() / 1e6)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::Method;

    fn one_link(km: f64) -> RoadNetwork {
        RoadNetwork::from_reader(format!("link_id,from_node,to_node,length_km\n1,0,1,{km}\n").as_bytes()).unwrap()
    }

    fn set_from(n_links: usize, periods: usize, speeds: Vec<f64>) -> ScenarioSet {
        ScenarioSet::uniform(Method::Full, 0, String::new(), n_links, TimeGrid::new(0.0, 5.0, periods), speeds).unwrap()
    }

    fn times_set(times: &[f64]) -> (RoadNetwork, Path, ScenarioSet) {
        // 1 km link, speed chosen so travel time equals each entry
        let net = one_link(1.0);
        let path = Path::from_links(&net, vec![0]).unwrap();
        let speeds = times.iter().map(|t| 3600.0 / t).collect();
        (net, path, set_from(1, 1, speeds))
    }

    #[test]
    fn single_period_link() {
        let net = one_link(5.0);
        let path = Path::from_links(&net, vec![0]).unwrap();
        let set = set_from(1, 1, vec![60.0]);
        let tr = traverse(&net, &path, set.scenario(0), &set.grid(), 0.0);
        assert!((tr.total_time_s - 300.0).abs() < 1e-9);
    }

    #[test]
    fn link_spanning_two_periods() {
        let net = one_link(8.0);
        let path = Path::from_links(&net, vec![0]).unwrap();
        let set = set_from(1, 2, vec![60.0, 30.0]);
        let tr = traverse(&net, &path, set.scenario(0), &set.grid(), 0.0);
        assert!((tr.total_time_s - 660.0).abs() < 1e-9);
        assert_eq!(tr.segments.len(), 2);
        assert!((tr.segments[0].km - 5.0).abs() < 1e-12);
        assert!((tr.segments[1].km - 3.0).abs() < 1e-12);
        let total: f64 = tr.segments.iter().map(|s| s.km).sum();
        assert!((total - 8.0).abs() < 1e-12);
    }

    #[test]
    fn last_period_speed_persists() {
        let net = one_link(100.0);
        let path = Path::from_links(&net, vec![0]).unwrap();
        let set = set_from(1, 2, vec![60.0, 50.0]);
        // 5 km in period 0, 95 km at 50 km/h afterwards
        let tr = traverse(&net, &path, set.scenario(0), &set.grid(), 0.0);
        assert!((tr.total_time_s - (300.0 + 95.0 / 50.0 * 3600.0)).abs() < 1e-6);
    }

    #[test]
    fn meet_goods_vehicle_parameters() {
        let r = meet_rate(60.0, &MeetParams::GOODS_3_5_TO_7_5_T);
        assert!((r - 336.03).abs() < 0.01, "{r}");
        let k_only = MeetParams { k: 42.0, a: 0.0, b: 0.0, c: 0.0, d: 0.0, e: 0.0, f: 0.0 };
        assert_eq!(meet_rate(13.0, &k_only), 42.0);
    }

    #[test]
    fn meet_minimum_matches_grid_search() {
        let p = MeetParams::GOODS_3_5_TO_7_5_T;
        // 3 c v^2 = d / v^2  =>  v = (d / 3c)^(1/4)
        let stationary = (p.d / (3.0 * p.c)).powf(0.25);
        let (mut best_v, mut best) = (0.0, f64::INFINITY);
        let mut v = 0.1;
        while v < 300.0 {
            let r = p.rate(v);
            if r < best {
                best = r;
                best_v = v;
            }
            v += 0.1;
        }
        assert!((best_v - stationary).abs() <= 0.1, "{best_v} vs {stationary}");
    }

    #[test]
    fn f6_ranking_rule() {
        let (net, path, set) = times_set(&[300.0, 100.0, 500.0, 200.0, 400.0]);
        let f6 = |alpha| {
            let v = evaluate(&net, &path, &set, &ObjectiveSpec::new(Objective::Budget { alpha }, 0.0).unwrap()).unwrap();
            (v * 1e6).round() / 1e6
        };
        assert_eq!(f6(0.9), 500.0);
        assert_eq!(f6(0.2), 100.0);
        assert_eq!(f6(1.0), 500.0);
        assert_eq!(f6(0.41), 300.0);
    }

    #[test]
    fn f1_with_zero_theta_is_f2() {
        let (net, path, set) = times_set(&[120.0, 180.0, 240.0]);
        let f1 = evaluate(&net, &path, &set, &ObjectiveSpec::new(Objective::MeanStd { theta: 0.0 }, 0.0).unwrap()).unwrap();
        let f2 = evaluate(&net, &path, &set, &ObjectiveSpec::new(Objective::ExpectedTime, 0.0).unwrap()).unwrap();
        assert_eq!(f1, f2);
        let f1 = evaluate(&net, &path, &set, &ObjectiveSpec::new(Objective::MeanStd { theta: 1.0 }, 0.0).unwrap()).unwrap();
        // population std of (120, 180, 240) is sqrt(2400)
        assert!((f1 - (180.0 + 2400f64.sqrt())).abs() < 1e-6);
    }

    #[test]
    fn tardiness_and_earliness() {
        let (net, path, set) = times_set(&[100.0, 300.0]);
        let spec = |o| ObjectiveSpec::new(o, 1000.0).unwrap();
        let f4 = evaluate(&net, &path, &set, &spec(Objective::Tardiness { due_s: 1200.0 })).unwrap();
        assert!((f4 - 50.0).abs() < 1e-9);
        let late_due = evaluate(&net, &path, &set, &spec(Objective::Tardiness { due_s: 5000.0 })).unwrap();
        assert_eq!(late_due, 0.0);
        let f5 = evaluate(&net, &path, &set, &spec(Objective::TardinessEarliness { earliest_s: 1150.0, due_s: 1200.0 })).unwrap();
        // scenario 1: early by 50; scenario 2: late by 100
        assert!((f5 - 75.0).abs() < 1e-9);
    }

    #[test]
    fn spec_validation() {
        assert!(ObjectiveSpec::new(Objective::MeanStd { theta: -1.0 }, 0.0).is_err());
        assert!(ObjectiveSpec::new(Objective::MeanStd { theta: DEFAULT_THETA }, 0.0).is_ok());
        assert!(ObjectiveSpec::new(Objective::Budget { alpha: 0.0 }, 0.0).is_err());
        assert!(ObjectiveSpec::new(Objective::TardinessEarliness { earliest_s: 10.0, due_s: 5.0 }, 0.0).is_err());
    }

    #[test]
    fn clock_parsing() {
        assert_eq!(parse_clock("8.88").unwrap(), 31_968.0);
        assert_eq!(parse_clock("08:52:48").unwrap(), 31_968.0);
        assert_eq!(parse_clock("8:00").unwrap(), 28_800.0);
        assert!(parse_clock("x").is_err());
    }

    #[test]
    fn path_validation() {
        let net = RoadNetwork::from_reader(
            "link_id,from_node,to_node,length_km\n1,0,1,1\n2,1,0,1\n3,1,2,1\n".as_bytes(),
        )
        .unwrap();
        assert!(Path::from_links(&net, vec![0, 2]).is_ok());
        assert!(Path::from_links(&net, vec![0, 1]).is_err());
        assert!(Path::from_links(&net, vec![2, 0]).is_err());
    }
}
