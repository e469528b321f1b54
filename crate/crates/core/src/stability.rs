//! In-sample stability of optimal paths across scenario sets.
//!
//! For a nominal size `S`, `2m + 1` sets of sizes `S - m ..= S + m` are built
//! and solved. Every solution is then evaluated on every set, giving a square
//! matrix whose row `i` holds the values of solution `i`. From it:
//!
//! * RD  = max over rows of `(row max - row min) / row max`, in percent;
//! * VAR = max over rows of the population variance of the row;
//! * ORD = mean over solutions of their relative regret on the full empirical
//!   set against the full-set optimum, in percent.

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::network::{NodeId, RoadNetwork};
use crate::objectives::{evaluate, ObjectiveError, ObjectiveSpec, Path};
use crate::panel::SpeedPanel;
use crate::scenario::{Method, ScenarioSet};
use crate::scengen::{full_set, generate_sg, sample_rs, ScenGenError};
use crate::solver::{hall_solve, SolveError, SolveResult, DEFAULT_K_MAX};

pub const DEFAULT_M: usize = 4;
pub const DEFAULT_RS_RUNS: usize = 10;

#[derive(Debug, Error)]
pub enum StabilityError {
    #[error("sizes {lo}..={hi} are not available (need S - m >= 1 and, for RS, S + m <= {days})")]
    SizeOutOfRange { lo: i64, hi: i64, days: usize },
    #[error("objective is zero on row {row}; relative difference undefined")]
    DegenerateObjective { row: usize },
    #[error("only rs and sg sets can be used in a stability run")]
    UnsupportedMethod,
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error(transparent)]
    ScenGen(#[from] ScenGenError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
}

/// SplitMix64 finalizer over `(seed, value)`; decorrelates derived seeds.
pub fn derive_seed(seed: u64, value: u64) -> u64 {
    let mut z = seed ^ value.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0x6A09_E667_F3BC_C909);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const RS_RUN_TAG: u64 = 0x5253_5f52_554e_0000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OdPair {
    pub origin: NodeId,
    pub dest: NodeId,
}

impl OdPair {
    pub fn new(origin: u32, dest: u32) -> Self {
        Self { origin: NodeId(origin), dest: NodeId(dest) }
    }
}

impl std::fmt::Display for OdPair {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({} {})", self.origin, self.dest)
    }
}

#[derive(Debug, Clone)]
pub struct StabilityRun {
    pub method: Method,
    pub size: usize,
    pub m: usize,
    pub sets: Vec<ScenarioSet>,
    pub solutions: Vec<SolveResult>,
    /// `cross_values[i][j]`: solution `i` evaluated on set `j`.
    pub cross_values: Vec<Vec<f64>>,
}

impl StabilityRun {
    pub fn paths(&self) -> impl Iterator<Item = &Path> {
        self.solutions.iter().map(|s| &s.path)
    }

    /// True when every solve proved optimality (no `k_max` cap hit).
    pub fn all_optimal(&self) -> bool {
        self.solutions.iter().all(|s| s.optimal)
    }
}

fn set_sizes(size: usize, m: usize, method: Method, days: usize) -> Result<std::ops::RangeInclusive<usize>, StabilityError> {
    let (lo, hi) = (size as i64 - m as i64, (size + m) as i64);
    if lo < 1 || (method == Method::Rs && hi as usize > days) {
        return Err(StabilityError::SizeOutOfRange { lo, hi, days });
    }
    Ok(lo as usize..=hi as usize)
}

/// Builds the `2m + 1` sets for `method` and runs the cross evaluation.
#[allow(clippy::too_many_arguments)]
pub fn run_stability(
    panel: &SpeedPanel,
    net: &RoadNetwork,
    method: Method,
    size: usize,
    m: usize,
    spec: &ObjectiveSpec,
    od: OdPair,
    seed: u64,
    k_max: usize,
) -> Result<StabilityRun, StabilityError> {
    let sizes: Vec<usize> = set_sizes(size, m, method, panel.n_days())?.collect();
    let sets = sizes
        .par_iter()
        .map(|&s| {
            let set_seed = derive_seed(seed, s as u64);
            match method {
                Method::Sg => generate_sg(panel, s, set_seed),
                Method::Rs => sample_rs(panel, s, set_seed),
                Method::Full => Err(ScenGenError::EmptySet),
            }
            .map_err(StabilityError::from)
        })
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| if method == Method::Full { StabilityError::UnsupportedMethod } else { e })?;
    run_with_sets(net, method, size, m, sets, spec, od, k_max)
}

/// Cross evaluation over caller-provided sets (one per size `S - m ..= S + m`).
#[allow(clippy::too_many_arguments)]
pub fn run_with_sets(
    net: &RoadNetwork,
    method: Method,
    size: usize,
    m: usize,
    sets: Vec<ScenarioSet>,
    spec: &ObjectiveSpec,
    od: OdPair,
    k_max: usize,
) -> Result<StabilityRun, StabilityError> {
    assert_eq!(sets.len(), 2 * m + 1, "one set per size");
    let solutions = sets
        .par_iter()
        .map(|set| hall_solve(net, set, spec, od.origin, od.dest, k_max))
        .collect::<Result<Vec<_>, _>>()?;
    let cross_values = solutions
        .par_iter()
        .enumerate()
        .map(|(i, sol)| {
            sets.iter()
                .enumerate()
                .map(|(j, set)| if i == j { Ok(sol.value) } else { evaluate(net, &sol.path, set, spec) })
                .collect::<Result<Vec<_>, _>>()
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(StabilityRun { method, size, m, sets, solutions, cross_values })
}

fn row_extremes(row: &[f64]) -> (f64, f64) {
    row.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)))
}

/// Relative difference per row, in percent; `None` when the row maximum is 0.
pub fn rd_rows(run: &StabilityRun) -> Vec<Option<f64>> {
    run.cross_values
        .iter()
        .map(|row| {
            let (lo, hi) = row_extremes(row);
            (hi != 0.0).then(|| (hi - lo) / hi * 100.0)
        })
        .collect()
}

pub fn rd(run: &StabilityRun) -> Result<f64, StabilityError> {
    rd_rows(run).into_iter().enumerate().try_fold(0.0f64, |acc, (row, r)| {
        r.map(|r| acc.max(r)).ok_or(StabilityError::DegenerateObjective { row })
    })
}

pub fn population_variance(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    values.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n
}

pub fn var(run: &StabilityRun) -> f64 {
    run.cross_values.iter().map(|row| population_variance(row)).fold(0.0, f64::max)
}

/// The full-set optimum that ORD compares against.
#[derive(Debug, Clone)]
pub struct FullReference {
    pub set: ScenarioSet,
    pub solution: SolveResult,
}

impl FullReference {
    pub fn solve(panel: &SpeedPanel, net: &RoadNetwork, spec: &ObjectiveSpec, od: OdPair, k_max: usize) -> Result<Self, StabilityError> {
        let set = full_set(panel);
        let solution = hall_solve(net, &set, spec, od.origin, od.dest, k_max)?;
        Ok(Self { set, solution })
    }
}

pub fn ord_with(run: &StabilityRun, reference: &FullReference, net: &RoadNetwork, spec: &ObjectiveSpec) -> Result<f64, StabilityError> {
    let best = reference.solution.value;
    if best == 0.0 {
        return Err(StabilityError::DegenerateObjective { row: 0 });
    }
    let mut total = 0.0;
    for path in run.paths() {
        let value = if *path == reference.solution.path { best } else { evaluate(net, path, &reference.set, spec)? };
        total += (value - best) / best;
    }
    Ok(total / run.solutions.len() as f64 * 100.0)
}

pub fn ord(run: &StabilityRun, panel: &SpeedPanel, net: &RoadNetwork, spec: &ObjectiveSpec, od: OdPair, k_max: usize) -> Result<f64, StabilityError> {
    let reference = FullReference::solve(panel, net, spec, od, k_max)?;
    ord_with(run, &reference, net, spec)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MinMeanMax {
    pub min: f64,
    pub mean: f64,
    pub max: f64,
}

impl MinMeanMax {
    pub fn of(values: &[f64]) -> Self {
        let (min, max) = row_extremes(values);
        Self { min, mean: values.iter().sum::<f64>() / values.len() as f64, max }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunMeasures {
    pub rd: Option<f64>,
    pub var: f64,
    pub ord: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RsSummary {
    pub runs: Vec<RunMeasures>,
    /// `None` when some run had an undefined RD.
    pub rd: Option<MinMeanMax>,
    pub var: MinMeanMax,
    pub ord: Option<MinMeanMax>,
}

fn measures(run: &StabilityRun, reference: Option<&FullReference>, net: &RoadNetwork, spec: &ObjectiveSpec) -> Result<RunMeasures, StabilityError> {
    let rd = match rd(run) {
        Ok(v) => Some(v),
        Err(StabilityError::DegenerateObjective { .. }) => None,
        Err(e) => return Err(e),
    };
    let ord = match reference.map(|r| ord_with(run, r, net, spec)) {
        Some(Ok(v)) => Some(v),
        Some(Err(StabilityError::DegenerateObjective { .. })) | None => None,
        Some(Err(e)) => return Err(e),
    };
    Ok(RunMeasures { rd, var: var(run), ord })
}

fn all_some(values: impl Iterator<Item = Option<f64>>) -> Option<MinMeanMax> {
    values.collect::<Option<Vec<f64>>>().map(|v| MinMeanMax::of(&v))
}

pub fn rs_run_seed(seed: u64, run: usize) -> u64 {
    derive_seed(seed ^ RS_RUN_TAG, run as u64)
}

/// `runs` independent RS stability runs with seeds derived from `seed`.
#[allow(clippy::too_many_arguments)]
pub fn rs_repeated(
    panel: &SpeedPanel,
    net: &RoadNetwork,
    size: usize,
    m: usize,
    spec: &ObjectiveSpec,
    od: OdPair,
    runs: usize,
    seed: u64,
    reference: Option<&FullReference>,
    k_max: usize,
) -> Result<RsSummary, StabilityError> {
    assert!(runs >= 1, "at least one run");
    let runs = (0..runs)
        .into_par_iter()
        .map(|r| {
            let run = run_stability(panel, net, Method::Rs, size, m, spec, od, rs_run_seed(seed, r), k_max)?;
            measures(&run, reference, net, spec)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(RsSummary {
        rd: all_some(runs.iter().map(|r| r.rd)),
        var: MinMeanMax::of(&runs.iter().map(|r| r.var).collect::<Vec<_>>()),
        ord: all_some(runs.iter().map(|r| r.ord)),
        runs,
    })
}

/// One row of a stability sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityReport {
    pub method: Method,
    pub size: usize,
    pub m: usize,
    /// For RS these are the means over runs.
    pub rd: Option<f64>,
    pub var: f64,
    pub ord: Option<f64>,
    pub rs: Option<RsSummary>,
    pub all_optimal: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct SweepConfig {
    pub m: usize,
    pub runs: usize,
    pub seed: u64,
    pub k_max: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self { m: DEFAULT_M, runs: DEFAULT_RS_RUNS, seed: 0, k_max: DEFAULT_K_MAX }
    }
}

/// Stability measures for one (method, S) cell.
#[allow(clippy::too_many_arguments)]
pub fn report(
    panel: &SpeedPanel,
    net: &RoadNetwork,
    method: Method,
    size: usize,
    spec: &ObjectiveSpec,
    od: OdPair,
    cfg: &SweepConfig,
    reference: Option<&FullReference>,
) -> Result<StabilityReport, StabilityError> {
    match method {
        Method::Sg => {
            let run = run_stability(panel, net, method, size, cfg.m, spec, od, cfg.seed, cfg.k_max)?;
            let m = measures(&run, reference, net, spec)?;
            Ok(StabilityReport { method, size, m: cfg.m, rd: m.rd, var: m.var, ord: m.ord, rs: None, all_optimal: run.all_optimal() })
        }
        Method::Rs => {
            let rs = rs_repeated(panel, net, size, cfg.m, spec, od, cfg.runs, cfg.seed, reference, cfg.k_max)?;
            Ok(StabilityReport {
                method,
                size,
                m: cfg.m,
                rd: rs.rd.map(|x| x.mean),
                var: rs.var.mean,
                ord: rs.ord.map(|x| x.mean),
                rs: Some(rs),
                all_optimal: true,
            })
        }
        Method::Full => Err(StabilityError::UnsupportedMethod),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum RequiredScenarios {
    Found(usize),
    /// No grid size met the goal; carries the largest size tried.
    NotReached(usize),
}

/// Smallest grid size whose RD is at most `goal_rd`, scanning the grid in order.
pub fn first_meeting_goal<E>(
    grid: &[usize],
    goal_rd: f64,
    mut rd_at: impl FnMut(usize) -> Result<Option<f64>, E>,
) -> Result<RequiredScenarios, E> {
    for &s in grid {
        if rd_at(s)?.is_some_and(|rd| rd <= goal_rd) {
            return Ok(RequiredScenarios::Found(s));
        }
    }
    Ok(RequiredScenarios::NotReached(grid.last().copied().unwrap_or(0)))
}

/// `10, 15, 20, ...` up to `limit`.
pub fn default_grid(limit: usize) -> Vec<usize> {
    (10..=limit).step_by(5).collect()
}

/// Smallest S on `grid` (default `10, 15, ...` up to `E - m`) meeting the RD
/// goal; RS uses the mean RD over `cfg.runs` runs.
#[allow(clippy::too_many_arguments)]
pub fn required_scenarios(
    panel: &SpeedPanel,
    net: &RoadNetwork,
    method: Method,
    spec: &ObjectiveSpec,
    od: OdPair,
    goal_rd: f64,
    grid: Option<&[usize]>,
    cfg: &SweepConfig,
) -> Result<RequiredScenarios, StabilityError> {
    let default = default_grid(panel.n_days().saturating_sub(cfg.m));
    let grid = grid.unwrap_or(&default);
    first_meeting_goal(grid, goal_rd, |s| Ok(report(panel, net, method, s, spec, od, cfg, None)?.rd))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objectives::Objective;
    use crate::panel::TimeGrid;

    fn run_from_matrix(cross: Vec<Vec<f64>>) -> StabilityRun {
        StabilityRun { method: Method::Sg, size: 0, m: 0, sets: Vec::new(), solutions: Vec::new(), cross_values: cross }
    }

    #[test]
    fn rd_and_var_by_hand() {
        let run = run_from_matrix(vec![vec![100.0, 105.0, 110.0], vec![7.0, 7.0, 7.0]]);
        assert!((rd(&run).unwrap() - 9.090909090909092).abs() < 1e-9);
        let run = run_from_matrix(vec![vec![0.0, 0.0, 3.0]]);
        assert!((var(&run) - 2.0).abs() < 1e-12);
        let zero = run_from_matrix(vec![vec![0.0, 0.0]]);
        assert!(matches!(rd(&zero), Err(StabilityError::DegenerateObjective { row: 0 })));
    }

    #[test]
    fn measures_ignore_set_order() {
        let a = run_from_matrix(vec![vec![3.0, 4.0, 5.0], vec![9.0, 8.0, 6.0], vec![1.0, 1.5, 1.2]]);
        // permute rows and columns together
        let p = [2, 0, 1];
        let b = run_from_matrix(p.iter().map(|&i| p.iter().map(|&j| a.cross_values[i][j]).collect()).collect());
        assert_eq!(rd(&a).unwrap(), rd(&b).unwrap());
        assert_eq!(var(&a), var(&b));
    }

    #[test]
    fn seeds_are_distinct() {
        let seeds: std::collections::HashSet<u64> = (0..1000).map(|s| derive_seed(7, s)).collect();
        assert_eq!(seeds.len(), 1000);
    }

    #[test]
    fn grid_scan_matches_binary_search() {
        let grid = default_grid(100);
        for cut in 0..=grid.len() {
            // non-increasing RD that drops below 1 from index `cut` on
            let rd_of = |s: usize| {
                let i = grid.iter().position(|&g| g == s).unwrap();
                Some(if i >= cut { 0.5 / (i + 1) as f64 } else { 10.0 - i as f64 * 0.01 })
            };
            let scanned = first_meeting_goal::<()>(&grid, 1.0, |s| Ok(rd_of(s))).unwrap();
            let bs = grid.partition_point(|&s| rd_of(s).unwrap() > 1.0);
            let expected = if bs < grid.len() { RequiredScenarios::Found(grid[bs]) } else { RequiredScenarios::NotReached(100) };
            assert_eq!(scanned, expected);
        }
    }

    #[test]
    fn size_range_checks() {
        let grid = TimeGrid::new(0.0, 5.0, 1);
        let panel = SpeedPanel::new((0..5).collect(), 1, grid, vec![50.0, 60.0, 55.0, 52.0, 58.0]).unwrap();
        let net = RoadNetwork::from_reader("link_id,from_node,to_node,length_km\n1,0,1,1\n".as_bytes()).unwrap();
        let spec = ObjectiveSpec::new(Objective::ExpectedTime, 0.0).unwrap();
        let od = OdPair::new(0, 1);
        assert!(matches!(
            run_stability(&panel, &net, Method::Rs, 3, 3, &spec, od, 0, 10),
            Err(StabilityError::SizeOutOfRange { .. })
        ));
        assert!(matches!(
            run_stability(&panel, &net, Method::Rs, 4, 2, &spec, od, 0, 10),
            Err(StabilityError::SizeOutOfRange { .. })
        ));
        let run = run_stability(&panel, &net, Method::Sg, 5, 3, &spec, od, 0, 10).unwrap();
        assert_eq!(run.sets.iter().map(ScenarioSet::len).collect::<Vec<_>>(), vec![2, 3, 4, 5, 6, 7, 8]);
    }
}
