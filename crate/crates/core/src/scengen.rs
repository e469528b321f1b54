//! Scenario construction: random sampling of whole days (RS) and
//! mean-preserving, dependence-matching scenario generation (SG).
//!
//! SG works in two phases. Every variable's empirical distribution is cut into
//! `S` equal-probability strata and each stratum is represented by its
//! conditional mean, which keeps the scenario mean equal to the empirical mean.
//! A [`DependenceMatcher`] then decides which scenario receives which stratum of
//! every variable, so the rank structure across variables follows the data.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::panel::SpeedPanel;
use crate::scenario::{Method, ScenarioError, ScenarioSet};
use crate::speedstats::average_ranks;

/// Shrinkage added on top of the smallest value that makes the target PSD.
pub const TARGET_RIDGE: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum ScenGenError {
    #[error("cannot draw {requested} distinct days from {available}")]
    STooLarge { requested: usize, available: usize },
    #[error("scenario count must be at least 1")]
    EmptySet,
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
}

pub fn sample_rs(panel: &SpeedPanel, size: usize, seed: u64) -> Result<ScenarioSet, ScenGenError> {
    let days = panel.n_days();
    if size == 0 {
        return Err(ScenGenError::EmptySet);
    }
    if size > days {
        return Err(ScenGenError::STooLarge { requested: size, available: days });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = rand::seq::index::sample(&mut rng, days, size).into_vec();
    picked.sort_unstable();
    let speeds: Vec<f64> = picked.iter().flat_map(|&d| panel.day_slice(d).iter().copied()).collect();
    Ok(ScenarioSet::uniform(Method::Rs, seed, panel.panel_id(), panel.n_links(), panel.grid(), speeds)?)
}

pub fn full_set(panel: &SpeedPanel) -> ScenarioSet {
    ScenarioSet::full(panel)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StratifiedMarginal {
    /// Conditional mean of each stratum, non-decreasing.
    pub points: Vec<f64>,
    /// Smallest and largest sorted observation touched by each stratum.
    pub strata: Vec<(f64, f64)>,
}

/// Splits the empirical distribution of `values` into `size` equal-probability
/// strata. Observations straddling a stratum boundary contribute fractionally to
/// both sides, so `mean(points) == mean(values)` for any `size`, including
/// `size > values.len()`.
pub fn stratify_marginal(values: &[f64], size: usize) -> StratifiedMarginal {
    assert!(!values.is_empty() && size > 0, "need observations and at least one stratum");
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let e = sorted.len();
    // In units of 1/(e*size): observation i spans [i*size, (i+1)*size),
    // stratum k spans [k*e, (k+1)*e).
    let mut points = Vec::with_capacity(size);
    let mut strata = Vec::with_capacity(size);
    for k in 0..size {
        let (lo, hi) = (k * e, (k + 1) * e);
        let first = lo / size;
        let last = (hi - 1) / size;
        let mut acc = 0.0;
        for (i, &x) in sorted.iter().enumerate().take(last + 1).skip(first) {
            let overlap = hi.min((i + 1) * size) - lo.max(i * size);
            acc += overlap as f64 * x;
        }
        points.push(acc / e as f64);
        strata.push((sorted[first], sorted[last]));
    }
    StratifiedMarginal { points, strata }
}

/// Decides, for every variable, which scenario receives which stratum.
pub trait DependenceMatcher {
    /// Returns one permutation per variable: `order[v][k]` is the scenario that
    /// receives the `k`-th smallest stratified point of variable `v`.
    fn assign(&self, panel: &SpeedPanel, size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>>;
}

/// Rank-correlation matching in the spirit of Iman and Conover.
///
/// The target is the empirical Spearman matrix `C = AᵀA`, with `A` the
/// standardized day ranks (E × V), shrunk towards the identity by
/// [`TARGET_RIDGE`]. Scores are built as `Y = G A`, where every column of `G`
/// (S × E) is a random permutation of van der Waerden scores, so that the
/// expected covariance of `Y` is the target. When `S > V` the sample
/// correlation of `Y` is additionally corrected to match the target exactly
/// via Cholesky factors. Each variable's points are ordered by its score
/// column; exact score ties are broken by seeded random keys.
#[derive(Debug, Clone, Copy, Default)]
pub struct RankCorrelationMatcher;

impl RankCorrelationMatcher {
    /// Standardized ranks, column-major (one unit-norm vector of length E per
    /// variable); constant variables give `None`.
    fn rank_columns(panel: &SpeedPanel) -> Vec<Option<Vec<f64>>> {
        (0..panel.n_vars())
            .map(|v| {
                let r = average_ranks(&panel.series(v));
                let m = r.iter().sum::<f64>() / r.len() as f64;
                let ss: f64 = r.iter().map(|x| (x - m) * (x - m)).sum();
                (ss > 0.0).then(|| r.iter().map(|x| (x - m) / ss.sqrt()).collect())
            })
            .collect()
    }

    fn van_der_waerden(size: usize) -> Vec<f64> {
        let normal = Normal::standard();
        let raw: Vec<f64> = (1..=size).map(|i| normal.inverse_cdf(i as f64 / (size + 1) as f64)).collect();
        let var = raw.iter().map(|x| x * x).sum::<f64>() / size as f64;
        if var > 0.0 {
            raw.iter().map(|x| x / var.sqrt()).collect()
        } else {
            raw
        }
    }

    fn target(cols: &[Option<Vec<f64>>]) -> DMatrix<f64> {
        let v = cols.len();
        let lambda = TARGET_RIDGE;
        DMatrix::from_fn(v, v, |i, j| {
            let c = match (&cols[i], &cols[j]) {
                (Some(a), Some(b)) => a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>(),
                _ => f64::from(u8::from(i == j)),
            };
            (1.0 - lambda) * c + if i == j { lambda } else { 0.0 }
        })
    }

    /// `Y* = Y_std P⁻ᵀ Lᵀ` with `corr(Y) = P Pᵀ` and target `L Lᵀ`.
    fn correct(scores: &mut [Vec<f64>], cols: &[Option<Vec<f64>>]) {
        let size = scores.len();
        let nv = cols.len();
        let mut y = DMatrix::from_fn(size, nv, |s, v| scores[s][v]);
        for mut c in y.column_iter_mut() {
            let m = c.mean();
            c.add_scalar_mut(-m);
            let sd = (c.norm_squared() / size as f64).sqrt();
            if sd > 0.0 {
                c /= sd;
            }
        }
        let q = y.transpose() * &y / size as f64;
        let (Some(p), Some(l)) = (q.cholesky(), Self::target(cols).cholesky()) else {
            return;
        };
        // Solve P Z = Yᵀ, then Y*ᵀ = L Z.
        let z = p.l().solve_lower_triangular(&y.transpose()).expect("Cholesky factor is invertible");
        let corrected = l.l() * z;
        for (s, row) in scores.iter_mut().enumerate() {
            for (v, x) in row.iter_mut().enumerate() {
                *x = corrected[(v, s)];
            }
        }
    }
}

impl DependenceMatcher for RankCorrelationMatcher {
    fn assign(&self, panel: &SpeedPanel, size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
        let cols = Self::rank_columns(panel);
        let (nv, days) = (cols.len(), panel.n_days());
        let vdw = Self::van_der_waerden(size);
        let mut g = DMatrix::<f64>::zeros(size, days);
        for e in 0..days {
            let mut col = vdw.clone();
            col.shuffle(rng);
            g.set_column(e, &DVector::from_vec(col));
        }
        let a = DMatrix::from_fn(days, nv, |e, v| cols[v].as_ref().map_or(0.0, |c| c[e]));
        let y = g * a;
        let (w_data, w_id) = ((1.0 - TARGET_RIDGE).sqrt(), TARGET_RIDGE.sqrt());
        let mut scores: Vec<Vec<f64>> = (0..size)
            .map(|s| {
                (0..nv)
                    .map(|v| {
                        let noise: f64 = StandardNormal.sample(rng);
                        match cols[v] {
                            Some(_) => w_data * y[(s, v)] + w_id * noise,
                            None => noise,
                        }
                    })
                    .collect()
            })
            .collect();
        if size > nv + 1 {
            Self::correct(&mut scores, &cols);
        }
        let keys: Vec<Vec<u64>> = (0..size).map(|_| (0..nv).map(|_| rng.random()).collect()).collect();
        (0..nv)
            .map(|v| {
                let mut order: Vec<usize> = (0..size).collect();
                order.sort_by(|&a, &b| scores[a][v].total_cmp(&scores[b][v]).then(keys[a][v].cmp(&keys[b][v])));
                order
            })
            .collect()
    }
}

pub fn generate_sg(panel: &SpeedPanel, size: usize, seed: u64) -> Result<ScenarioSet, ScenGenError> {
    generate_sg_with(panel, size, seed, &RankCorrelationMatcher)
}

pub fn generate_sg_with(
    panel: &SpeedPanel,
    size: usize,
    seed: u64,
    matcher: &dyn DependenceMatcher,
) -> Result<ScenarioSet, ScenGenError> {
    if size == 0 {
        return Err(ScenGenError::EmptySet);
    }
    let nv = panel.n_vars();
    let marginals: Vec<StratifiedMarginal> = (0..nv).map(|v| stratify_marginal(&panel.series(v), size)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let order = matcher.assign(panel, size, &mut rng);
    let mut speeds = vec![0.0; size * nv];
    for (v, (marginal, order)) in marginals.iter().zip(&order).enumerate() {
        for (k, &s) in order.iter().enumerate() {
            speeds[s * nv + v] = marginal.points[k];
        }
    }
    Ok(ScenarioSet::uniform(Method::Sg, seed, panel.panel_id(), panel.n_links(), panel.grid(), speeds)?)
}
