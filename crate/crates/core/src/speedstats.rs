//! Pearson correlations between speed variables and their significance.
//!
//! A variable is one (link, period) cell observed over the panel's days. The
//! significance test is the two-sided Student's t test of `r = 0` with `n - 2`
//! degrees of freedom, `t = |r| sqrt((n - 2) / (1 - r^2))`; inverting it gives
//! the smallest significant `|r|`, `t* / sqrt(t*^2 + n - 2)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::panel::{PanelError, SpeedPanel, VarKey};

pub const HISTOGRAM_BINS: usize = 20;
pub const DEFAULT_PAIR_BUDGET: u64 = 100_000_000;
pub const STRONG_CORRELATION: f64 = 0.6;

#[derive(Debug, Error)]
pub enum StatsError {
    #[error(transparent)]
    Panel(#[from] PanelError),
    #[error("zero variance in variable {0:?}, correlation undefined")]
    ZeroVariance(VarKey),
    #[error("need at least 3 samples, got {0}")]
    TooFewSamples(usize),
    #[error("significance level must lie in (0, 1), got {0}")]
    InvalidLevel(f64),
    #[error("{pairs} pairs exceed the budget of {budget}; enable pair subsampling")]
    PanelTooLarge { pairs: u64, budget: u64 },
}

/// Number of distinct unordered pairs among `n_vars` variables.
pub fn pair_count(n_vars: u64) -> u64 {
    n_vars * n_vars.saturating_sub(1) / 2
}

/// Sample Pearson correlation of two series. `None` when either is constant.
pub fn pearson_series(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

pub fn pearson(panel: &SpeedPanel, a: VarKey, b: VarKey) -> Result<f64, StatsError> {
    if panel.n_days() < 3 {
        return Err(StatsError::TooFewSamples(panel.n_days()));
    }
    let (ia, ib) = (panel.var_index(a)?, panel.var_index(b)?);
    let (xa, xb) = (panel.series(ia), panel.series(ib));
    let r = pearson_series(&xa, &xb).ok_or_else(|| {
        let zero_a = pearson_series(&xa, &xa).is_none();
        StatsError::ZeroVariance(if zero_a { a } else { b })
    })?;
    Ok(if ia == ib { 1.0 } else { r })
}

/// Mid-ranks (1-based, ties share their average rank).
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation, `None` when either series is constant.
pub fn spearman_series(x: &[f64], y: &[f64]) -> Option<f64> {
    pearson_series(&average_ranks(x), &average_ranks(y))
}

/// Two-sided critical t value at `level` with `n_samples - 2` degrees of freedom.
pub fn t_critical(n_samples: usize, level: f64) -> Result<f64, StatsError> {
    if n_samples < 3 {
        return Err(StatsError::TooFewSamples(n_samples));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(StatsError::InvalidLevel(level));
    }
    let t = StudentsT::new(0.0, 1.0, (n_samples - 2) as f64).expect("positive degrees of freedom");
    Ok(t.inverse_cdf(1.0 - level / 2.0))
}

/// Smallest `|r|` declared significant at the two-sided `level`.
pub fn significance_threshold(n_samples: usize, level: f64) -> Result<f64, StatsError> {
    let t = t_critical(n_samples, level)?;
    Ok(t / (t * t + (n_samples - 2) as f64).sqrt())
}

#[derive(Debug, Clone)]
pub struct SummaryOptions {
    pub level: f64,
    pub pair_budget: u64,
    /// When set and the pair count exceeds the budget, `pair_budget` pairs are
    /// drawn uniformly with this seed instead of failing.
    pub subsample_seed: Option<u64>,
    /// Restrict to variables at these period indices.
    pub periods: Option<Vec<usize>>,
}

impl Default for SummaryOptions {
    fn default() -> Self {
        Self { level: 0.05, pair_budget: DEFAULT_PAIR_BUDGET, subsample_seed: None, periods: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrelationSummary {
    /// Counts over [-1, 1] in bins of width 0.1; r = 1 falls in the last bin.
    pub bins: [u64; HISTOGRAM_BINS],
    pub n_vars: usize,
    pub zero_variance_vars: usize,
    pub total_pairs: u64,
    pub evaluated_pairs: u64,
    pub sampled: bool,
    pub threshold: f64,
    pub insignificant: u64,
    pub significant: u64,
    pub strong: u64,
}

impl CorrelationSummary {
    pub fn insignificant_frac(&self) -> f64 {
        self.insignificant as f64 / self.evaluated_pairs.max(1) as f64
    }

    pub fn significant_frac(&self) -> f64 {
        self.significant as f64 / self.evaluated_pairs.max(1) as f64
    }

    pub fn strong_frac(&self) -> f64 {
        self.strong as f64 / self.evaluated_pairs.max(1) as f64
    }

    pub fn bin_edges(i: usize) -> (f64, f64) {
        (-1.0 + i as f64 * 0.1, -1.0 + (i + 1) as f64 * 0.1)
    }

    fn add(&mut self, r: f64) {
        let bin = (((r + 1.0) * 10.0).floor() as usize).min(HISTOGRAM_BINS - 1);
        self.bins[bin] += 1;
        self.evaluated_pairs += 1;
        if r.abs() >= self.threshold {
            self.significant += 1;
        } else {
            self.insignificant += 1;
        }
        if r.abs() > STRONG_CORRELATION {
            self.strong += 1;
        }
    }

    fn merge(mut self, other: Self) -> Self {
        for (a, b) in self.bins.iter_mut().zip(other.bins) {
            *a += b;
        }
        self.evaluated_pairs += other.evaluated_pairs;
        self.significant += other.significant;
        self.insignificant += other.insignificant;
        self.strong += other.strong;
        self
    }
}

/// Centred, unit-norm columns so that a dot product is the Pearson correlation.
fn standardized(panel: &SpeedPanel, var: usize) -> Option<Vec<f64>> {
    let x = panel.series(var);
    let m = x.iter().sum::<f64>() / x.len() as f64;
    let ss: f64 = x.iter().map(|v| (v - m) * (v - m)).sum();
    if ss <= 0.0 {
        return None;
    }
    let s = ss.sqrt();
    Some(x.iter().map(|v| (v - m) / s).collect())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>().clamp(-1.0, 1.0)
}

/// Histogram and significance counts over all distinct variable pairs.
pub fn correlation_summary(panel: &SpeedPanel, opts: &SummaryOptions) -> Result<CorrelationSummary, StatsError> {
    let threshold = significance_threshold(panel.n_days(), opts.level)?;
    let vars: Vec<usize> = (0..panel.n_vars())
        .filter(|&v| opts.periods.as_ref().is_none_or(|ps| ps.contains(&panel.var_key(v).period_index)))
        .collect();
    let cols: Vec<Vec<f64>> = vars.par_iter().filter_map(|&v| standardized(panel, v)).collect();
    let mut summary = empty_summary(vars.len(), vars.len() - cols.len(), threshold);
    summary.total_pairs = pair_count(cols.len() as u64);
    if summary.total_pairs > opts.pair_budget {
        let Some(seed) = opts.subsample_seed else {
            return Err(StatsError::PanelTooLarge { pairs: summary.total_pairs, budget: opts.pair_budget });
        };
        return Ok(sampled_summary(&cols, summary, opts.pair_budget, seed));
    }
    // integer counts, so the parallel reduction order does not matter
    let counts = (0..cols.len())
        .into_par_iter()
        .map(|i| {
            let mut part = empty_summary(0, 0, threshold);
            for j in i + 1..cols.len() {
                part.add(dot(&cols[i], &cols[j]));
            }
            part
        })
        .reduce(|| empty_summary(0, 0, threshold), CorrelationSummary::merge);
    Ok(summary.merge(counts))
}

fn empty_summary(n_vars: usize, zero_variance_vars: usize, threshold: f64) -> CorrelationSummary {
    CorrelationSummary {
        bins: [0; HISTOGRAM_BINS],
        n_vars,
        zero_variance_vars,
        total_pairs: 0,
        evaluated_pairs: 0,
        sampled: false,
        threshold,
        insignificant: 0,
        significant: 0,
        strong: 0,
    }
}

fn sampled_summary(cols: &[Vec<f64>], mut summary: CorrelationSummary, n: u64, seed: u64) -> CorrelationSummary {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v = cols.len();
    for _ in 0..n {
        let i = rng.random_range(0..v);
        let mut j = rng.random_range(0..v - 1);
        if j >= i {
            j += 1;
        }
        summary.add(dot(&cols[i], &cols[j]));
    }
    summary.sampled = true;
    summary
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProfileMode {
    Spatial,
    Temporal,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProfileEntry {
    pub var: VarKey,
    /// `None` when either variable has zero variance.
    pub r: Option<f64>,
    pub significant: bool,
}

/// Correlations of `anchor` against every link at the same period (spatial,
/// sorted by decreasing r with undefined values last) or against the same link
/// at the anchor's period and every later one (temporal, in period order).
pub fn profile(panel: &SpeedPanel, anchor: VarKey, mode: ProfileMode, level: f64) -> Result<Vec<ProfileEntry>, StatsError> {
    let a = panel.var_index(anchor)?;
    let threshold = significance_threshold(panel.n_days(), level)?;
    let xa = panel.series(a);
    let targets: Vec<VarKey> = match mode {
        ProfileMode::Spatial => (0..panel.n_links()).map(|l| VarKey::new(l, anchor.period_index)).collect(),
        ProfileMode::Temporal => {
            (anchor.period_index..panel.n_periods()).map(|p| VarKey::new(anchor.link_index, p)).collect()
        }
    };
    let mut out: Vec<ProfileEntry> = targets
        .into_iter()
        .map(|key| {
            let b = key.link_index * panel.n_periods() + key.period_index;
            let r = pearson_series(&xa, &panel.series(b)).map(|r| if a == b { 1.0 } else { r });
            ProfileEntry { var: key, r, significant: r.is_some_and(|r| r.abs() >= threshold) }
        })
        .collect();
    if mode == ProfileMode::Spatial {
        out.sort_by(|x, y| match (x.r, y.r) {
            (Some(a), Some(b)) => b.total_cmp(&a).then(x.var.cmp(&y.var)),
            (Some(_), None) => std::cmp::Ordering::Less,
            (None, Some(_)) => std::cmp::Ordering::Greater,
            (None, None) => x.var.cmp(&y.var),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::TimeGrid;
    use proptest::prelude::*;
    use rand_distr::{Distribution, StandardNormal};

    fn panel_from_series(series: &[Vec<f64>]) -> SpeedPanel {
        // one period, one link per series
        let e = series[0].len();
        let mut speeds = Vec::new();
        for d in 0..e {
            for s in series {
                speeds.push(s[d]);
            }
        }
        SpeedPanel::new((0..e as i64).collect(), series.len(), TimeGrid::new(0.0, 5.0, 1), speeds).unwrap()
    }

    #[test]
    fn self_and_anti_correlation() {
        let a = vec![50.0, 61.0, 55.0, 70.0, 64.0];
        let b: Vec<f64> = a.iter().map(|x| 200.0 - 2.0 * x).collect();
        let p = panel_from_series(&[a, b]);
        assert_eq!(pearson(&p, VarKey::new(0, 0), VarKey::new(0, 0)).unwrap(), 1.0);
        assert!((pearson(&p, VarKey::new(0, 0), VarKey::new(1, 0)).unwrap() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn five_day_hand_computation() {
        // x = (1,2,3,4,5), y = (2,1,4,3,5): mean 3 each, Sxy = 8, Sxx = Syy = 10.
        let p = panel_from_series(&[vec![1.0, 2.0, 3.0, 4.0, 5.0], vec![2.0, 1.0, 4.0, 3.0, 5.0]]);
        let r = pearson(&p, VarKey::new(0, 0), VarKey::new(1, 0)).unwrap();
        assert!((r - 0.8).abs() < 1e-12);
    }

    #[test]
    fn zero_variance_is_an_error() {
        let p = panel_from_series(&[vec![1.0, 2.0, 3.0], vec![4.0, 4.0, 4.0]]);
        assert!(matches!(
            pearson(&p, VarKey::new(0, 0), VarKey::new(1, 0)),
            Err(StatsError::ZeroVariance(VarKey { link_index: 1, .. }))
        ));
    }

    #[test]
    fn threshold_at_102_days() {
        let t = t_critical(102, 0.05).unwrap();
        assert!((t - 1.984).abs() <= 0.001, "{t}");
        let r = significance_threshold(102, 0.05).unwrap();
        assert!((r - 0.1946).abs() <= 0.0005, "{r}");
    }

    #[test]
    fn threshold_decreases_to_zero() {
        let mut last = 1.0;
        for n in [3, 5, 10, 30, 100, 1_000, 100_000, 10_000_000] {
            let r = significance_threshold(n, 0.05).unwrap();
            assert!(r < last);
            last = r;
        }
        assert!(last < 1e-3);
        assert!(matches!(significance_threshold(2, 0.05), Err(StatsError::TooFewSamples(2))));
        assert!(matches!(significance_threshold(10, 1.0), Err(StatsError::InvalidLevel(_))));
    }

    #[test]
    fn ranks_with_ties() {
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
        let s = spearman_series(&[1.0, 2.0, 3.0, 4.0], &[1.0, 8.0, 27.0, 64.0]).unwrap();
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn la_scale_pair_count() {
        assert_eq!(pair_count(438 * 24), 55_245_816);
    }

    #[test]
    fn two_perfectly_correlated_variables() {
        let p = panel_from_series(&[vec![1.0, 2.0, 3.0, 5.0], vec![2.0, 4.0, 6.0, 10.0]]);
        let s = correlation_summary(&p, &SummaryOptions::default()).unwrap();
        assert_eq!(s.evaluated_pairs, 1);
        assert_eq!(s.insignificant_frac(), 0.0);
        assert_eq!(s.bins[HISTOGRAM_BINS - 1], 1);
    }

    #[test]
    fn independent_noise_is_mostly_insignificant() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let series: Vec<Vec<f64>> = (0..40)
            .map(|_| (0..300).map(|_| { let z: f64 = StandardNormal.sample(&mut rng); 60.0 + z }).collect())
            .collect();
        let p = panel_from_series(&series);
        let s = correlation_summary(&p, &SummaryOptions::default()).unwrap();
        assert_eq!(s.evaluated_pairs, 780);
        let sd = (0.05f64 * 0.95 / 780.0).sqrt();
        assert!((s.insignificant_frac() - 0.95).abs() < 3.0 * sd, "{}", s.insignificant_frac());
        assert_eq!(s.significant + s.insignificant, s.evaluated_pairs);
        assert_eq!(s.bins.iter().sum::<u64>(), s.evaluated_pairs);
    }

    #[test]
    fn budget_and_subsampling() {
        let p = panel_from_series(&[
            vec![1.0, 2.0, 3.0, 4.0],
            vec![2.0, 1.0, 3.0, 4.0],
            vec![4.0, 2.0, 3.0, 1.0],
        ]);
        let opts = SummaryOptions { pair_budget: 2, ..Default::default() };
        assert!(matches!(correlation_summary(&p, &opts), Err(StatsError::PanelTooLarge { pairs: 3, budget: 2 })));
        let opts = SummaryOptions { pair_budget: 2, subsample_seed: Some(1), ..Default::default() };
        let s = correlation_summary(&p, &opts).unwrap();
        assert!(s.sampled);
        assert_eq!(s.evaluated_pairs, 2);
        assert_eq!(s.total_pairs, 3);
    }

    #[test]
    fn zero_variance_vars_excluded_with_count() {
        let p = panel_from_series(&[vec![1.0, 2.0, 3.0, 4.0], vec![5.0; 4], vec![2.0, 1.0, 4.0, 3.0]]);
        let s = correlation_summary(&p, &SummaryOptions::default()).unwrap();
        assert_eq!(s.zero_variance_vars, 1);
        assert_eq!(s.evaluated_pairs, 1);
    }

    fn ar1_panel(rho: f64, days: usize, periods: usize, seed: u64) -> SpeedPanel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut speeds = Vec::new();
        for _ in 0..days {
            let mut z: f64 = StandardNormal.sample(&mut rng);
            for _ in 0..periods {
                speeds.push(60.0 + 5.0 * z);
                let e: f64 = StandardNormal.sample(&mut rng);
                z = rho * z + (1.0 - rho * rho).sqrt() * e;
            }
        }
        SpeedPanel::new((0..days as i64).collect(), 1, TimeGrid::new(0.0, 5.0, periods), speeds).unwrap()
    }

    #[test]
    fn temporal_profile_tracks_ar1() {
        let p = ar1_panel(0.8, 2000, 6, 5);
        let prof = profile(&p, VarKey::new(0, 0), ProfileMode::Temporal, 0.05).unwrap();
        assert_eq!(prof.len(), 6);
        assert_eq!(prof[0].r, Some(1.0));
        assert!(prof[0].significant);
        for (k, e) in prof.iter().enumerate() {
            assert_eq!(e.var.period_index, k);
            // standard error of r is about (1 - rho^2) / sqrt(n) < 0.023
            assert!((e.r.unwrap() - 0.8f64.powi(k as i32)).abs() < 0.07, "lag {k}: {:?}", e.r);
        }
    }

    #[test]
    fn spatial_profile_sorted() {
        let p = panel_from_series(&[
            vec![1.0, 2.0, 3.0, 4.0, 5.0],
            vec![5.0, 4.0, 3.0, 2.0, 1.0],
            vec![7.0; 5],
            vec![2.0, 1.0, 4.0, 3.0, 5.0],
        ]);
        let prof = profile(&p, VarKey::new(0, 0), ProfileMode::Spatial, 0.05).unwrap();
        let links: Vec<usize> = prof.iter().map(|e| e.var.link_index).collect();
        assert_eq!(links, vec![0, 3, 1, 2]);
        assert_eq!(prof[3].r, None);
        assert!(prof.windows(2).take(2).all(|w| w[0].r >= w[1].r));
    }

    proptest! {
        #[test]
        fn pearson_symmetric_and_bounded(x in prop::collection::vec(1.0f64..100.0, 3..30), seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let y: Vec<f64> = x.iter().map(|v| v * rng.random_range(-1.0..1.0) + rng.random_range(0.0..10.0)).collect();
            if let (Some(a), Some(b)) = (pearson_series(&x, &y), pearson_series(&y, &x)) {
                prop_assert_eq!(a, b);
                prop_assert!(a.abs() <= 1.0);
            }
        }
    }
}
