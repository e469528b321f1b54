//! Synthetic networks and speed panels with tunable spatial and temporal
//! correlation, for exercising the pipeline without field data.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::network::{Link, NetworkError, NodeId, RoadNetwork};
use crate::panel::{PanelError, SpeedPanel, TimeGrid};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Panel(#[from] PanelError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_nodes: usize,
    pub n_links: usize,
    pub n_periods: usize,
    pub n_days: usize,
    /// Typical free-flow speed, km/h.
    pub base_speed: f64,
    /// Latent correlation between links sharing a node.
    pub spatial_rho: f64,
    /// Latent AR(1) coefficient between consecutive periods.
    pub temporal_rho: f64,
    pub seed: u64,
    pub floor_kmh: f64,
    /// Log-scale spread of the speed marginals.
    pub log_sd: f64,
    pub period_minutes: f64,
    pub window_start_s: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_nodes: 20,
            n_links: 40,
            n_periods: 24,
            n_days: 102,
            base_speed: 90.0,
            spatial_rho: 0.5,
            temporal_rho: 0.7,
            seed: 1,
            floor_kmh: 1.0,
            log_sd: 0.3,
            period_minutes: 5.0,
            window_start_s: 8.0 * 3600.0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::InvalidSpec(m.to_string()));
        if self.n_nodes < 2 {
            return bad("need at least 2 nodes");
        }
        if self.n_links < self.n_nodes || self.n_links > self.n_nodes * (self.n_nodes - 1) {
            return bad("n_links must lie in [n_nodes, n_nodes * (n_nodes - 1)]");
        }
        if self.n_periods == 0 || self.n_days == 0 {
            return bad("need at least one period and one day");
        }
        if !(self.spatial_rho > -1.0 && self.spatial_rho < 1.0) || !(self.temporal_rho > -1.0 && self.temporal_rho < 1.0) {
            return bad("correlations must lie in (-1, 1)");
        }
        if !(self.floor_kmh > 0.0) || !(self.base_speed > self.floor_kmh) || !(self.log_sd >= 0.0) {
            return bad("need 0 < floor < base_speed and log_sd >= 0");
        }
        Ok(())
    }

    pub fn grid(&self) -> TimeGrid {
        TimeGrid::new(self.window_start_s, self.period_minutes, self.n_periods)
    }
}

/// Random planar network: nodes in a 10 km square joined by a directed cycle
/// (strong connectivity) plus the shortest remaining chords in random
/// directions. Link lengths are Euclidean distances.
pub fn generate_network(spec: &SynthSpec) -> Result<RoadNetwork, SynthError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x6e65_7477_6f72_6b00);
    let n = spec.n_nodes;
    let pts: Vec<(f64, f64)> = (0..n).map(|_| (rng.random_range(0.0..10.0), rng.random_range(0.0..10.0))).collect();
    let dist = |a: usize, b: usize| {
        let (dx, dy) = (pts[a].0 - pts[b].0, pts[a].1 - pts[b].1);
        (dx * dx + dy * dy).sqrt().max(0.2)
    };
    let (cx, cy) = pts.iter().fold((0.0, 0.0), |acc, p| (acc.0 + p.0 / n as f64, acc.1 + p.1 / n as f64));
    let mut ring: Vec<usize> = (0..n).collect();
    ring.sort_by(|&a, &b| {
        let ta = (pts[a].1 - cy).atan2(pts[a].0 - cx);
        let tb = (pts[b].1 - cy).atan2(pts[b].0 - cx);
        ta.total_cmp(&tb)
    });
    let mut pairs: Vec<(usize, usize)> = (0..n).map(|i| (ring[i], ring[(i + 1) % n])).collect();
    let mut chords: Vec<(usize, usize)> = (0..n)
        .flat_map(|a| (a + 1..n).map(move |b| (a, b)))
        .filter(|&(a, b)| !pairs.contains(&(a, b)) && !pairs.contains(&(b, a)))
        .collect();
    chords.sort_by(|x, y| dist(x.0, x.1).total_cmp(&dist(y.0, y.1)));
    for (a, b) in chords {
        if pairs.len() == spec.n_links {
            break;
        }
        pairs.push(if rng.random_bool(0.5) { (a, b) } else { (b, a) });
    }
    // both directions once the undirected chords run out
    let mut reverse: Vec<(usize, usize)> = pairs.iter().map(|&(a, b)| (b, a)).collect();
    reverse.sort_by(|x, y| dist(x.0, x.1).total_cmp(&dist(y.0, y.1)));
    for r in reverse {
        if pairs.len() == spec.n_links {
            break;
        }
        if !pairs.contains(&r) {
            pairs.push(r);
        }
    }
    let links = pairs
        .into_iter()
        .enumerate()
        .map(|(i, (a, b))| Link {
            link_id: i as i64 + 1,
            from: NodeId(a as u32),
            to: NodeId(b as u32),
            length_km: (dist(a, b) * 1000.0).round() / 1000.0,
        })
        .collect();
    Ok(RoadNetwork::from_links(links)?)
}

/// Spatial factor `F` with `F Fᵀ` equal to the link correlation matrix, shrunk
/// towards the identity as far as needed to be positive semidefinite.
fn spatial_factor(net: &RoadNetwork, rho: f64) -> DMatrix<f64> {
    let l = net.n_links();
    let share = |a: usize, b: usize| {
        let (x, y) = (net.endpoints(a), net.endpoints(b));
        x.0 == y.0 || x.0 == y.1 || x.1 == y.0 || x.1 == y.1
    };
    let corr = DMatrix::from_fn(l, l, |a, b| if a == b { 1.0 } else if share(a, b) { rho } else { 0.0 });
    let eig = SymmetricEigen::new(corr);
    let min = eig.eigenvalues.min();
    let w = if min < 0.0 { -min / (1.0 - min) + 1e-10 } else { 0.0 };
    let scaled = eig.eigenvalues.map(|e| ((1.0 - w) * e + w).max(0.0).sqrt());
    eig.eigenvectors * DMatrix::from_diagonal(&scaled)
}

pub fn generate_panel(net: &RoadNetwork, spec: &SynthSpec) -> Result<SpeedPanel, SynthError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (nl, np) = (net.n_links(), spec.n_periods);
    let level: Vec<f64> = (0..nl).map(|_| rng.random_range(0.7..1.1)).collect();
    let depth: Vec<f64> = (0..nl).map(|_| rng.random_range(0.0..0.4)).collect();
    let mean = |l: usize, t: usize| {
        let bump = (std::f64::consts::PI * (t as f64 + 0.5) / np as f64).sin();
        spec.base_speed * level[l] * (1.0 - depth[l] * bump)
    };
    let factor = spatial_factor(net, spec.spatial_rho);
    let rho = spec.temporal_rho;
    let innov = (1.0 - rho * rho).sqrt();
    let sd = spec.log_sd;
    let mut speeds = Vec::with_capacity(spec.n_days * nl * np);
    let mut latent = vec![DVector::<f64>::zeros(nl); np];
    for _ in 0..spec.n_days {
        for t in 0..np {
            let eps = DVector::from_fn(nl, |_, _| StandardNormal.sample(&mut rng));
            let shock = &factor * eps;
            latent[t] = if t == 0 { shock } else { &latent[t - 1] * rho + shock * innov };
        }
        for l in 0..nl {
            for (t, z) in latent.iter().enumerate() {
                let mu = mean(l, t).max(spec.floor_kmh * 1.5);
                let v = spec.floor_kmh + (mu - spec.floor_kmh) * (sd * z[l] - sd * sd / 2.0).exp();
                speeds.push(v.max(spec.floor_kmh));
            }
        }
    }
    Ok(SpeedPanel::new((1..=spec.n_days as i64).collect(), nl, spec.grid(), speeds)?)
}
