//! Equiprobable (by default) sets of complete link×period speed scenarios.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::network::RoadNetwork;
use crate::panel::{SpeedPanel, TimeGrid};

pub const SCENARIO_HEADER: [&str; 4] = ["scenario", "link_id", "period", "speed_kmh"];
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Rs,
    Sg,
    Full,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Rs => "rs",
            Method::Sg => "sg",
            Method::Full => "full",
        })
    }
}

impl FromStr for Method {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "rs" => Ok(Method::Rs),
            "sg" => Ok(Method::Sg),
            "full" => Ok(Method::Full),
            _ => Err(format!("unknown method `{s}` (expected rs, sg or full)")),
        }
    }
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
    #[error("missing or malformed header, expected `scenario,link_id,period,speed_kmh`")]
    MissingHeader,
    #[error("row {row}: {msg}")]
    Row { row: usize, msg: String },
    #[error("invalid scenario set: {0}")]
    Invalid(String),
}

/// Sidecar metadata written next to a scenario CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioMeta {
    pub method: Method,
    pub seed: u64,
    #[serde(rename = "S")]
    pub size: usize,
    pub source_panel_id: String,
    pub tool_version: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSet {
    pub method: Method,
    pub seed: u64,
    pub source_panel_id: String,
    n_links: usize,
    grid: TimeGrid,
    probabilities: Vec<f64>,
    // scenario-major, same layout as one panel day
    speeds: Vec<f64>,
}

/// Borrowed view of one scenario's link×period speeds.
#[derive(Debug, Clone, Copy)]
pub struct Scenario<'a> {
    speeds: &'a [f64],
    n_periods: usize,
}

impl<'a> Scenario<'a> {
    pub fn new(speeds: &'a [f64], n_periods: usize) -> Self {
        Self { speeds, n_periods }
    }

    pub fn speed(&self, link: usize, period: usize) -> f64 {
        self.speeds[link * self.n_periods + period]
    }

    pub fn n_periods(&self) -> usize {
        self.n_periods
    }
}

impl ScenarioSet {
    pub fn new(
        method: Method,
        seed: u64,
        source_panel_id: String,
        n_links: usize,
        grid: TimeGrid,
        probabilities: Vec<f64>,
        speeds: Vec<f64>,
    ) -> Result<Self, ScenarioError> {
        let s = probabilities.len();
        if s == 0 {
            return Err(ScenarioError::Invalid("a scenario set needs at least one scenario".into()));
        }
        if speeds.len() != s * n_links * grid.n_periods {
            return Err(ScenarioError::Invalid(format!(
                "{} speeds for {s} scenarios × {n_links} links × {} periods",
                speeds.len(),
                grid.n_periods
            )));
        }
        let total: f64 = probabilities.iter().sum();
        if (total - 1.0).abs() > 1e-12 || probabilities.iter().any(|p| !(*p >= 0.0)) {
            return Err(ScenarioError::Invalid(format!("probabilities sum to {total}")));
        }
        if speeds.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(ScenarioError::Invalid("speeds must be positive".into()));
        }
        Ok(Self { method, seed, source_panel_id, n_links, grid, probabilities, speeds })
    }

    /// Equiprobable set.
    pub fn uniform(
        method: Method,
        seed: u64,
        source_panel_id: String,
        n_links: usize,
        grid: TimeGrid,
        speeds: Vec<f64>,
    ) -> Result<Self, ScenarioError> {
        let n = speeds.len() / (n_links * grid.n_periods).max(1);
        Self::new(method, seed, source_panel_id, n_links, grid, vec![1.0 / n as f64; n], speeds)
    }

    /// Every day of the panel as one equiprobable scenario.
    pub fn full(panel: &SpeedPanel) -> Self {
        let speeds: Vec<f64> = (0..panel.n_days()).flat_map(|d| panel.day_slice(d).iter().copied()).collect();
        Self::uniform(Method::Full, 0, panel.panel_id(), panel.n_links(), panel.grid(), speeds)
            .expect("panel invariants carry over")
    }

    pub fn len(&self) -> usize {
        self.probabilities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probabilities.is_empty()
    }

    pub fn n_links(&self) -> usize {
        self.n_links
    }

    pub fn n_periods(&self) -> usize {
        self.grid.n_periods
    }

    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    pub fn scenario(&self, s: usize) -> Scenario<'_> {
        let n = self.n_links * self.grid.n_periods;
        Scenario::new(&self.speeds[s * n..(s + 1) * n], self.grid.n_periods)
    }

    pub fn scenarios(&self) -> impl Iterator<Item = Scenario<'_>> {
        (0..self.len()).map(|s| self.scenario(s))
    }

    pub fn meta(&self) -> ScenarioMeta {
        ScenarioMeta {
            method: self.method,
            seed: self.seed,
            size: self.len(),
            source_panel_id: self.source_panel_id.clone(),
            tool_version: TOOL_VERSION.to_string(),
        }
    }

    /// Probability-weighted mean and standard deviation per variable
    /// (`link * n_periods + period`).
    pub fn moments(&self) -> Vec<(f64, f64)> {
        let n = self.n_links * self.grid.n_periods;
        (0..n)
            .map(|v| {
                let mean: f64 = (0..self.len()).map(|s| self.probabilities[s] * self.speeds[s * n + v]).sum();
                let var: f64 = (0..self.len())
                    .map(|s| {
                        let d = self.speeds[s * n + v] - mean;
                        self.probabilities[s] * d * d
                    })
                    .sum();
                (mean, var.sqrt())
            })
            .collect()
    }

    pub fn write_csv<W: Write>(&self, net: &RoadNetwork, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{}", SCENARIO_HEADER.join(","))?;
        for (s, sc) in self.scenarios().enumerate() {
            for (l, link) in net.links().iter().enumerate() {
                for p in 0..self.n_periods() {
                    writeln!(out, "{s},{},{p},{:?}", link.link_id, sc.speed(l, p))?;
                }
            }
        }
        Ok(())
    }

    /// Reads a scenario CSV as an equiprobable set. `grid.n_periods` is taken from the file.
    pub fn from_reader<R: Read>(reader: R, net: &RoadNetwork, grid: TimeGrid, meta: Option<&ScenarioMeta>) -> Result<Self, ScenarioError> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let header = rdr.headers().map_err(|_| ScenarioError::MissingHeader)?;
        if header.iter().ne(SCENARIO_HEADER.iter().copied()) {
            return Err(ScenarioError::MissingHeader);
        }
        let mut cells: BTreeMap<(usize, usize, usize), f64> = BTreeMap::new();
        for (i, record) in rdr.records().enumerate() {
            let row = i + 1;
            let record = record?;
            let bad = |msg: &str| ScenarioError::Row { row, msg: msg.to_string() };
            let field = |idx: usize| record.get(idx).ok_or_else(|| bad("missing field"));
            let s: usize = field(0)?.parse().map_err(|_| bad("bad scenario index"))?;
            let link_id: i64 = field(1)?.parse().map_err(|_| bad("bad link_id"))?;
            let p: usize = field(2)?.parse().map_err(|_| bad("bad period"))?;
            let v: f64 = field(3)?.parse().map_err(|_| bad("bad speed"))?;
            let l = net.link_position(link_id).ok_or_else(|| bad(&format!("unknown link {link_id}")))?;
            if !(v > 0.0) {
                return Err(bad("non-positive speed"));
            }
            if cells.insert((s, l, p), v).is_some() {
                return Err(bad("duplicate cell"));
            }
        }
        let n_scen = cells.keys().map(|k| k.0 + 1).max().unwrap_or(0);
        let n_periods = cells.keys().map(|k| k.2 + 1).max().unwrap_or(0);
        let expected = n_scen * net.n_links() * n_periods;
        if cells.len() != expected || expected == 0 {
            return Err(ScenarioError::Invalid(format!("{} cells present, {expected} expected", cells.len())));
        }
        // BTreeMap order is (scenario, link, period), the storage layout
        let speeds: Vec<f64> = cells.into_values().collect();
        let (method, seed, id) = meta
            .map(|m| (m.method, m.seed, m.source_panel_id.clone()))
            .unwrap_or((Method::Full, 0, String::new()));
        if let Some(m) = meta {
            if m.size != n_scen {
                return Err(ScenarioError::Invalid(format!("metadata says S={}, file has {n_scen}", m.size)));
            }
        }
        Self::uniform(method, seed, id, net.n_links(), TimeGrid { n_periods, ..grid }, speeds)
    }
}
