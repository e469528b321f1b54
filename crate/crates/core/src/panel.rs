//! Empirical speed panel (days × links × periods) and the time grid it lives on.

use std::collections::{BTreeSet, HashMap};
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::network::RoadNetwork;

pub const SPEEDS_HEADER: [&str; 4] = ["link_id", "day", "period", "speed_kmh"];

/// Fixed-length time periods starting at `window_start_s` (seconds from midnight).
/// Times before the window use period 0, times after it use the last period.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub window_start_s: f64,
    pub period_s: f64,
    pub n_periods: usize,
}

impl TimeGrid {
    pub fn new(window_start_s: f64, period_minutes: f64, n_periods: usize) -> Self {
        Self { window_start_s, period_s: period_minutes * 60.0, n_periods }
    }

    pub fn period_at(&self, t: f64) -> usize {
        let k = ((t - self.window_start_s) / self.period_s).floor();
        if k <= 0.0 {
            0
        } else {
            (k as usize).min(self.n_periods - 1)
        }
    }

    /// End of period `p`, or infinity for the last period.
    pub fn period_end(&self, p: usize) -> f64 {
        if p + 1 >= self.n_periods {
            f64::INFINITY
        } else {
            self.window_start_s + (p + 1) as f64 * self.period_s
        }
    }
}

impl Default for TimeGrid {
    fn default() -> Self {
        Self::new(8.0 * 3600.0, 5.0, 24)
    }
}

/// Index of one random speed variable: a (link, period) cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct VarKey {
    pub link_index: usize,
    pub period_index: usize,
}

impl VarKey {
    pub fn new(link_index: usize, period_index: usize) -> Self {
        Self { link_index, period_index }
    }
}

#[derive(Debug, Error)]
pub enum PanelError {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
    #[error("missing or malformed header, expected `link_id,day,period,speed_kmh`")]
    MissingHeader,
    #[error("row {row}: cannot parse field `{field}`")]
    Parse { row: usize, field: &'static str },
    #[error("row {row}: unknown link {link_id}")]
    UnknownLink { row: usize, link_id: i64 },
    #[error("row {row}: non-positive speed {speed}")]
    NonPositiveSpeed { row: usize, speed: f64 },
    #[error("row {row}: duplicate cell (link {link_id}, day {day}, period {period})")]
    DuplicateCell { row: usize, link_id: i64, day: i64, period: usize },
    #[error("missing cell (link {link_id}, day {day}, period {period})")]
    MissingCell { link_id: i64, day: i64, period: usize },
    #[error("panel dimensions do not match: {0}")]
    Shape(String),
    #[error("variable {0:?} out of bounds")]
    OutOfBounds(VarKey),
}

/// Dense panel of observed speeds in km/h, `speeds[(day * n_links + link) * n_periods + period]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeedPanel {
    days: Vec<i64>,
    n_links: usize,
    grid: TimeGrid,
    speeds: Vec<f64>,
}

impl SpeedPanel {
    pub fn new(days: Vec<i64>, n_links: usize, grid: TimeGrid, speeds: Vec<f64>) -> Result<Self, PanelError> {
        if days.is_empty() || n_links == 0 || grid.n_periods == 0 {
            return Err(PanelError::Shape("panel needs at least one day, link and period".into()));
        }
        if speeds.len() != days.len() * n_links * grid.n_periods {
            return Err(PanelError::Shape(format!(
                "{} values for {} days × {} links × {} periods",
                speeds.len(),
                days.len(),
                n_links,
                grid.n_periods
            )));
        }
        if let Some(&bad) = speeds.iter().find(|v| !(**v > 0.0) || !v.is_finite()) {
            return Err(PanelError::NonPositiveSpeed { row: 0, speed: bad });
        }
        Ok(Self { days, n_links, grid, speeds })
    }

    /// Reads `speeds.csv`. Row order is irrelevant; days are sorted ascending and
    /// links follow the network's file order. `grid.n_periods` is replaced by the
    /// number of periods found in the file.
    pub fn from_reader<R: Read>(reader: R, net: &RoadNetwork, grid: TimeGrid) -> Result<Self, PanelError> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let header = rdr.headers().map_err(|_| PanelError::MissingHeader)?;
        if header.iter().ne(SPEEDS_HEADER.iter().copied()) {
            return Err(PanelError::MissingHeader);
        }
        let mut rows = Vec::new();
        for (i, record) in rdr.records().enumerate() {
            let row = i + 1;
            let record = record?;
            let get = |idx: usize, field: &'static str| {
                record.get(idx).ok_or(PanelError::Parse { row, field })
            };
            let link_id: i64 = get(0, "link_id")?.parse().map_err(|_| PanelError::Parse { row, field: "link_id" })?;
            let day: i64 = get(1, "day")?.parse().map_err(|_| PanelError::Parse { row, field: "day" })?;
            let period: usize = get(2, "period")?.parse().map_err(|_| PanelError::Parse { row, field: "period" })?;
            let speed: f64 = get(3, "speed_kmh")?.parse().map_err(|_| PanelError::Parse { row, field: "speed_kmh" })?;
            let link = net.link_position(link_id).ok_or(PanelError::UnknownLink { row, link_id })?;
            if !(speed > 0.0) || !speed.is_finite() {
                return Err(PanelError::NonPositiveSpeed { row, speed });
            }
            rows.push((row, link, day, period, speed));
        }
        let days: Vec<i64> = rows.iter().map(|r| r.2).collect::<BTreeSet<_>>().into_iter().collect();
        let n_periods = rows.iter().map(|r| r.3 + 1).max().unwrap_or(0);
        if days.is_empty() {
            return Err(PanelError::Shape("no speed rows".into()));
        }
        let day_pos: HashMap<i64, usize> = days.iter().enumerate().map(|(i, &d)| (d, i)).collect();
        let n_links = net.n_links();
        let mut speeds = vec![f64::NAN; days.len() * n_links * n_periods];
        for (row, link, day, period, speed) in rows {
            let idx = (day_pos[&day] * n_links + link) * n_periods + period;
            if !speeds[idx].is_nan() {
                return Err(PanelError::DuplicateCell { row, link_id: net.links()[link].link_id, day, period });
            }
            speeds[idx] = speed;
        }
        for (d, &day) in days.iter().enumerate() {
            for link in 0..n_links {
                for period in 0..n_periods {
                    if speeds[(d * n_links + link) * n_periods + period].is_nan() {
                        return Err(PanelError::MissingCell { link_id: net.links()[link].link_id, day, period });
                    }
                }
            }
        }
        Self::new(days, n_links, TimeGrid { n_periods, ..grid }, speeds)
    }

    pub fn load(path: impl AsRef<Path>, net: &RoadNetwork, grid: TimeGrid) -> Result<Self, PanelError> {
        Self::from_reader(std::fs::File::open(path)?, net, grid)
    }

    pub fn write_csv<W: Write>(&self, net: &RoadNetwork, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{}", SPEEDS_HEADER.join(","))?;
        for (d, day) in self.days.iter().enumerate() {
            for (l, link) in net.links().iter().enumerate() {
                for p in 0..self.n_periods() {
                    writeln!(out, "{},{},{},{:?}", link.link_id, day, p, self.speed(d, l, p))?;
                }
            }
        }
        Ok(())
    }

    pub fn n_days(&self) -> usize {
        self.days.len()
    }

    pub fn days(&self) -> &[i64] {
        &self.days
    }

    pub fn n_links(&self) -> usize {
        self.n_links
    }

    pub fn n_periods(&self) -> usize {
        self.grid.n_periods
    }

    pub fn n_vars(&self) -> usize {
        self.n_links * self.grid.n_periods
    }

    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    pub fn with_grid(mut self, window_start_s: f64, period_s: f64) -> Self {
        self.grid.window_start_s = window_start_s;
        self.grid.period_s = period_s;
        self
    }

    pub fn speed(&self, day: usize, link: usize, period: usize) -> f64 {
        self.speeds[(day * self.n_links + link) * self.grid.n_periods + period]
    }

    /// The complete link×period matrix of one day.
    pub fn day_slice(&self, day: usize) -> &[f64] {
        let n = self.n_vars();
        &self.speeds[day * n..(day + 1) * n]
    }

    /// Flat variable index, `link * n_periods + period`.
    pub fn var_index(&self, key: VarKey) -> Result<usize, PanelError> {
        if key.link_index >= self.n_links || key.period_index >= self.grid.n_periods {
            return Err(PanelError::OutOfBounds(key));
        }
        Ok(key.link_index * self.grid.n_periods + key.period_index)
    }

    pub fn var_key(&self, var: usize) -> VarKey {
        VarKey::new(var / self.grid.n_periods, var % self.grid.n_periods)
    }

    /// Observations of one variable over all days.
    pub fn series(&self, var: usize) -> Vec<f64> {
        let n = self.n_vars();
        (0..self.n_days()).map(|d| self.speeds[d * n + var]).collect()
    }

    pub fn mean(&self, var: usize) -> f64 {
        self.series(var).iter().sum::<f64>() / self.n_days() as f64
    }

    /// Stable content hash, used as provenance in scenario metadata.
    pub fn panel_id(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.days.len() as u64).to_le_bytes());
        h.update((self.n_links as u64).to_le_bytes());
        h.update((self.grid.n_periods as u64).to_le_bytes());
        for d in &self.days {
            h.update(d.to_le_bytes());
        }
        for v in &self.speeds {
            h.update(v.to_bits().to_le_bytes());
        }
        hex::encode(&h.finalize()[..8])
    }
}
