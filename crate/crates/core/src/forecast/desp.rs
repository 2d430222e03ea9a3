use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::cost::{CostEntry, CostKey, CostMatrix};
use crate::error::{Error, Result};

/// Smoothing factors, both in (0, 1).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DespParams {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for DespParams {
    fn default() -> Self {
        DespParams { alpha: 0.5, beta: 0.3 }
    }
}

impl DespParams {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v > 0.0 && v < 1.0;
        if !ok(self.alpha) || !ok(self.beta) {
            return Err(Error::Precondition(format!(
                "smoothing factors must lie in (0, 1), got alpha={} beta={}",
                self.alpha, self.beta
            )));
        }
        Ok(())
    }
}

/// Level and trend of one series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DespState {
    pub level: f64,
    pub trend: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl DespState {
    pub fn new(level: f64, trend: f64, params: DespParams) -> Self {
        DespState {
            level,
            trend,
            alpha: params.alpha,
            beta: params.beta,
        }
    }

    /// l = y₁, b = y₂ − y₁, positioned at t = 1.
    pub fn init(y1: f64, y2: f64, params: DespParams) -> Self {
        Self::new(y1, y2 - y1, params)
    }

    /// Holt's recurrences, written as corrections to the one-step forecast:
    /// `l' = (l+b) + α(y − (l+b))`, `b' = b + β((l' − l) − b)`.
    /// Algebraically the textbook form; a series that lies on the current
    /// line leaves the state exactly on it.
    pub fn update(&mut self, y: f64) {
        let prev = self.level;
        let f = self.level + self.trend;
        self.level = f + self.alpha * (y - f);
        self.trend += self.beta * ((self.level - prev) - self.trend);
    }

    pub fn forecast(&self) -> f64 {
        self.level + self.trend
    }
}

/// One-step forecast after the whole series. Needs two points.
pub fn desp_forecast(series: &[f64], params: DespParams) -> Result<f64> {
    if series.len() < 2 {
        return Err(Error::InsufficientHistory {
            needed: 2,
            got: series.len(),
        });
    }
    let mut s = DespState::init(series[0], series[1], params);
    for &y in &series[1..] {
        s.update(y);
    }
    Ok(s.forecast())
}

fn predict_component(series: &[f64], params: DespParams) -> u64 {
    let f = desp_forecast(series, params).expect("caller checks the history length");
    if f.is_finite() && f > 0.0 {
        f.round() as u64
    } else {
        0
    }
}

/// Next-window cost matrix from the history, one independent forecaster per
/// key and component. Keys absent from a window count as zero there.
pub fn predict_window(history: &[CostMatrix], params: DespParams) -> Result<CostMatrix> {
    if history.len() < 2 {
        return Err(Error::InsufficientHistory {
            needed: 2,
            got: history.len(),
        });
    }
    let keys: BTreeSet<CostKey> = history.iter().flat_map(|m| m.entries.keys().copied()).collect();
    let last = history.last().expect("non-empty").window;
    let mut out = CostMatrix::new(last + 1);
    let mut col = Vec::with_capacity(history.len());
    for key in keys {
        let mut comp = |f: fn(&CostEntry) -> u64| {
            col.clear();
            col.extend(history.iter().map(|m| m.entries.get(&key).map(f).unwrap_or(0) as f64));
            predict_component(&col, params)
        };
        let b = comp(|e| e.b);
        let n_in = comp(|e| e.n_in);
        let n_out = comp(|e| e.n_out).min(n_in);
        out.entries.insert(key, CostEntry::new(b, n_in, n_out));
    }
    Ok(out)
}
