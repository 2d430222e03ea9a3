//! Next-window cost prediction: per-entry double exponential smoothing,
//! operator clusters, and per-cluster scaling of predicted memory.

mod cluster;
mod desp;
mod scaling;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use cluster::{
    features, fit_clusters, kmeans, percentile, Features, OperatorCluster, DEFAULT_CLUSTERS, GAMMA_MAX_TENTHS,
    GAMMA_MIN_TENTHS, MAX_ITERATIONS,
};
pub use desp::{desp_forecast, predict_window, DespParams, DespState};
pub use scaling::{fit_scaling, fit_scaling_with, scale_matrix, scaling_score, ScalingSetup, MAX_PASSES};

use crate::cost::{CostKey, CostMatrix};
use crate::error::{Error, Result};

/// Smoothing factors plus fitted clusters and their scaling factors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastModel {
    pub params: DespParams,
    pub clusters: Vec<OperatorCluster>,
}

impl ForecastModel {
    pub fn unscaled(params: DespParams) -> Self {
        ForecastModel {
            params,
            clusters: Vec::new(),
        }
    }

    /// Clusters on `training`, then γ per cluster against `setup`.
    pub fn fit(training: &[CostMatrix], params: DespParams, k: usize, seed: u64, setup: &ScalingSetup) -> Result<Self> {
        params.validate()?;
        let clusters = fit_clusters(training, k, seed)?;
        let clusters = fit_scaling(&clusters, training, params, setup)?;
        Ok(ForecastModel { params, clusters })
    }

    /// Scaled prediction for the window after `history`.
    pub fn predict(&self, history: &[CostMatrix]) -> Result<CostMatrix> {
        Ok(scale_matrix(&predict_window(history, self.params)?, &self.clusters))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

/// One predicted cost component next to its true value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub window: usize,
    pub key: CostKey,
    pub component: String,
    pub predicted: u64,
    pub actual: u64,
}

impl PredictionRow {
    /// |predicted − actual| / actual, undefined for a zero actual.
    pub fn relative_error(&self) -> Option<f64> {
        (self.actual > 0).then(|| (self.predicted as f64 - self.actual as f64).abs() / self.actual as f64)
    }
}

/// Predicted versus true B, N_in and N_out of every entry in `truth`.
pub fn compare(predicted: &CostMatrix, truth: &CostMatrix) -> Vec<PredictionRow> {
    let mut out = Vec::new();
    for (key, t) in &truth.entries {
        let p = predicted.entries.get(key).copied().unwrap_or_default();
        for (component, pv, tv) in [("B", p.b, t.b), ("n_in", p.n_in, t.n_in), ("n_out", p.n_out, t.n_out)] {
            out.push(PredictionRow {
                window: truth.window,
                key: *key,
                component: component.to_string(),
                predicted: pv,
                actual: tv,
            });
        }
    }
    out
}

/// Rolling one-step evaluation: every window from `train_windows` on is
/// predicted from all windows before it.
pub fn predict_eval(history: &[CostMatrix], train_windows: usize, params: DespParams) -> Result<Vec<PredictionRow>> {
    params.validate()?;
    let start = train_windows.max(2);
    if history.len() <= start {
        return Err(Error::InsufficientHistory {
            needed: start + 1,
            got: history.len(),
        });
    }
    let mut rows = Vec::new();
    for w in start..history.len() {
        rows.extend(compare(&predict_window(&history[..w], params)?, &history[w]));
    }
    Ok(rows)
}

/// Median of the defined relative errors, `None` when there are none.
pub fn median_relative_error<'a>(rows: impl IntoIterator<Item = &'a PredictionRow>) -> Option<f64> {
    let mut e: Vec<f64> = rows.into_iter().filter_map(PredictionRow::relative_error).collect();
    if e.is_empty() {
        return None;
    }
    e.sort_by(f64::total_cmp);
    let n = e.len();
    Some(if n % 2 == 1 { e[n / 2] } else { (e[n / 2 - 1] + e[n / 2]) / 2.0 })
}
