use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cost::{CostKey, CostMatrix};
use crate::error::{Error, Result};
use crate::workload::cov;

pub const DEFAULT_CLUSTERS: usize = 10;
pub const MAX_ITERATIONS: usize = 100;

/// Smallest and largest scaling factor, in tenths.
pub const GAMMA_MIN_TENTHS: u32 = 10;
pub const GAMMA_MAX_TENTHS: u32 = 30;

/// Operators sharing one scaling factor.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OperatorCluster {
    pub cluster_id: usize,
    pub members: Vec<CostKey>,
    /// γ·10, so that the grid is exact.
    pub gamma_tenths: u32,
}

impl OperatorCluster {
    pub fn gamma(&self) -> f64 {
        self.gamma_tenths as f64 / 10.0
    }
}

/// (p95 of N_in, p95 of B, CoV of B) of one operator.
pub type Features = [f64; 3];

/// Nearest-rank percentile of unsorted values.
pub fn percentile(values: &[f64], p: f64) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = ((p / 100.0) * v.len() as f64).ceil() as usize;
    v[rank.clamp(1, v.len()) - 1]
}

pub fn features(history: &[CostMatrix], key: CostKey) -> Features {
    let b: Vec<f64> = history
        .iter()
        .map(|m| m.entries.get(&key).map_or(0.0, |e| e.b as f64))
        .collect();
    let n_in: Vec<f64> = history
        .iter()
        .map(|m| m.entries.get(&key).map_or(0.0, |e| e.n_in as f64))
        .collect();
    [percentile(&n_in, 95.0), percentile(&b, 95.0), cov(&b)]
}

/// Z-scores per column with the population deviation; constant columns become 0.
fn standardize(points: &[Features]) -> Vec<Features> {
    let n = points.len() as f64;
    let mut out = points.to_vec();
    for c in 0..3 {
        let mean = points.iter().map(|p| p[c]).sum::<f64>() / n;
        let var = points.iter().map(|p| (p[c] - mean).powi(2)).sum::<f64>() / n;
        let sd = var.sqrt();
        for p in out.iter_mut() {
            p[c] = if sd > 0.0 { (p[c] - mean) / sd } else { 0.0 };
        }
    }
    out
}

fn dist2(a: &Features, b: &Features) -> f64 {
    (0..3).map(|c| (a[c] - b[c]).powi(2)).sum()
}

fn nearest(p: &Features, centers: &[Features]) -> usize {
    let mut best = 0;
    for (i, c) in centers.iter().enumerate().skip(1) {
        if dist2(p, c) < dist2(p, &centers[best]) {
            best = i;
        }
    }
    best
}

/// Lloyd's k-means with k-means++ seeding. Returns a label per point.
/// Seeding stops early once every point coincides with a chosen center.
pub fn kmeans(points: &[Features], k: usize, seed: u64, max_iter: usize) -> Vec<usize> {
    if points.is_empty() || k == 0 {
        return vec![0; points.len()];
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = vec![points[rng.gen_range(0..points.len())]];
    while centers.len() < k {
        let d: Vec<f64> = points.iter().map(|p| dist2(p, &centers[nearest(p, &centers)])).collect();
        let total: f64 = d.iter().sum();
        if total <= 0.0 {
            break;
        }
        let mut x = rng.gen::<f64>() * total;
        let mut pick = d.iter().rposition(|&v| v > 0.0).expect("positive total");
        for (i, &v) in d.iter().enumerate() {
            if v > 0.0 && x < v {
                pick = i;
                break;
            }
            x -= v;
        }
        centers.push(points[pick]);
    }
    let mut labels: Vec<usize> = points.iter().map(|p| nearest(p, &centers)).collect();
    for _ in 0..max_iter {
        for (ci, c) in centers.iter_mut().enumerate() {
            let members: Vec<&Features> = points.iter().zip(&labels).filter(|(_, &l)| l == ci).map(|(p, _)| p).collect();
            if members.is_empty() {
                continue;
            }
            for dim in 0..3 {
                c[dim] = members.iter().map(|p| p[dim]).sum::<f64>() / members.len() as f64;
            }
        }
        let next: Vec<usize> = points.iter().map(|p| nearest(p, &centers)).collect();
        if next == labels {
            break;
        }
        labels = next;
    }
    labels
}

/// Groups the operators seen in `history` by k-means over standardized
/// features. k is capped at the operator count, empty clusters are dropped
/// and the rest renumbered in order of their first member. γ starts at 1.
pub fn fit_clusters(history: &[CostMatrix], k: usize, seed: u64) -> Result<Vec<OperatorCluster>> {
    if history.len() < 2 {
        return Err(Error::InsufficientHistory {
            needed: 2,
            got: history.len(),
        });
    }
    let keys: Vec<CostKey> = history
        .iter()
        .flat_map(|m| m.entries.keys().copied())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if keys.is_empty() {
        return Ok(Vec::new());
    }
    let raw: Vec<Features> = keys.iter().map(|&key| features(history, key)).collect();
    let labels = kmeans(&standardize(&raw), k.clamp(1, keys.len()), seed, MAX_ITERATIONS);
    let mut order: Vec<usize> = Vec::new();
    for &l in &labels {
        if !order.contains(&l) {
            order.push(l);
        }
    }
    Ok(order
        .iter()
        .enumerate()
        .map(|(cluster_id, &l)| OperatorCluster {
            cluster_id,
            members: keys.iter().zip(&labels).filter(|(_, &x)| x == l).map(|(k, _)| *k).collect(),
            gamma_tenths: GAMMA_MIN_TENTHS,
        })
        .collect())
}
