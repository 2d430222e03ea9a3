use std::collections::BTreeMap;

use crate::bootstrap::RegisterConfig;
use crate::cost::{CostKey, CostMatrix};
use crate::error::Result;
use crate::load::{assignment_load, LoadConfig};
use crate::mapping::{map_window, GoaCostModel};
use crate::query::DependencyChain;

use super::cluster::{OperatorCluster, GAMMA_MAX_TENTHS, GAMMA_MIN_TENTHS};
use super::desp::{predict_window, DespParams};

pub const MAX_PASSES: usize = 5;

/// What the scaled predictions are mapped onto while scoring.
#[derive(Debug, Clone, Copy)]
pub struct ScalingSetup<'a> {
    pub chains: &'a [DependencyChain],
    pub registers: &'a RegisterConfig,
    pub load: LoadConfig,
    pub model: GoaCostModel,
    pub enhanced: bool,
}

/// ceil(B·γ) for every clustered operator; N_in and N_out are left alone.
pub fn scale_matrix(m: &CostMatrix, clusters: &[OperatorCluster]) -> CostMatrix {
    let gamma: BTreeMap<CostKey, u32> = clusters
        .iter()
        .flat_map(|c| c.members.iter().map(move |k| (*k, c.gamma_tenths)))
        .collect();
    let mut out = m.clone();
    for (k, e) in out.entries.iter_mut() {
        let t = gamma.get(k).copied().unwrap_or(GAMMA_MIN_TENTHS) as u128;
        e.b = ((e.b as u128 * t).div_ceil(10)).min(u64::MAX as u128) as u64;
    }
    out
}

/// Σ log₂(1 + load) over windows, each mapped on its scaled prediction and
/// evaluated on its true costs.
pub fn scaling_score(
    clusters: &[OperatorCluster],
    predictions: &[CostMatrix],
    truths: &[CostMatrix],
    setup: &ScalingSetup,
) -> Result<f64> {
    let mut score = 0.0;
    for (p, t) in predictions.iter().zip(truths) {
        let scaled = scale_matrix(p, clusters);
        let a = map_window(setup.chains, setup.registers, &scaled, setup.model, setup.enhanced)?;
        let load = assignment_load(&a, setup.chains, t, setup.registers, &setup.load)?.total;
        score += (1.0 + load).log2();
    }
    Ok(score)
}

/// Cyclic coordinate descent over γ ∈ {1.0, 1.1, …, 3.0} per cluster, in
/// cluster order. A move is taken only when it lowers the score; among
/// equal scores the smallest γ is tried first.
pub fn fit_scaling_with(
    clusters: &[OperatorCluster],
    predictions: &[CostMatrix],
    truths: &[CostMatrix],
    setup: &ScalingSetup,
) -> Result<Vec<OperatorCluster>> {
    let mut cur = clusters.to_vec();
    if predictions.is_empty() {
        return Ok(cur);
    }
    let mut best = scaling_score(&cur, predictions, truths, setup)?;
    for _ in 0..MAX_PASSES {
        let mut moved = false;
        for c in 0..cur.len() {
            let keep = cur[c].gamma_tenths;
            let mut pick: Option<(f64, u32)> = None;
            for t in GAMMA_MIN_TENTHS..=GAMMA_MAX_TENTHS {
                if t == keep {
                    continue;
                }
                cur[c].gamma_tenths = t;
                let s = scaling_score(&cur, predictions, truths, setup)?;
                if pick.is_none_or(|(ps, _)| s < ps) {
                    pick = Some((s, t));
                }
            }
            match pick {
                Some((s, t)) if s < best => {
                    best = s;
                    cur[c].gamma_tenths = t;
                    moved = true;
                }
                _ => cur[c].gamma_tenths = keep,
            }
        }
        if !moved {
            break;
        }
    }
    Ok(cur)
}

/// Fits γ on the training windows from the third one on, each predicted
/// from the windows before it.
pub fn fit_scaling(
    clusters: &[OperatorCluster],
    training: &[CostMatrix],
    params: DespParams,
    setup: &ScalingSetup,
) -> Result<Vec<OperatorCluster>> {
    let mut predictions = Vec::new();
    for w in 2..training.len() {
        predictions.push(predict_window(&training[..w], params)?);
    }
    let truths = training.get(2..).unwrap_or(&[]);
    fit_scaling_with(clusters, &predictions, truths, setup)
}
