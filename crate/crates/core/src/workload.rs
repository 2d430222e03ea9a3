//! Cost-matrix synthesis from packet windows, and variability reports.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::cost::{CostEntry, CostKey, CostMatrix};
use crate::error::{Error, Result};
use crate::pipeline::{execute_pipeline, EntryBits, Relation};
use crate::query::{refine_query, stateful_operators, QuerySpec};
use crate::trace::{split_windows, PacketRecord};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorkloadConfig {
    pub window_sec: f64,
    pub speedup: f64,
    pub entry_bits: EntryBits,
}

impl Default for WorkloadConfig {
    fn default() -> Self {
        WorkloadConfig {
            window_sec: 3.0,
            speedup: 1.0,
            entry_bits: EntryBits::default(),
        }
    }
}

/// Key prefixes a query reported at a level, keyed by (qid, level).
pub type AllowSets = BTreeMap<(u32, u8), BTreeSet<u64>>;

/// Number of entries a full matrix has: sum over queries of C(|L|,2)·|O|.
pub fn expected_entry_count(queries: &[QuerySpec]) -> usize {
    queries
        .iter()
        .map(|q| {
            let l = q.levels.len();
            l * l.saturating_sub(1) / 2 * q.n_stateful()
        })
        .sum()
}

/// The refined query for (i, j) with its full pipeline (stateless tail kept),
/// so one run yields every stateful operator's entry and the query output.
fn refined_full(q: &QuerySpec, i: u8, j: u8, allow: Option<&BTreeSet<u64>>) -> Result<QuerySpec> {
    let stateful = stateful_operators(q);
    let last = stateful.len().checked_sub(1).ok_or_else(|| Error::InvalidQuery {
        qid: q.qid,
        reason: "no stateful operators".into(),
    })?;
    let cut = stateful[last].0;
    let mut r = refine_query(q, i, j, last, allow)?;
    r.ops.extend(q.ops[cut + 1..].iter().cloned());
    Ok(r)
}

/// Builds one window's matrix.
///
/// For a transition (i, j) with i above the root, only keys whose level-i
/// prefix was reported by the root-to-i query in the previous window pass.
/// `prior` is `None` for the first window, where every prefix passes.
/// Returns the matrix and the allow-sets to hand to the next window.
pub fn generate_cost_matrix(
    queries: &[QuerySpec],
    window: usize,
    packets: &Relation,
    prior: Option<&AllowSets>,
    bits: &EntryBits,
) -> Result<(CostMatrix, AllowSets)> {
    let mut m = CostMatrix::new(window);
    let mut next = AllowSets::new();
    for q in queries {
        if q.n_stateful() == 0 {
            continue;
        }
        let key = &q.refinement_key.name;
        for (a, &i) in q.levels.iter().enumerate() {
            for &j in &q.levels[a + 1..] {
                let empty = BTreeSet::new();
                let allow = match prior {
                    Some(p) if i > 0 => Some(p.get(&(q.qid, i)).unwrap_or(&empty)),
                    _ => None,
                };
                let refined = refined_full(q, i, j, allow)?;
                let ex = execute_pipeline(&refined, packets, bits)?;
                for (k, e) in ex.stateful.iter().enumerate() {
                    m.entries.insert(CostKey { qid: q.qid, i, j, k }, *e);
                }
                if i == 0 {
                    let c = ex.output.column(key).ok_or_else(|| Error::InvalidQuery {
                        qid: q.qid,
                        reason: format!("query output does not carry refinement key `{key}`"),
                    })?;
                    next.insert(
                        (q.qid, j),
                        ex.output.rows.iter().map(|r| r[c]).collect(),
                    );
                }
            }
        }
    }
    Ok((m, next))
}

/// Windows the trace and builds one matrix per window, in order.
pub fn generate_cost_history(
    queries: &[QuerySpec],
    packets: &[PacketRecord],
    cfg: &WorkloadConfig,
) -> Result<Vec<CostMatrix>> {
    let windows = split_windows(packets, cfg.window_sec, cfg.speedup)?;
    let mut out = Vec::with_capacity(windows.len());
    let mut prior: Option<AllowSets> = None;
    for (w, pkts) in windows.iter().enumerate() {
        let rel = Relation::from_packets(pkts);
        let (m, next) = generate_cost_matrix(queries, w, &rel, prior.as_ref(), &cfg.entry_bits)?;
        out.push(m);
        prior = Some(next);
    }
    Ok(out)
}

/// Population coefficient of variation. Zero when the mean is zero.
pub fn cov(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if mean == 0.0 {
        return 0.0;
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    var.sqrt() / mean
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovReport {
    pub per_operator: BTreeMap<CostKey, f64>,
    /// CoV of the per-window sum of B over the same operators.
    pub aggregate: f64,
}

/// CoV of B across windows for every key seen in the history.
pub fn cov_report(history: &[CostMatrix]) -> Result<CovReport> {
    let keys: Vec<CostKey> = history
        .iter()
        .flat_map(|m| m.entries.keys().copied())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    cov_report_for(history, &keys)
}

/// Same as [`cov_report`] restricted to `keys`; absent entries count as zero.
pub fn cov_report_for(history: &[CostMatrix], keys: &[CostKey]) -> Result<CovReport> {
    if history.len() < 2 {
        return Err(Error::InsufficientHistory {
            needed: 2,
            got: history.len(),
        });
    }
    let b = |m: &CostMatrix, k: &CostKey| m.entries.get(k).map(|e| e.b).unwrap_or(0) as f64;
    let per_operator = keys
        .iter()
        .map(|k| {
            let series: Vec<f64> = history.iter().map(|m| b(m, k)).collect();
            (*k, cov(&series))
        })
        .collect();
    let totals: Vec<f64> = history
        .iter()
        .map(|m| keys.iter().map(|k| b(m, k)).sum())
        .collect();
    Ok(CovReport {
        per_operator,
        aggregate: cov(&totals),
    })
}

/// Checks N_out ≤ N_in and B = 0 ⇔ N_out = 0 for every entry.
pub fn check_entry_invariants(m: &CostMatrix) -> Result<()> {
    for (k, e) in &m.entries {
        let CostEntry { b, n_in, n_out } = *e;
        if n_out > n_in || ((b == 0) != (n_out == 0)) {
            return Err(Error::Precondition(format!(
                "entry {k} violates cost invariants: B={b} n_in={n_in} n_out={n_out}"
            )));
        }
    }
    Ok(())
}
