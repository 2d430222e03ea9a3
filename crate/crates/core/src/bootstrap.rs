//! Compile-time plan: refinement plan selection by total operator memory,
//! and register sizing.

use std::collections::BTreeMap;
use std::path::Path;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::cost::{CostKey, CostMatrix};
use crate::error::{Error, Result};
use crate::query::{build_chains_for_shapes, DependencyChain, OperatorRef, QueryShape, RefinementPlan};

/// Longest level sequence considered per query, root included.
pub const MAX_PLAN_LEN: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SwitchConfig {
    pub stages: usize,
    pub alus_per_stage: usize,
    pub stage_mem_bits: u64,
    pub max_reg_bits: u64,
}

impl Default for SwitchConfig {
    /// 12 stages of 8 stateful ALUs, 1.5 Mb per stage and 0.75 Mb per register.
    fn default() -> Self {
        SwitchConfig {
            stages: 12,
            alus_per_stage: 8,
            stage_mem_bits: 1_500_000,
            max_reg_bits: 750_000,
        }
    }
}

impl SwitchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.stages == 0 || self.alus_per_stage == 0 || self.stage_mem_bits == 0 || self.max_reg_bits == 0 {
            return Err(Error::Precondition("switch parameters must be positive".into()));
        }
        if self.max_reg_bits > self.stage_mem_bits {
            return Err(Error::Precondition(
                "per-register cap exceeds per-stage memory".into(),
            ));
        }
        Ok(())
    }

    pub fn total_regs(&self) -> usize {
        self.stages * self.alus_per_stage
    }

    pub fn total_mem(&self) -> u64 {
        self.stages as u64 * self.stage_mem_bits
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: SwitchConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Register {
    pub id: usize,
    pub stage: usize,
    pub bits: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RegisterConfig {
    pub registers: Vec<Register>,
}

impl RegisterConfig {
    pub fn validate(&self, cfg: &SwitchConfig) -> Result<()> {
        let mut mem = vec![0u64; cfg.stages];
        let mut count = vec![0usize; cfg.stages];
        for (idx, r) in self.registers.iter().enumerate() {
            if r.id != idx {
                return Err(Error::Precondition(format!(
                    "register ids must be 0..n in order, found {} at {idx}",
                    r.id
                )));
            }
            if r.stage >= cfg.stages {
                return Err(Error::Precondition(format!("register {} on missing stage {}", r.id, r.stage)));
            }
            if r.bits > cfg.max_reg_bits {
                return Err(Error::Precondition(format!("register {} exceeds the per-register cap", r.id)));
            }
            mem[r.stage] += r.bits;
            count[r.stage] += 1;
        }
        for s in 0..cfg.stages {
            if mem[s] > cfg.stage_mem_bits || count[s] > cfg.alus_per_stage {
                return Err(Error::Precondition(format!("stage {s} over capacity")));
            }
        }
        Ok(())
    }

    pub fn total_bits(&self) -> u64 {
        self.registers.iter().map(|r| r.bits).sum()
    }
}

/// Refinement plan plus register layout. Chains are derived, not stored.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BootstrapPlan {
    pub refinement: RefinementPlan,
    pub registers: RegisterConfig,
}

impl BootstrapPlan {
    pub fn chains(&self, shapes: &[QueryShape]) -> Result<Vec<DependencyChain>> {
        build_chains_for_shapes(&self.refinement, shapes)
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

/// Per-window TOM of a plan and its mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TomSeries {
    pub per_window: Vec<u64>,
    pub mean: f64,
}

fn plan_keys(plan: &RefinementPlan, shapes: &[QueryShape]) -> Vec<CostKey> {
    let mut keys = Vec::new();
    for s in shapes {
        for (i, j) in plan.transitions(s.qid) {
            keys.extend((0..s.n_ops).map(|k| CostKey { qid: s.qid, i, j, k }));
        }
    }
    keys
}

/// Sum of B over the plan's stateful operators, per window.
pub fn tom_of_plan(plan: &RefinementPlan, shapes: &[QueryShape], history: &[CostMatrix]) -> Result<TomSeries> {
    let keys = plan_keys(plan, shapes);
    let mut per_window = Vec::with_capacity(history.len());
    for m in history {
        let mut sum = 0u64;
        for k in &keys {
            sum += m.get(*k)?.b;
        }
        per_window.push(sum);
    }
    let mean = if per_window.is_empty() {
        0.0
    } else {
        per_window.iter().map(|&v| v as f64).sum::<f64>() / per_window.len() as f64
    };
    Ok(TomSeries { per_window, mean })
}

/// Increasing level sequences from the root to the finest level, at most
/// `max_len` levels long, in lexicographic order.
pub fn candidate_sequences(levels: &[u8], max_len: usize) -> Vec<Vec<u8>> {
    let (Some(&root), Some(&finest)) = (levels.first(), levels.last()) else {
        return Vec::new();
    };
    if root == finest {
        return Vec::new();
    }
    let middle = &levels[1..levels.len() - 1];
    let mut out = Vec::new();
    let max_mid = max_len.saturating_sub(2);
    fn rec(middle: &[u8], start: usize, cur: &mut Vec<u8>, max_mid: usize, out: &mut Vec<Vec<u8>>) {
        out.push(cur.clone());
        if cur.len() == max_mid {
            return;
        }
        for idx in start..middle.len() {
            cur.push(middle[idx]);
            rec(middle, idx + 1, cur, max_mid, out);
            cur.pop();
        }
    }
    let mut mids = Vec::new();
    rec(middle, 0, &mut Vec::new(), max_mid, &mut mids);
    for m in mids {
        let mut seq = vec![root];
        seq.extend(m);
        seq.push(finest);
        out.push(seq);
    }
    out.sort();
    out
}

/// Outcome of plan selection, with the objective for inspection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanChoice {
    pub plan: RefinementPlan,
    pub n_operators: usize,
    pub mean_tom: f64,
    /// U(m, o) = (total memory - mean TOM) * (total registers - operators).
    pub objective: f64,
}

fn seq_tom(s: &QueryShape, seq: &[u8], history: &[CostMatrix]) -> Result<u64> {
    let mut sum = 0u64;
    for w in seq.windows(2) {
        for k in 0..s.n_ops {
            for m in history {
                sum += m.get(CostKey { qid: s.qid, i: w[0], j: w[1], k })?.b;
            }
        }
    }
    Ok(sum)
}

/// For every total operator count, the plan with the least TOM summed over
/// the history. Ties go to the lexicographically smaller plan.
pub fn min_tom_by_operator_count(
    shapes: &[QueryShape],
    history: &[CostMatrix],
) -> Result<BTreeMap<usize, (u64, RefinementPlan)>> {
    let mut sorted: Vec<&QueryShape> = shapes.iter().collect();
    sorted.sort_by_key(|s| s.qid);
    // k -> (tom, per-query sequences in qid order)
    let mut dp: BTreeMap<usize, (u64, Vec<Vec<u8>>)> = BTreeMap::new();
    dp.insert(0, (0, Vec::new()));
    for s in sorted {
        // best sequence for each operator count of this query
        let mut local: BTreeMap<usize, (u64, Vec<u8>)> = BTreeMap::new();
        for seq in candidate_sequences(&s.levels, MAX_PLAN_LEN) {
            let k = (seq.len() - 1) * s.n_ops;
            let tom = seq_tom(s, &seq, history)?;
            let better = match local.get(&k) {
                None => true,
                Some((t, q)) => (tom, &seq) < (*t, q),
            };
            if better {
                local.insert(k, (tom, seq));
            }
        }
        let mut next: BTreeMap<usize, (u64, Vec<Vec<u8>>)> = BTreeMap::new();
        for (ka, (ta, pa)) in &dp {
            for (kb, (tb, sb)) in &local {
                let mut p = pa.clone();
                p.push(sb.clone());
                let cand = (ta + tb, p);
                let k = ka + kb;
                let better = match next.get(&k) {
                    None => true,
                    Some(cur) => (cand.0, &cand.1) < (cur.0, &cur.1),
                };
                if better {
                    next.insert(k, cand);
                }
            }
        }
        dp = next;
    }
    let mut qids: Vec<u32> = shapes.iter().map(|s| s.qid).collect();
    qids.sort_unstable();
    Ok(dp
        .into_iter()
        .map(|(k, (t, seqs))| {
            let plan = RefinementPlan {
                per_query: qids.iter().copied().zip(seqs).collect(),
            };
            (k, (t, plan))
        })
        .collect())
}

/// Picks the refinement plan maximising U(m, o) = m·o with
/// m = total memory − min mean TOM at k operators and o = total registers − k.
/// Ties go to the smaller k.
pub fn select_refinement_plan(shapes: &[QueryShape], history: &[CostMatrix], cfg: &SwitchConfig) -> Result<PlanChoice> {
    if history.is_empty() {
        return Err(Error::InsufficientHistory { needed: 1, got: 0 });
    }
    let n = history.len() as i128;
    let total_mem = cfg.total_mem() as i128;
    let total_regs = cfg.total_regs() as i128;
    let mut best: Option<(i128, usize, u64, RefinementPlan)> = None;
    for (k, (tom, plan)) in min_tom_by_operator_count(shapes, history)? {
        let o = total_regs - k as i128;
        // n·m, kept integral
        let nm = total_mem * n - tom as i128;
        if o <= 0 || nm <= 0 {
            continue;
        }
        let u = nm.checked_mul(o).ok_or(Error::Overflow("plan objective"))?;
        if best.as_ref().is_none_or(|b| u > b.0) {
            best = Some((u, k, tom, plan));
        }
    }
    let Some((u, k, tom, plan)) = best else {
        return Err(Error::NoFeasiblePlan(format!(
            "no operator count fits {} registers and {} bits",
            cfg.total_regs(),
            cfg.total_mem()
        )));
    };
    Ok(PlanChoice {
        plan,
        n_operators: k,
        mean_tom: tom as f64 / n as f64,
        objective: u as f64 / n as f64,
    })
}

/// Slice scale S = min(maxReg / A, 2·stageMem / (A(A+1))), exact.
pub fn snr_scale(cfg: &SwitchConfig) -> Ratio<u128> {
    let a = cfg.alus_per_stage as u128;
    let by_reg = Ratio::new(cfg.max_reg_bits as u128, a);
    let by_stage = Ratio::new(2 * cfg.stage_mem_bits as u128, a * (a + 1));
    by_reg.min(by_stage)
}

/// Exact register sizes of one stage: S, 2S, …, A·S.
pub fn snr_slice(cfg: &SwitchConfig) -> Vec<Ratio<u128>> {
    let s = snr_scale(cfg);
    (1..=cfg.alus_per_stage as u128).map(|k| s * k).collect()
}

/// The slice, floored to whole bits and repeated on every stage.
pub fn snr_sizes(cfg: &SwitchConfig) -> RegisterConfig {
    let slice: Vec<u64> = snr_slice(cfg).iter().map(|r| r.to_integer() as u64).collect();
    let mut registers = Vec::with_capacity(cfg.total_regs());
    for stage in 0..cfg.stages {
        for &bits in &slice {
            registers.push(Register {
                id: registers.len(),
                stage,
                bits,
            });
        }
    }
    RegisterConfig { registers }
}

/// Register layout sized to given demands, plus which registers were cut for which operator.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExactFit {
    pub registers: RegisterConfig,
    pub placement: BTreeMap<OperatorRef, Vec<usize>>,
    /// Operators that got less than their demand.
    pub truncated: Vec<OperatorRef>,
}

/// Sizes registers to the demands by first-fit decreasing over stages.
///
/// Operators are placed by chain position (all first operators, then all
/// second ones, …) and by demand, largest first. An operator goes to the
/// earliest stage after its parent's last stage that can hold its whole
/// demand, split into registers of at most `max_reg_bits`. When none can,
/// it gets whatever the roomiest eligible stage has left, and its
/// descendants get nothing.
pub fn exact_fit_sizes(
    chains: &[DependencyChain],
    demand: &BTreeMap<OperatorRef, u64>,
    cfg: &SwitchConfig,
) -> ExactFit {
    let mut free_mem = vec![cfg.stage_mem_bits; cfg.stages];
    let mut free_alu = vec![cfg.alus_per_stage; cfg.stages];
    // registers per stage as (bits, op)
    let mut cut: Vec<Vec<(u64, OperatorRef)>> = vec![Vec::new(); cfg.stages];
    let mut last_stage: BTreeMap<OperatorRef, usize> = BTreeMap::new();
    let mut blocked: Vec<bool> = vec![false; chains.len()];
    let mut truncated = Vec::new();

    let depth = chains.iter().map(|c| c.operators.len()).max().unwrap_or(0);
    for pos in 0..depth {
        let mut layer: Vec<(usize, OperatorRef, u64)> = chains
            .iter()
            .enumerate()
            .filter(|(ci, c)| pos < c.operators.len() && !blocked[*ci])
            .map(|(ci, c)| {
                let op = c.operators[pos];
                (ci, op, demand.get(&op).copied().unwrap_or(0))
            })
            .collect();
        layer.sort_by(|a, b| b.2.cmp(&a.2).then(a.0.cmp(&b.0)));
        for (ci, op, need) in layer {
            let earliest = if pos == 0 {
                0
            } else {
                let parent = chains[ci].operators[pos - 1];
                match last_stage.get(&parent) {
                    Some(&s) => s + 1,
                    None => 0,
                }
            };
            if need == 0 {
                continue;
            }
            let room = |s: usize| -> u64 { free_mem[s].min(free_alu[s] as u64 * cfg.max_reg_bits) };
            let whole = (earliest..cfg.stages).find(|&s| room(s) >= need);
            let (stage, amount) = match whole {
                Some(s) => (s, need),
                None => {
                    blocked[ci] = true;
                    truncated.push(op);
                    match (earliest..cfg.stages).filter(|&s| room(s) > 0).max_by(|&a, &b| room(a).cmp(&room(b)).then(b.cmp(&a))) {
                        Some(s) => (s, room(s)),
                        None => continue,
                    }
                }
            };
            let mut left = amount;
            while left > 0 {
                let piece = left.min(cfg.max_reg_bits);
                cut[stage].push((piece, op));
                free_mem[stage] -= piece;
                free_alu[stage] -= 1;
                left -= piece;
            }
            last_stage.insert(op, stage);
        }
    }

    let mut registers = Vec::new();
    let mut placement: BTreeMap<OperatorRef, Vec<usize>> = BTreeMap::new();
    for (stage, regs) in cut.into_iter().enumerate() {
        for (bits, op) in regs {
            placement.entry(op).or_default().push(registers.len());
            registers.push(Register {
                id: registers.len(),
                stage,
                bits,
            });
        }
    }
    ExactFit {
        registers: RegisterConfig { registers },
        placement,
        truncated,
    }
}

/// Demands for exact-fit sizing: ceil(B · factor) of a representative matrix.
pub fn demands(chains: &[DependencyChain], m: &CostMatrix, factor: f64) -> Result<BTreeMap<OperatorRef, u64>> {
    let mut out = BTreeMap::new();
    for c in chains {
        for &op in &c.operators {
            let b = m.entry(op)?.b;
            out.insert(op, (b as f64 * factor).ceil() as u64);
        }
    }
    Ok(out)
}
