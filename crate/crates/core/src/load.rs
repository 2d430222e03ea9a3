//! Stream-processor load for an allocation, without packet-level replay.

use std::collections::BTreeMap;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::bootstrap::RegisterConfig;
use crate::cost::{CostEntry, CostMatrix};
use crate::error::{Error, Result};
use crate::query::{DependencyChain, OperatorRef};

/// Bits one key occupies in a register.
pub const DEFAULT_KEY_BITS: u64 = 32;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LoadMode {
    /// Keys arrive in random order.
    #[default]
    Average,
    /// Single-tuple keys arrive last.
    Best,
    /// Single-tuple keys arrive first.
    Worst,
}

impl std::str::FromStr for LoadMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "average" | "avg" => Ok(LoadMode::Average),
            "best" => Ok(LoadMode::Best),
            "worst" => Ok(LoadMode::Worst),
            other => Err(Error::Precondition(format!("unknown load mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoadConfig {
    pub key_bits: u64,
    pub mode: LoadMode,
}

impl Default for LoadConfig {
    fn default() -> Self {
        LoadConfig {
            key_bits: DEFAULT_KEY_BITS,
            mode: LoadMode::Average,
        }
    }
}

/// Load of one operator holding `alloc` bits, as an exact rational.
///
/// Fully provisioned (or B = 0) operators emit N_out. Otherwise:
/// average `N_out·a/B + N_in·(B−a)/B`, best `N_out + (B−a)/B_key`,
/// worst `N_in − a/B_key`, each clamped to [0, N_in].
pub fn operator_load_exact(entry: &CostEntry, alloc: u64, cfg: &LoadConfig) -> BigRational {
    let int = |v: u64| BigRational::from_integer(BigInt::from(v));
    let n_in = int(entry.n_in);
    let n_out = int(entry.n_out.min(entry.n_in));
    if entry.b == 0 || alloc >= entry.b {
        return n_out;
    }
    let (a, b) = (int(alloc), int(entry.b));
    let key = int(cfg.key_bits.max(1));
    let raw = match cfg.mode {
        LoadMode::Average => (&n_out * &a + &n_in * (&b - &a)) / &b,
        LoadMode::Best => n_out + (&b - &a) / key,
        LoadMode::Worst => &n_in - a / key,
    };
    raw.max(BigRational::zero()).min(n_in)
}

/// [`operator_load_exact`] as a float.
pub fn operator_load(entry: &CostEntry, alloc: u64, cfg: &LoadConfig) -> f64 {
    ratio_to_f64(&operator_load_exact(entry, alloc, cfg))
}

pub fn ratio_to_f64(r: &BigRational) -> f64 {
    r.to_f64().unwrap_or(f64::INFINITY)
}

/// Tuples from keys that found no register slot, in the average case:
/// `N_in·(B−a)/B`.
pub fn spilled_load(entry: &CostEntry, alloc: u64) -> f64 {
    if entry.b == 0 || alloc >= entry.b {
        return 0.0;
    }
    ratio_to_f64(&BigRational::new(
        BigInt::from(entry.n_in) * BigInt::from(entry.b - alloc),
        BigInt::from(entry.b),
    ))
}

/// Per-operator line of a load estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatorLoad {
    pub op: OperatorRef,
    pub alloc_bits: u64,
    pub req_bits: u64,
    pub rho: f64,
    /// Zero for operators bypassed because an earlier one spilled.
    pub load: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadEstimate {
    pub per_operator: Vec<OperatorLoad>,
    pub total: f64,
    pub mode: LoadMode,
}

/// Register → operator, as stored in a window report.
pub type OpAssignment = BTreeMap<usize, OperatorRef>;

/// Bits held by every operator under `assignment`.
pub fn allocations(assignment: &OpAssignment, registers: &RegisterConfig) -> Result<BTreeMap<OperatorRef, u64>> {
    let mut out: BTreeMap<OperatorRef, u64> = BTreeMap::new();
    for (&r, &op) in assignment {
        let reg = registers
            .registers
            .get(r)
            .ok_or_else(|| Error::Infeasible(format!("register {r} does not exist")))?;
        *out.entry(op).or_default() += reg.bits;
    }
    Ok(out)
}

/// Total load with the exact sum alongside the per-operator floats.
pub fn assignment_load_exact(
    assignment: &OpAssignment,
    chains: &[DependencyChain],
    truth: &CostMatrix,
    registers: &RegisterConfig,
    cfg: &LoadConfig,
) -> Result<(LoadEstimate, BigRational)> {
    check_structure(assignment, chains, registers)?;
    let alloc = allocations(assignment, registers)?;
    let mut per_operator = Vec::new();
    let mut total = BigRational::zero();
    for c in chains {
        let mut bypassed = false;
        for (pos, &op) in c.operators.iter().enumerate() {
            let e = truth.entry(op)?;
            let a = alloc.get(&op).copied().unwrap_or(0);
            let rho = if e.b == 0 { 1.0 } else { (a as f64 / e.b as f64).min(1.0) };
            let mut load = 0.0;
            if !bypassed {
                let last = pos + 1 == c.operators.len();
                let under = e.b > 0 && a < e.b;
                if under || last {
                    let exact = operator_load_exact(e, a, cfg);
                    load = ratio_to_f64(&exact);
                    total += exact;
                    bypassed = true;
                }
            }
            per_operator.push(OperatorLoad {
                op,
                alloc_bits: a,
                req_bits: e.b,
                rho,
                load,
            });
        }
    }
    let total_f = ratio_to_f64(&total);
    Ok((
        LoadEstimate {
            per_operator,
            total: total_f,
            mode: cfg.mode,
        },
        total,
    ))
}

/// Walks every chain in order. The first operator holding less than its
/// true B contributes its operator load and the rest of the chain runs off
/// the switch; a chain with every operator provisioned contributes the last
/// operator's N_out.
pub fn assignment_load(
    assignment: &OpAssignment,
    chains: &[DependencyChain],
    truth: &CostMatrix,
    registers: &RegisterConfig,
    cfg: &LoadConfig,
) -> Result<LoadEstimate> {
    assignment_load_exact(assignment, chains, truth, registers, cfg).map(|(e, _)| e)
}

/// Registers must belong to chain operators and every parent register must
/// sit on a lower stage than every child register.
fn check_structure(assignment: &OpAssignment, chains: &[DependencyChain], registers: &RegisterConfig) -> Result<()> {
    let mut stages: BTreeMap<OperatorRef, (usize, usize)> = BTreeMap::new();
    for (&r, op) in assignment {
        let reg = registers
            .registers
            .get(r)
            .ok_or_else(|| Error::Infeasible(format!("register {r} does not exist")))?;
        let e = stages.entry(*op).or_insert((reg.stage, reg.stage));
        e.0 = e.0.min(reg.stage);
        e.1 = e.1.max(reg.stage);
    }
    let known: std::collections::BTreeSet<OperatorRef> =
        chains.iter().flat_map(|c| c.operators.iter().copied()).collect();
    if let Some(op) = stages.keys().find(|o| !known.contains(o)) {
        return Err(Error::Infeasible(format!("operator {op} is not part of any chain")));
    }
    for c in chains {
        for w in c.operators.windows(2) {
            if let (Some(p), Some(ch)) = (stages.get(&w[0]), stages.get(&w[1])) {
                if p.1 >= ch.0 {
                    return Err(Error::Infeasible(format!(
                        "{} reaches stage {} but {} starts at stage {}",
                        w[0], p.1, w[1], ch.0
                    )));
                }
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bootstrap::Register;
    use crate::cost::CostKey;

    fn avg() -> LoadConfig {
        LoadConfig::default()
    }

    #[test]
    fn five_evicted_keys_of_ten_tuples_add_fifty() {
        // 15 keys of 10 tuples each, room for 10 of them
        let e = CostEntry::new(15 * 32, 150, 15);
        assert_eq!(spilled_load(&e, 10 * 32), 50.0);
        assert_eq!(operator_load(&e, 10 * 32, &avg()), 10.0 + 50.0);
    }

    #[test]
    fn boundary_identities() {
        let e = CostEntry::new(200, 100, 20);
        for mode in [LoadMode::Average, LoadMode::Best, LoadMode::Worst] {
            let cfg = LoadConfig { key_bits: 10, mode };
            assert_eq!(operator_load(&e, 200, &cfg), 20.0);
            assert_eq!(operator_load(&e, 500, &cfg), 20.0);
        }
        assert_eq!(operator_load(&e, 0, &avg()), 100.0);
        assert_eq!(operator_load(&CostEntry::new(0, 0, 0), 0, &avg()), 0.0);
    }

    #[test]
    fn three_modes_by_hand() {
        let e = CostEntry::new(200, 100, 20);
        let cfg = |mode| LoadConfig { key_bits: 10, mode };
        assert_eq!(operator_load(&e, 150, &cfg(LoadMode::Average)), 40.0);
        assert_eq!(operator_load(&e, 150, &cfg(LoadMode::Best)), 25.0);
        assert_eq!(operator_load(&e, 150, &cfg(LoadMode::Worst)), 85.0);
    }

    #[test]
    fn worst_case_clamps_at_zero() {
        let e = CostEntry::new(1000, 3, 1);
        let cfg = LoadConfig { key_bits: 1, mode: LoadMode::Worst };
        assert_eq!(operator_load(&e, 500, &cfg), 0.0);
    }

    fn op(qid: u32, k: usize) -> OperatorRef {
        OperatorRef { qid, prior: 0, level: 32, k }
    }

    fn fixture() -> (Vec<DependencyChain>, CostMatrix, RegisterConfig) {
        let chains = vec![DependencyChain { chain_id: 0, operators: vec![op(1, 0), op(1, 1)] }];
        let mut m = CostMatrix::new(0);
        m.entries.insert(CostKey::from(op(1, 0)), CostEntry::new(100, 80, 40));
        m.entries.insert(CostKey::from(op(1, 1)), CostEntry::new(50, 40, 10));
        let regs = RegisterConfig {
            registers: vec![
                Register { id: 0, stage: 0, bits: 50 },
                Register { id: 1, stage: 0, bits: 50 },
                Register { id: 2, stage: 1, bits: 50 },
            ],
        };
        (chains, m, regs)
    }

    #[test]
    fn bypass_rule() {
        let (chains, m, regs) = fixture();
        // satisfied chain emits the last N_out
        let full: OpAssignment = [(0, op(1, 0)), (1, op(1, 0)), (2, op(1, 1))].into();
        assert_eq!(assignment_load(&full, &chains, &m, &regs, &avg()).unwrap().total, 10.0);
        // second operator without registers spills its whole input
        let first: OpAssignment = [(0, op(1, 0)), (1, op(1, 0))].into();
        assert_eq!(assignment_load(&first, &chains, &m, &regs, &avg()).unwrap().total, 40.0);
        // half-provisioned first operator: second one is ignored
        let half: OpAssignment = [(0, op(1, 0)), (2, op(1, 1))].into();
        let est = assignment_load(&half, &chains, &m, &regs, &avg()).unwrap();
        assert_eq!(est.total, 40.0 * 0.5 + 80.0 * 0.5);
        assert_eq!(est.per_operator[1].load, 0.0);
        // nothing assigned
        let none = OpAssignment::new();
        assert_eq!(assignment_load(&none, &chains, &m, &regs, &avg()).unwrap().total, 80.0);
    }

    #[test]
    fn stage_order_violation_is_an_error() {
        let (chains, m, regs) = fixture();
        let bad: OpAssignment = [(0, op(1, 0)), (1, op(1, 1))].into();
        assert!(matches!(
            assignment_load(&bad, &chains, &m, &regs, &avg()),
            Err(Error::Infeasible(_))
        ));
    }
}
