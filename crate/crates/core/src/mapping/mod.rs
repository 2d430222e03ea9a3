//! Operator-to-register assignment with dependency chains.
//!
//! Costs are exact rationals. An operator with size `s`, satisfied cost
//! `c_s` and unsatisfied cost `c_u` that holds `a` bits costs
//! `c_s·ρ + c_u·(1−ρ)` with `ρ = min(a/s, 1)`.

mod exact;
mod greedy;

use num_rational::Ratio;
use num_bigint::BigInt;
use num_rational::BigRational;
use serde::{Deserialize, Serialize};

use crate::bootstrap::RegisterConfig;
use crate::cost::CostMatrix;
use crate::error::{Error, Result};
use crate::load::OpAssignment;
use crate::query::{DependencyChain, OperatorRef};

pub use exact::{exact_map, MAX_EXACT_OPERATORS, MAX_EXACT_REGISTERS};
pub use greedy::greedy_map;

/// Cost of one operator or chain. Exact while sizes, capacities and costs
/// stay below [`MAX_QUANTITY`].
pub type Cost = Ratio<i128>;

/// Sum of chain costs; denominators of different chains multiply.
pub type TotalCost = BigRational;

/// Bound on sizes, capacities and costs accepted by [`GoaInstance::new`].
pub const MAX_QUANTITY: u64 = 1 << 36;

pub fn to_total(c: &Cost) -> TotalCost {
    BigRational::new(BigInt::from(*c.numer()), BigInt::from(*c.denom()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoaRegister {
    pub id: usize,
    pub stage: usize,
    pub cap: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoaOperator {
    pub id: usize,
    pub size: u64,
    pub c_s: u64,
    pub c_u: u64,
    pub chain: usize,
    pub pos: usize,
}

/// Registers, operators and the chains partitioning the operators.
/// Register and operator ids equal their indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "GoaRepr", into = "GoaRepr")]
pub struct GoaInstance {
    pub registers: Vec<GoaRegister>,
    pub operators: Vec<GoaOperator>,
    /// Operator ids of each chain, in chain order.
    pub chains: Vec<Vec<usize>>,
    n_stages: usize,
}

#[derive(Serialize, Deserialize)]
struct GoaRepr {
    registers: Vec<GoaRegister>,
    operators: Vec<GoaOperator>,
}

impl TryFrom<GoaRepr> for GoaInstance {
    type Error = Error;
    fn try_from(r: GoaRepr) -> Result<Self> {
        GoaInstance::new(r.registers, r.operators)
    }
}

impl From<GoaInstance> for GoaRepr {
    fn from(g: GoaInstance) -> Self {
        GoaRepr {
            registers: g.registers,
            operators: g.operators,
        }
    }
}

impl GoaInstance {
    pub fn new(registers: Vec<GoaRegister>, operators: Vec<GoaOperator>) -> Result<Self> {
        let bad = |m: String| Err(Error::Precondition(m));
        for (i, r) in registers.iter().enumerate() {
            if r.id != i {
                return bad(format!("register id {} at index {i}", r.id));
            }
            if r.cap > MAX_QUANTITY {
                return bad(format!("register {i} exceeds {MAX_QUANTITY} bits"));
            }
        }
        let n_chains = operators.iter().map(|o| o.chain + 1).max().unwrap_or(0);
        let mut chains: Vec<Vec<Option<usize>>> = vec![Vec::new(); n_chains];
        for (i, o) in operators.iter().enumerate() {
            if o.id != i {
                return bad(format!("operator id {} at index {i}", o.id));
            }
            if o.size == 0 {
                return bad(format!("operator {i} has size 0"));
            }
            if o.size > MAX_QUANTITY || o.c_u > MAX_QUANTITY {
                return bad(format!("operator {i} exceeds {MAX_QUANTITY} in size or cost"));
            }
            if o.c_s > o.c_u {
                return bad(format!("operator {i} has c_s > c_u"));
            }
            let c = &mut chains[o.chain];
            if c.len() <= o.pos {
                c.resize(o.pos + 1, None);
            }
            if c[o.pos].replace(i).is_some() {
                return bad(format!("chain {} position {} used twice", o.chain, o.pos));
            }
        }
        let chains = chains
            .into_iter()
            .enumerate()
            .map(|(ci, c)| {
                if c.is_empty() {
                    return Err(Error::Precondition(format!("chain {ci} is empty")));
                }
                c.into_iter()
                    .collect::<Option<Vec<usize>>>()
                    .ok_or_else(|| Error::Precondition(format!("chain {ci} has a gap")))
            })
            .collect::<Result<Vec<_>>>()?;
        let n_stages = registers.iter().map(|r| r.stage + 1).max().unwrap_or(0);
        Ok(GoaInstance {
            registers,
            operators,
            chains,
            n_stages,
        })
    }

    pub fn n_stages(&self) -> usize {
        self.n_stages
    }

    pub fn parent(&self, op: usize) -> Option<usize> {
        let o = &self.operators[op];
        (o.pos > 0).then(|| self.chains[o.chain][o.pos - 1])
    }

    pub fn child(&self, op: usize) -> Option<usize> {
        let o = &self.operators[op];
        self.chains[o.chain].get(o.pos + 1).copied()
    }
}

/// Partial map from register to operator.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Assignment {
    /// Indexed by register id.
    pub slots: Vec<Option<usize>>,
}

impl Assignment {
    pub fn empty(n_registers: usize) -> Self {
        Assignment {
            slots: vec![None; n_registers],
        }
    }

    pub fn get(&self, reg: usize) -> Option<usize> {
        self.slots.get(reg).copied().flatten()
    }

    pub fn assign(&mut self, reg: usize, op: usize) {
        self.slots[reg] = Some(op);
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.slots
            .iter()
            .enumerate()
            .filter_map(|(r, o)| o.map(|o| (r, o)))
    }

    pub fn capacity(&self, inst: &GoaInstance) -> u64 {
        self.iter().map(|(r, _)| inst.registers[r].cap).sum()
    }

    /// Bits assigned to every operator.
    pub fn allocations(&self, inst: &GoaInstance) -> Vec<u64> {
        let mut a = vec![0u64; inst.operators.len()];
        for (r, o) in self.iter() {
            a[o] += inst.registers[r].cap;
        }
        a
    }
}

/// ρ = min(assigned / size, 1).
pub fn satisfaction_ratio(inst: &GoaInstance, alpha: &Assignment, op: usize) -> Ratio<i128> {
    let alloc: u64 = alpha
        .iter()
        .filter(|&(_, o)| o == op)
        .map(|(r, _)| inst.registers[r].cap)
        .sum();
    let size = inst.operators[op].size;
    if alloc >= size {
        Ratio::from_integer(1)
    } else {
        Ratio::new(alloc as i128, size as i128)
    }
}

/// Cost of one operator holding `alloc` bits.
pub fn operator_cost(op: &GoaOperator, alloc: u64) -> Cost {
    if alloc >= op.size {
        return Cost::from_integer(op.c_s as i128);
    }
    let s = op.size as i128;
    let num = op.c_u as i128 * s - (op.c_u as i128 - op.c_s as i128) * alloc as i128;
    Cost::new(num, s)
}

pub(crate) fn chain_cost_with(inst: &GoaInstance, chain: &[usize], alloc: &[u64]) -> Cost {
    for &o in chain {
        let op = &inst.operators[o];
        if alloc[o] < op.size {
            return operator_cost(op, alloc[o]);
        }
    }
    let last = &inst.operators[*chain.last().expect("chains are non-empty")];
    Cost::from_integer(last.c_s as i128)
}

/// Cost of the first unsatisfied operator, or of the last one when all are satisfied.
pub fn chain_cost(inst: &GoaInstance, alpha: &Assignment, chain: usize) -> Cost {
    chain_cost_with(inst, &inst.chains[chain], &alpha.allocations(inst))
}

/// Sum of chain costs.
pub fn assignment_cost(inst: &GoaInstance, alpha: &Assignment) -> TotalCost {
    total_cost_with(inst, &alpha.allocations(inst))
}

pub(crate) fn total_cost_with(inst: &GoaInstance, alloc: &[u64]) -> TotalCost {
    let mut total = TotalCost::from_integer(0.into());
    for c in &inst.chains {
        total += to_total(&chain_cost_with(inst, c, alloc));
    }
    total
}

/// Why an assignment is infeasible, if it is.
pub fn feasibility_violation(alpha: &Assignment, inst: &GoaInstance) -> Option<String> {
    if alpha.slots.len() != inst.registers.len() {
        return Some(format!(
            "assignment covers {} registers, instance has {}",
            alpha.slots.len(),
            inst.registers.len()
        ));
    }
    if let Some((r, o)) = alpha.iter().find(|&(_, o)| o >= inst.operators.len()) {
        return Some(format!("register {r} maps to unknown operator {o}"));
    }
    let alloc = alpha.allocations(inst);
    let n = inst.operators.len();
    let mut lo = vec![usize::MAX; n];
    let mut hi = vec![0usize; n];
    let mut has = vec![false; n];
    for (r, o) in alpha.iter() {
        let t = inst.registers[r].stage;
        lo[o] = lo[o].min(t);
        hi[o] = hi[o].max(t);
        has[o] = true;
    }
    for child in 0..n {
        let Some(parent) = inst.parent(child) else {
            continue;
        };
        if !has[child] {
            continue;
        }
        if alloc[parent] < inst.operators[parent].size {
            return Some(format!("operator {child} has registers but its parent {parent} is not satisfied"));
        }
        if has[parent] && hi[parent] >= lo[child] {
            return Some(format!(
                "parent {parent} uses stage {} but child {child} starts at stage {}",
                hi[parent], lo[child]
            ));
        }
    }
    None
}

/// (i) children get registers only after their parent is satisfied;
/// (ii) every parent register sits at a lower stage than every child register.
/// One operator per register holds by construction.
pub fn is_feasible(alpha: &Assignment, inst: &GoaInstance) -> bool {
    feasibility_violation(alpha, inst).is_none()
}

/// How satisfied costs of operators before a chain's last position are set.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GoaCostModel {
    /// Zero: a satisfied intermediate operator hands its output to the next
    /// operator on the switch.
    #[default]
    Handoff,
    /// N_out, so that the cost of every chain equals its average-mode load.
    Output,
}

/// GOA instance for `chains` on `registers` from per-operator costs.
///
/// Size is B (at least 1 bit), the unsatisfied cost is N_in and the satisfied
/// cost is N_out, or 0 for non-final operators under [`GoaCostModel::Handoff`].
/// Returns the instance and the operator behind every operator id.
pub fn build_goa_instance(
    chains: &[DependencyChain],
    registers: &RegisterConfig,
    costs: &CostMatrix,
    model: GoaCostModel,
) -> Result<(GoaInstance, Vec<OperatorRef>)> {
    let regs = registers
        .registers
        .iter()
        .enumerate()
        .map(|(i, r)| GoaRegister {
            id: i,
            stage: r.stage,
            cap: r.bits,
        })
        .collect();
    let mut ops = Vec::new();
    let mut refs = Vec::new();
    for (ci, c) in chains.iter().enumerate() {
        for (pos, &op) in c.operators.iter().enumerate() {
            let e = costs.entry(op)?;
            let n_in = e.n_in;
            let n_out = e.n_out.min(n_in);
            let last = pos + 1 == c.operators.len();
            let c_s = match model {
                GoaCostModel::Handoff if !last => 0,
                _ => n_out,
            };
            ops.push(GoaOperator {
                id: ops.len(),
                size: e.b.max(1),
                c_s,
                c_u: n_in,
                chain: ci,
                pos,
            });
            refs.push(op);
        }
    }
    Ok((GoaInstance::new(regs, ops)?, refs))
}

/// Register → operator view of `alpha`.
pub fn to_op_assignment(alpha: &Assignment, refs: &[OperatorRef]) -> OpAssignment {
    alpha.iter().map(|(r, o)| (r, refs[o])).collect()
}

/// Greedy mapping of `chains` onto `registers` for the given costs.
pub fn map_window(
    chains: &[DependencyChain],
    registers: &RegisterConfig,
    costs: &CostMatrix,
    model: GoaCostModel,
    enhanced: bool,
) -> Result<OpAssignment> {
    let (inst, refs) = build_goa_instance(chains, registers, costs, model)?;
    Ok(to_op_assignment(&greedy_map(&inst, enhanced), &refs))
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub fn reg(id: usize, stage: usize, cap: u64) -> GoaRegister {
        GoaRegister { id, stage, cap }
    }

    pub fn op(id: usize, size: u64, c_s: u64, c_u: u64, chain: usize, pos: usize) -> GoaOperator {
        GoaOperator { id, size, c_s, c_u, chain, pos }
    }

    #[test]
    fn ratio_examples() {
        let inst = GoaInstance::new(
            vec![reg(0, 0, 30), reg(1, 0, 40), reg(2, 1, 100)],
            vec![op(0, 100, 0, 10, 0, 0)],
        )
        .unwrap();
        let mut a = Assignment::empty(3);
        assert_eq!(satisfaction_ratio(&inst, &a, 0), Ratio::from_integer(0));
        a.assign(0, 0);
        a.assign(1, 0);
        assert_eq!(satisfaction_ratio(&inst, &a, 0), Ratio::new(7, 10));
        let mut b = Assignment::empty(3);
        b.assign(2, 0);
        assert_eq!(satisfaction_ratio(&inst, &b, 0), Ratio::from_integer(1));
    }

    #[test]
    fn chain_cost_examples() {
        let inst = GoaInstance::new(vec![reg(0, 0, 5), reg(1, 0, 10)], vec![op(0, 10, 0, 10, 0, 0)]).unwrap();
        let mut a = Assignment::empty(2);
        assert_eq!(chain_cost(&inst, &a, 0), Cost::from_integer(10));
        a.assign(0, 0);
        assert_eq!(chain_cost(&inst, &a, 0), Cost::from_integer(5));

        let inst = GoaInstance::new(
            vec![reg(0, 0, 10), reg(1, 1, 10)],
            vec![op(0, 10, 0, 50, 0, 0), op(1, 10, 3, 20, 0, 1)],
        )
        .unwrap();
        let mut a = Assignment::empty(2);
        a.assign(0, 0);
        a.assign(1, 1);
        assert_eq!(chain_cost(&inst, &a, 0), Cost::from_integer(3));
    }

    #[test]
    fn feasibility_conditions() {
        let inst = GoaInstance::new(
            vec![reg(0, 0, 5), reg(1, 1, 10), reg(2, 1, 10), reg(3, 2, 10)],
            vec![op(0, 10, 0, 50, 0, 0), op(1, 10, 3, 20, 0, 1)],
        )
        .unwrap();
        assert!(is_feasible(&Assignment::empty(4), &inst));
        // child while parent at rho 0.5
        let mut a = Assignment::empty(4);
        a.assign(0, 0);
        a.assign(3, 1);
        assert!(!is_feasible(&a, &inst));
        // same stage
        let mut a = Assignment::empty(4);
        a.assign(1, 0);
        a.assign(2, 1);
        assert!(!is_feasible(&a, &inst));
        // next stage
        let mut a = Assignment::empty(4);
        a.assign(1, 0);
        a.assign(3, 1);
        assert!(is_feasible(&a, &inst));
    }

    #[test]
    fn instance_rejects_bad_chains() {
        assert!(GoaInstance::new(vec![], vec![op(0, 1, 0, 1, 0, 1)]).is_err());
        assert!(GoaInstance::new(vec![], vec![op(0, 1, 2, 1, 0, 0)]).is_err());
        assert!(GoaInstance::new(vec![], vec![op(0, 0, 0, 1, 0, 0)]).is_err());
    }

    #[test]
    fn instance_json_roundtrip() {
        let inst = GoaInstance::new(
            vec![reg(0, 0, 5), reg(1, 1, 10)],
            vec![op(0, 10, 0, 50, 0, 0), op(1, 10, 3, 20, 0, 1)],
        )
        .unwrap();
        let s = serde_json::to_string(&inst).unwrap();
        let back: GoaInstance = serde_json::from_str(&s).unwrap();
        assert_eq!(back, inst);
    }

    #[test]
    fn build_instance_from_costs() {
        use crate::cost::{CostEntry, CostKey};
        let a = OperatorRef { qid: 3, prior: 0, level: 32, k: 0 };
        let b = OperatorRef { qid: 3, prior: 0, level: 32, k: 1 };
        let c = OperatorRef { qid: 4, prior: 0, level: 32, k: 0 };
        let chains = vec![
            DependencyChain { chain_id: 0, operators: vec![a, b] },
            DependencyChain { chain_id: 1, operators: vec![c] },
        ];
        let mut m = CostMatrix::new(0);
        m.entries.insert(CostKey::from(a), CostEntry::new(400, 100, 40));
        m.entries.insert(CostKey::from(b), CostEntry::new(160, 40, 5));
        m.entries.insert(CostKey::from(c), CostEntry::new(0, 50, 0));
        let (inst, refs) = build_goa_instance(&chains, &RegisterConfig::default(), &m, GoaCostModel::Handoff).unwrap();
        assert_eq!(refs, vec![a, b, c]);
        assert_eq!((inst.operators[0].size, inst.operators[0].c_u, inst.operators[0].c_s), (400, 100, 0));
        assert_eq!((inst.operators[1].size, inst.operators[1].c_u, inst.operators[1].c_s), (160, 40, 5));
        assert_eq!((inst.operators[2].size, inst.operators[2].c_s), (1, 0));
        let (inst, _) = build_goa_instance(&chains, &RegisterConfig::default(), &m, GoaCostModel::Output).unwrap();
        assert_eq!(inst.operators[0].c_s, 40);
        m.entries.remove(&CostKey::from(c));
        assert!(build_goa_instance(&chains, &RegisterConfig::default(), &m, GoaCostModel::Handoff).is_err());
    }
}
