use num_bigint::BigInt;
use num_integer::Integer;

use super::{is_feasible, total_cost_with, Assignment, GoaInstance, TotalCost};
use crate::error::{Error, Result};

pub const MAX_EXACT_REGISTERS: usize = 12;
pub const MAX_EXACT_OPERATORS: usize = 6;

struct Search<'a> {
    inst: &'a GoaInstance,
    order: Vec<usize>,
    slots: Vec<Option<usize>>,
    alloc: Vec<u64>,
    /// Highest stage holding a register of each operator.
    top: Vec<Option<usize>>,
    /// D / size per operator, D being the lcm of all sizes, when every
    /// total times D fits in an i128.
    scale: Option<(i128, Vec<i128>)>,
    best: Option<(Score, Vec<Option<usize>>)>,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
enum Score {
    /// Total times D.
    Scaled(i128),
    Exact(TotalCost),
}

fn common_scale(inst: &GoaInstance) -> Option<(i128, Vec<i128>)> {
    let mut d: i128 = 1;
    for o in &inst.operators {
        d = d.checked_mul(o.size as i128 / d.gcd(&(o.size as i128)))?;
    }
    // every chain cost is at most c_u
    let mut bound: i128 = 0;
    for o in &inst.operators {
        bound = bound.checked_add((o.c_u as i128).checked_mul(d)?)?;
    }
    bound.checked_mul(2)?;
    Some((d, inst.operators.iter().map(|o| d / o.size as i128).collect()))
}

impl Search<'_> {
    fn score(&self) -> Score {
        let Some((d, per)) = &self.scale else {
            return Score::Exact(total_cost_with(self.inst, &self.alloc));
        };
        let mut t: i128 = 0;
        for c in &self.inst.chains {
            let unsat = c.iter().copied().find(|&o| self.alloc[o] < self.inst.operators[o].size);
            t += match unsat {
                Some(o) => {
                    let op = &self.inst.operators[o];
                    let (cu, cs) = (op.c_u as i128, op.c_s as i128);
                    (cu * op.size as i128 - (cu - cs) * self.alloc[o] as i128) * per[o]
                }
                None => self.inst.operators[*c.last().expect("chains are non-empty")].c_s as i128 * d,
            };
        }
        Score::Scaled(t)
    }

    fn leaf(&mut self) {
        let cost = self.score();
        let better = match &self.best {
            None => true,
            Some((c, s)) => cost < *c || (cost == *c && self.slots < *s),
        };
        if better {
            self.best = Some((cost, self.slots.clone()));
        }
    }

    fn go(&mut self, idx: usize) {
        if idx == self.order.len() {
            self.leaf();
            return;
        }
        let r = self.order[idx];
        let reg = self.inst.registers[r];
        self.go(idx + 1);
        for o in 0..self.inst.operators.len() {
            let op = &self.inst.operators[o];
            // extra registers on a satisfied operator never lower the cost
            if self.alloc[o] >= op.size {
                continue;
            }
            if let Some(p) = self.inst.parent(o) {
                let parent_done = self.alloc[p] >= self.inst.operators[p].size;
                if !parent_done || self.top[p].is_none_or(|s| s >= reg.stage) {
                    continue;
                }
            }
            let prev_top = self.top[o];
            self.slots[r] = Some(o);
            self.alloc[o] += reg.cap;
            self.top[o] = Some(prev_top.map_or(reg.stage, |s| s.max(reg.stage)));
            self.go(idx + 1);
            self.top[o] = prev_top;
            self.alloc[o] -= reg.cap;
            self.slots[r] = None;
        }
    }
}

/// Minimum-cost feasible assignment by exhaustive search, for small instances.
///
/// Registers are visited stage by stage, which lets both ordering
/// conditions be checked when a register is placed. Among assignments of
/// equal cost the lexicographically smallest mapping (by register id,
/// unassigned first) wins.
pub fn exact_map(inst: &GoaInstance) -> Result<(Assignment, TotalCost)> {
    if inst.registers.len() > MAX_EXACT_REGISTERS || inst.operators.len() > MAX_EXACT_OPERATORS {
        return Err(Error::GuardExceeded {
            registers: inst.registers.len(),
            operators: inst.operators.len(),
            max_registers: MAX_EXACT_REGISTERS,
            max_operators: MAX_EXACT_OPERATORS,
        });
    }
    let mut order: Vec<usize> = (0..inst.registers.len()).collect();
    order.sort_by_key(|&r| (inst.registers[r].stage, r));
    let mut s = Search {
        inst,
        order,
        slots: vec![None; inst.registers.len()],
        alloc: vec![0; inst.operators.len()],
        top: vec![None; inst.operators.len()],
        scale: common_scale(inst),
        best: None,
    };
    s.go(0);
    let (score, slots) = s.best.expect("the empty assignment is always a candidate");
    let cost = match (score, &s.scale) {
        (Score::Scaled(t), Some((d, _))) => TotalCost::new(BigInt::from(t), BigInt::from(*d)),
        (Score::Exact(c), _) => c,
        (Score::Scaled(_), None) => unreachable!("scaled scores need a scale"),
    };
    let a = Assignment { slots };
    debug_assert!(is_feasible(&a, inst));
    Ok((a, cost))
}

#[cfg(test)]
mod tests {
    use super::super::tests::{op, reg};
    use super::super::*;

    #[test]
    fn single_register_single_operator() {
        let inst = GoaInstance::new(vec![reg(0, 0, 10)], vec![op(0, 10, 0, 100, 0, 0)]).unwrap();
        let (a, c) = exact_map(&inst).unwrap();
        assert_eq!(a.get(0), Some(0));
        assert_eq!(c, TotalCost::from_integer(0.into()));
    }

    #[test]
    fn leaves_child_only_register_unassigned() {
        // the only register sits on stage 0 and the parent cannot be satisfied
        let inst = GoaInstance::new(
            vec![reg(0, 0, 4), reg(1, 0, 8)],
            vec![op(0, 100, 0, 40, 0, 0), op(1, 8, 1, 30, 0, 1)],
        )
        .unwrap();
        let (a, c) = exact_map(&inst).unwrap();
        assert!(is_feasible(&a, &inst));
        assert_eq!(a.slots.iter().filter(|s| **s == Some(1)).count(), 0);
        // both registers to the parent: 40 - 40*12/100
        assert_eq!(c, TotalCost::new(176.into(), 5.into()));
    }

    #[test]
    fn guard_is_enforced() {
        let regs = (0..13).map(|i| reg(i, 0, 1)).collect();
        let inst = GoaInstance::new(regs, vec![op(0, 1, 0, 1, 0, 0)]).unwrap();
        assert!(matches!(exact_map(&inst), Err(Error::GuardExceeded { .. })));
    }
}
