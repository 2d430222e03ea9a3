#![allow(dead_code)]

use num_bigint::BigInt;
use num_rational::BigRational;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use qplan::bootstrap::{snr_sizes, SwitchConfig};
use qplan::cost::{CostEntry, CostKey, CostMatrix};
use qplan::mapping::{build_goa_instance, GoaCostModel, GoaInstance, GoaOperator, GoaRegister};
use qplan::query::{DependencyChain, OperatorRef};
use qplan::synth::{micro_queries, micro_workload, synth_micro, MicroConfig};
use qplan::workload::generate_cost_history;

pub fn micro_history(seed: u64) -> Vec<CostMatrix> {
    let cfg = MicroConfig {
        seed,
        ..MicroConfig::default()
    };
    generate_cost_history(&micro_queries(), &synth_micro(&cfg), &micro_workload(&cfg)).unwrap()
}

/// Root-to-/32 operators of the micro workload.
pub fn micro_finest_keys(history: &[CostMatrix]) -> Vec<CostKey> {
    history[0].entries.keys().copied().filter(|k| k.i == 0 && k.j == 32).collect()
}

/// Random instance with up to `max_regs` registers and `max_ops` operators.
pub fn random_goa(rng: &mut ChaCha8Rng, max_regs: usize, max_ops: usize) -> GoaInstance {
    let n_stages = rng.gen_range(1..=3);
    let n_regs = rng.gen_range(1..=max_regs);
    let registers = (0..n_regs)
        .map(|id| GoaRegister {
            id,
            stage: rng.gen_range(0..n_stages),
            cap: rng.gen_range(1..=12),
        })
        .collect();
    let n_ops = rng.gen_range(1..=max_ops);
    let mut operators = Vec::with_capacity(n_ops);
    let mut chain = 0;
    let mut pos = 0;
    for id in 0..n_ops {
        if id > 0 && rng.gen_bool(0.5) {
            chain += 1;
            pos = 0;
        }
        let c_u = rng.gen_range(0..=50);
        operators.push(GoaOperator {
            id,
            size: rng.gen_range(1..=24),
            c_s: rng.gen_range(0..=c_u),
            c_u,
            chain,
            pos,
        });
        pos += 1;
    }
    GoaInstance::new(registers, operators).unwrap()
}

fn big(n: u64) -> BigRational {
    BigRational::from_integer(BigInt::from(n))
}

/// Feasibility written from the definitions, over a register → operator map.
pub fn brute_feasible(inst: &GoaInstance, slots: &[Option<usize>]) -> bool {
    let ops = &inst.operators;
    let mut alloc = vec![0u64; ops.len()];
    let mut lo = vec![usize::MAX; ops.len()];
    let mut hi = vec![0usize; ops.len()];
    let mut used = vec![false; ops.len()];
    for (r, s) in slots.iter().enumerate() {
        if let Some(o) = *s {
            let reg = &inst.registers[r];
            alloc[o] += reg.cap;
            lo[o] = lo[o].min(reg.stage);
            hi[o] = hi[o].max(reg.stage);
            used[o] = true;
        }
    }
    for child in ops {
        if !used[child.id] || child.pos == 0 {
            continue;
        }
        let parent = ops
            .iter()
            .find(|p| p.chain == child.chain && p.pos + 1 == child.pos)
            .unwrap();
        if alloc[parent.id] < parent.size || !used[parent.id] || hi[parent.id] >= lo[child.id] {
            return false;
        }
    }
    true
}

/// Sum over chains of the first unsatisfied operator's interpolated cost,
/// or the last operator's satisfied cost.
pub fn brute_cost(inst: &GoaInstance, slots: &[Option<usize>]) -> BigRational {
    let mut alloc = vec![0u64; inst.operators.len()];
    for (r, s) in slots.iter().enumerate() {
        if let Some(o) = *s {
            alloc[o] += inst.registers[r].cap;
        }
    }
    let n_chains = inst.operators.iter().map(|o| o.chain + 1).max().unwrap_or(0);
    let mut total = big(0);
    for c in 0..n_chains {
        let mut chain: Vec<&GoaOperator> = inst.operators.iter().filter(|o| o.chain == c).collect();
        chain.sort_by_key(|o| o.pos);
        let cost = match chain.iter().find(|o| alloc[o.id] < o.size) {
            Some(o) => {
                let rho = BigRational::new(BigInt::from(alloc[o.id]), BigInt::from(o.size));
                big(o.c_u) - (big(o.c_u) - big(o.c_s)) * rho
            }
            None => big(chain.last().unwrap().c_s),
        };
        total += cost;
    }
    total
}

/// Every map from registers to {unassigned, operator}, in lexicographic
/// order; returns the first minimum-cost feasible one.
pub fn brute_optimum(inst: &GoaInstance) -> (Vec<Option<usize>>, BigRational) {
    let n_r = inst.registers.len();
    let n_o = inst.operators.len();
    let mut digits = vec![0usize; n_r];
    let mut best: Option<(Vec<Option<usize>>, BigRational)> = None;
    loop {
        let slots: Vec<Option<usize>> = digits.iter().map(|&d| d.checked_sub(1)).collect();
        if brute_feasible(inst, &slots) {
            let c = brute_cost(inst, &slots);
            if best.as_ref().is_none_or(|(_, b)| c < *b) {
                best = Some((slots, c));
            }
        }
        let mut i = n_r;
        loop {
            if i == 0 {
                return best.unwrap();
            }
            i -= 1;
            digits[i] += 1;
            if digits[i] <= n_o {
                break;
            }
            digits[i] = 0;
        }
    }
}

/// About 70 operators in 35 two-operator chains on the default switch.
pub fn eval_scale_instance(seed: u64) -> GoaInstance {
    let regs = snr_sizes(&SwitchConfig::default());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chains = Vec::new();
    let mut m = CostMatrix::new(0);
    for c in 0..35u32 {
        let ops: Vec<OperatorRef> = (0..2)
            .map(|k| OperatorRef {
                qid: c + 1,
                prior: 0,
                level: 32,
                k,
            })
            .collect();
        for o in &ops {
            let n_in = rng.gen_range(1_000..100_000u64);
            m.entries
                .insert((*o).into(), CostEntry::new(rng.gen_range(1_000..2_000_000), n_in, n_in / 3));
        }
        chains.push(DependencyChain {
            chain_id: c as usize,
            operators: ops,
        });
    }
    build_goa_instance(&chains, &regs, &m, GoaCostModel::Handoff).unwrap().0
}
