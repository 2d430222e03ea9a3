use std::cmp::Ordering;

use super::{chain_cost_with, Assignment, Cost, GoaInstance};

/// Mutable view of a partial assignment with the per-operator sums the
/// greedy loop needs.
struct State<'a> {
    inst: &'a GoaInstance,
    /// Register ids of each stage, by capacity then id.
    by_stage: Vec<Vec<usize>>,
    owner: Vec<Option<usize>>,
    free_in_stage: Vec<usize>,
    alloc: Vec<u64>,
    /// Number of registers each operator holds on each stage.
    held: Vec<Vec<u32>>,
}

impl<'a> State<'a> {
    fn new(inst: &'a GoaInstance) -> Self {
        let s = inst.n_stages();
        let mut by_stage = vec![Vec::new(); s];
        for r in &inst.registers {
            by_stage[r.stage].push(r.id);
        }
        for v in &mut by_stage {
            v.sort_by_key(|&r| (inst.registers[r].cap, r));
        }
        let free_in_stage = by_stage.iter().map(Vec::len).collect();
        State {
            inst,
            by_stage,
            owner: vec![None; inst.registers.len()],
            free_in_stage,
            alloc: vec![0; inst.operators.len()],
            held: vec![vec![0; s]; inst.operators.len()],
        }
    }

    fn assign(&mut self, r: usize, o: usize) {
        let reg = self.inst.registers[r];
        debug_assert!(self.owner[r].is_none());
        self.owner[r] = Some(o);
        self.free_in_stage[reg.stage] -= 1;
        self.alloc[o] += reg.cap;
        self.held[o][reg.stage] += 1;
    }

    fn release(&mut self, r: usize) {
        let reg = self.inst.registers[r];
        let o = self.owner[r].take().expect("released register is assigned");
        self.free_in_stage[reg.stage] += 1;
        self.alloc[o] -= reg.cap;
        self.held[o][reg.stage] -= 1;
    }

    fn satisfied(&self, o: usize) -> bool {
        self.alloc[o] >= self.inst.operators[o].size
    }

    fn active_operator(&self, chain: usize) -> Option<usize> {
        self.inst.chains[chain].iter().copied().find(|&o| !self.satisfied(o))
    }

    fn max_stage(&self, o: usize) -> Option<usize> {
        self.held[o].iter().rposition(|&n| n > 0)
    }

    /// Lowest stage with a free register that lies after every register of
    /// the active operator's parent.
    fn active_stage(&self, chain: usize) -> Option<(usize, usize)> {
        let o = self.active_operator(chain)?;
        let from = match self.inst.parent(o) {
            Some(p) => self.max_stage(p).map_or(0, |s| s + 1),
            None => 0,
        };
        (from..self.by_stage.len())
            .find(|&t| self.free_in_stage[t] > 0)
            .map(|t| (o, t))
    }

    /// One register for the active operator: the smallest free register at
    /// the active stage that completes it, else the largest free one.
    fn extend(&self, chain: usize) -> Option<(usize, usize)> {
        let (o, t) = self.active_stage(chain)?;
        let need = self.inst.operators[o].size - self.alloc[o];
        let free = self.by_stage[t].iter().copied().filter(|&r| self.owner[r].is_none());
        let mut largest: Option<usize> = None;
        for r in free {
            let cap = self.inst.registers[r].cap;
            if cap >= need {
                return Some((r, o));
            }
            match largest {
                Some(l) if self.inst.registers[l].cap >= cap => {}
                _ => largest = Some(r),
            }
        }
        largest.map(|r| (r, o))
    }

    fn chain_cost(&self, chain: usize) -> Cost {
        chain_cost_with(self.inst, &self.inst.chains[chain], &self.alloc)
    }

    fn to_assignment(&self) -> Assignment {
        Assignment {
            slots: self.owner.clone(),
        }
    }
}

/// Best prefix of one chain's extension ladder.
#[derive(Clone)]
struct Candidate {
    chain: usize,
    stage: usize,
    score: Cost,
    reduction: Cost,
    first_reg: usize,
    steps: Vec<(usize, usize)>,
}

impl Candidate {
    /// Greater is better.
    fn rank(&self, other: &Candidate) -> Ordering {
        self.score
            .cmp(&other.score)
            .then_with(|| self.reduction.cmp(&other.reduction))
            .then_with(|| other.chain.cmp(&self.chain))
            .then_with(|| other.first_reg.cmp(&self.first_reg))
            .then_with(|| other.steps.len().cmp(&self.steps.len()))
    }
}

/// Walks the ladder e¹ = extend(α), e² = extend(e¹), … of `chain` until the
/// chain is satisfied or no register is left, and returns the rung with the
/// best positive bang per buck. The state is restored before returning.
fn best_rung(st: &mut State, chain: usize, stage: usize) -> Option<Candidate> {
    let base = st.chain_cost(chain);
    let mut taken: Vec<(usize, usize)> = Vec::new();
    let mut cap = 0u64;
    let mut best: Option<Candidate> = None;
    while st.active_operator(chain).is_some() {
        let Some((r, o)) = st.extend(chain) else {
            break;
        };
        st.assign(r, o);
        taken.push((r, o));
        cap += st.inst.registers[r].cap;
        let reduction = base - st.chain_cost(chain);
        if reduction > Cost::from_integer(0) && cap > 0 {
            let score = reduction / Cost::from_integer(cap as i128);
            let cand = Candidate {
                chain,
                stage,
                score,
                reduction,
                first_reg: taken[0].0,
                steps: taken.clone(),
            };
            if best.as_ref().is_none_or(|b| cand.rank(b) == Ordering::Greater) {
                best = Some(cand);
            }
        }
    }
    for &(r, _) in taken.iter().rev() {
        st.release(r);
    }
    best
}

/// Greedy assignment by bang per buck over per-chain extension ladders.
///
/// Each round looks at the lowest stage where some chain can still improve,
/// evaluates the ladders of the chains active there and applies the rung
/// with the best cost reduction per newly used bit. With `enhanced`, every
/// time that stage moves past the highest one seen so far, registers on it
/// and above are released and the round is redone.
pub fn greedy_map(inst: &GoaInstance, enhanced: bool) -> Assignment {
    let mut st = State::new(inst);
    let mut highest: Option<usize> = None;
    loop {
        let mut groups: Vec<(usize, usize)> = (0..inst.chains.len())
            .filter_map(|c| st.active_stage(c).map(|(_, t)| (t, c)))
            .collect();
        groups.sort_unstable();
        let mut chosen: Option<Candidate> = None;
        let mut idx = 0;
        while idx < groups.len() {
            let t = groups[idx].0;
            let end = groups[idx..].iter().position(|g| g.0 != t).map_or(groups.len(), |p| idx + p);
            for &(_, c) in &groups[idx..end] {
                if let Some(cand) = best_rung(&mut st, c, t) {
                    if chosen.as_ref().is_none_or(|b| cand.rank(b) == Ordering::Greater) {
                        chosen = Some(cand);
                    }
                }
            }
            if chosen.is_some() {
                break;
            }
            idx = end;
        }
        let Some(cand) = chosen else {
            break;
        };
        if enhanced {
            match highest {
                Some(h) if cand.stage > h => {
                    highest = Some(cand.stage);
                    let drop: Vec<usize> = (0..inst.registers.len())
                        .filter(|&r| st.owner[r].is_some() && inst.registers[r].stage >= cand.stage)
                        .collect();
                    if !drop.is_empty() {
                        for r in drop {
                            st.release(r);
                        }
                        continue;
                    }
                }
                None => highest = Some(cand.stage),
                _ => {}
            }
        }
        for (r, o) in cand.steps {
            st.assign(r, o);
        }
    }
    st.to_assignment()
}
