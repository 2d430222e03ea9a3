use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::bootstrap::{
    candidate_sequences, demands, exact_fit_sizes, select_refinement_plan, snr_sizes, BootstrapPlan, SwitchConfig,
    MAX_PLAN_LEN,
};
use crate::cost::{median_matrix, shapes_of, CostMatrix};
use crate::error::{Error, Result};
use crate::forecast::{DespParams, DEFAULT_CLUSTERS};
use crate::load::{assignment_load_exact, LoadConfig, OpAssignment};
use crate::mapping::{map_window, GoaCostModel};
use crate::query::{QueryShape, RefinementPlan};

/// Largest number of plan combinations searched exhaustively.
pub const MAX_PLAN_COMBINATIONS: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Strategy {
    MaxDp,
    SonataStatic,
    SonataOp,
    MaxDpD,
    DynamiqOracle,
    DynamiqPred,
    DynamiqRand,
    DynamiqSnr,
    DynamiqTom,
    OptimalSonata,
    OptimalMaxDp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StrategyKind {
    /// One mapping fixed at compile time.
    Static,
    /// Greedy remapping every window.
    Dynamic,
    /// Exhaustive search every window.
    Optimal,
}

impl Strategy {
    pub const ALL: [Strategy; 11] = [
        Strategy::MaxDp,
        Strategy::SonataStatic,
        Strategy::SonataOp,
        Strategy::MaxDpD,
        Strategy::DynamiqOracle,
        Strategy::DynamiqPred,
        Strategy::DynamiqRand,
        Strategy::DynamiqSnr,
        Strategy::DynamiqTom,
        Strategy::OptimalSonata,
        Strategy::OptimalMaxDp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::MaxDp => "MAX_DP",
            Strategy::SonataStatic => "SONATA_STATIC",
            Strategy::SonataOp => "SONATA_OP",
            Strategy::MaxDpD => "MAX_DP_D",
            Strategy::DynamiqOracle => "DYNAMIQ_ORACLE",
            Strategy::DynamiqPred => "DYNAMIQ_PRED",
            Strategy::DynamiqRand => "DYNAMIQ_RAND",
            Strategy::DynamiqSnr => "DYNAMIQ_SNR",
            Strategy::DynamiqTom => "DYNAMIQ_TOM",
            Strategy::OptimalSonata => "OPTIMAL_SONATA",
            Strategy::OptimalMaxDp => "OPTIMAL_MAX_DP",
        }
    }

    pub fn kind(self) -> StrategyKind {
        match self {
            Strategy::MaxDp | Strategy::SonataStatic | Strategy::SonataOp => StrategyKind::Static,
            Strategy::OptimalSonata | Strategy::OptimalMaxDp => StrategyKind::Optimal,
            _ => StrategyKind::Dynamic,
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_uppercase().replace('-', "_");
        Strategy::ALL
            .into_iter()
            .find(|st| st.name() == norm)
            .ok_or_else(|| Error::UnknownStrategy(s.to_string()))
    }
}

/// Everything a run depends on besides its cost matrices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub switch: SwitchConfig,
    pub load: LoadConfig,
    /// Satisfied cost of non-final operators in heuristic mappings.
    pub goa_model: GoaCostModel,
    pub enhanced: bool,
    /// Factor applied to the median training B by SONATA_OP.
    pub overprovision: f64,
    pub desp: DespParams,
    pub clusters: usize,
    /// Windows of history needed before DYNAMIQ_PRED predicts.
    pub warmup: usize,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            switch: SwitchConfig::default(),
            load: LoadConfig::default(),
            goa_model: GoaCostModel::Handoff,
            enhanced: true,
            overprovision: 2.0,
            desp: DespParams::default(),
            clusters: DEFAULT_CLUSTERS,
            warmup: 10,
            seed: 1,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.switch.validate()?;
        self.desp.validate()?;
        if self.load.key_bits == 0 {
            return Err(Error::Precondition("key bits must be positive".into()));
        }
        if !(self.overprovision.is_finite() && self.overprovision >= 1.0) {
            return Err(Error::Precondition(format!(
                "over-provisioning factor must be at least 1, got {}",
                self.overprovision
            )));
        }
        Ok(())
    }
}

/// B of every entry times `factor`, rounded up.
pub fn scale_b(m: &CostMatrix, factor: f64) -> CostMatrix {
    let mut out = m.clone();
    for e in out.entries.values_mut() {
        e.b = (e.b as f64 * factor).ceil() as u64;
    }
    out
}

/// Refinement plan by TOM and Slice-n-Repeat registers.
pub fn tom_snr_plan(train: &[CostMatrix], switch: &SwitchConfig) -> Result<BootstrapPlan> {
    let shapes = shapes_of(train);
    Ok(BootstrapPlan {
        refinement: select_refinement_plan(&shapes, train, switch)?.plan,
        registers: snr_sizes(switch),
    })
}

/// Finest-level plan with Slice-n-Repeat registers.
pub fn finest_snr_plan(shapes: &[QueryShape], switch: &SwitchConfig) -> BootstrapPlan {
    BootstrapPlan {
        refinement: RefinementPlan::finest_only(shapes),
        registers: snr_sizes(switch),
    }
}

/// Registers sized to `factor` × the median training B of `refinement`.
pub fn exact_fit_plan(
    refinement: &RefinementPlan,
    train: &[CostMatrix],
    switch: &SwitchConfig,
    factor: f64,
) -> Result<BootstrapPlan> {
    let shapes = shapes_of(train);
    let chains = crate::query::build_chains_for_shapes(refinement, &shapes)?;
    let fit = exact_fit_sizes(&chains, &demands(&chains, &median_matrix(train), factor)?, switch);
    Ok(BootstrapPlan {
        refinement: refinement.clone(),
        registers: fit.registers,
    })
}

/// A frozen plan, its mapping and its summed load on the training windows.
#[derive(Debug, Clone, PartialEq)]
pub struct StaticChoice {
    pub plan: BootstrapPlan,
    pub assignment: OpAssignment,
    pub training_load: f64,
}

/// Exact-fit sizing and one greedy mapping on the scaled median, scored on
/// the training windows.
pub fn static_choice(
    refinement: &RefinementPlan,
    train: &[CostMatrix],
    factor: f64,
    config: &RunConfig,
) -> Result<StaticChoice> {
    let (choice, _) = static_choice_exact(refinement, train, factor, config)?;
    Ok(choice)
}

fn static_choice_exact(
    refinement: &RefinementPlan,
    train: &[CostMatrix],
    factor: f64,
    config: &RunConfig,
) -> Result<(StaticChoice, num_rational::BigRational)> {
    if train.is_empty() {
        return Err(Error::InsufficientHistory { needed: 1, got: 0 });
    }
    let plan = exact_fit_plan(refinement, train, &config.switch, factor)?;
    let chains = plan.chains(&shapes_of(train))?;
    let target = scale_b(&median_matrix(train), factor);
    let assignment = map_window(&chains, &plan.registers, &target, config.goa_model, config.enhanced)?;
    let mut total = num_rational::BigRational::from_integer(0.into());
    for m in train {
        total += assignment_load_exact(&assignment, &chains, m, &plan.registers, &config.load)?.1;
    }
    let training_load = num_traits::ToPrimitive::to_f64(&total).unwrap_or(f64::INFINITY);
    Ok((
        StaticChoice {
            plan,
            assignment,
            training_load,
        },
        total,
    ))
}

/// Candidate level sequences of every query, in qid order.
pub fn plan_space(shapes: &[QueryShape]) -> Vec<(u32, Vec<Vec<u8>>)> {
    let mut sorted: Vec<&QueryShape> = shapes.iter().collect();
    sorted.sort_by_key(|s| s.qid);
    sorted
        .into_iter()
        .map(|s| (s.qid, candidate_sequences(&s.levels, MAX_PLAN_LEN)))
        .collect()
}

/// Every combination of per-query sequences, in lexicographic order of
/// choice indices. `None` when there are more than `cap`.
pub fn all_plans(shapes: &[QueryShape], cap: usize) -> Option<Vec<RefinementPlan>> {
    let space = plan_space(shapes);
    let mut count: usize = 1;
    for (_, seqs) in &space {
        count = count.checked_mul(seqs.len())?;
        if count > cap {
            return None;
        }
    }
    let mut out = Vec::with_capacity(count);
    let mut idx = vec![0usize; space.len()];
    for _ in 0..count {
        out.push(RefinementPlan {
            per_query: space.iter().zip(&idx).map(|((q, seqs), &i)| (*q, seqs[i].clone())).collect(),
        });
        for d in (0..idx.len()).rev() {
            idx[d] += 1;
            if idx[d] < space[d].1.len() {
                break;
            }
            idx[d] = 0;
        }
    }
    Some(out)
}

/// Emulated compile-time planner: searches refinement plans with
/// [`static_choice`] and keeps the lowest training load. Small plan spaces
/// are enumerated; large ones are searched one query at a time from the
/// finest-only plan until a full pass changes nothing.
pub fn sonata_search(train: &[CostMatrix], factor: f64, config: &RunConfig) -> Result<StaticChoice> {
    let shapes = shapes_of(train);
    let better = |a: &num_rational::BigRational, b: &Option<(StaticChoice, num_rational::BigRational)>| {
        b.as_ref().is_none_or(|(_, t)| a < t)
    };
    if let Some(plans) = all_plans(&shapes, MAX_PLAN_COMBINATIONS) {
        let mut best: Option<(StaticChoice, num_rational::BigRational)> = None;
        for p in &plans {
            let (c, t) = static_choice_exact(p, train, factor, config)?;
            if better(&t, &best) {
                best = Some((c, t));
            }
        }
        return best.map(|(c, _)| c).ok_or_else(|| Error::NoFeasiblePlan("no queries".into()));
    }
    let space = plan_space(&shapes);
    let mut cur = RefinementPlan::finest_only(&shapes);
    let mut best = Some(static_choice_exact(&cur, train, factor, config)?);
    for _ in 0..crate::forecast::MAX_PASSES {
        let mut moved = false;
        for (qid, seqs) in &space {
            for seq in seqs {
                if cur.per_query.get(qid) == Some(seq) {
                    continue;
                }
                let mut p = cur.clone();
                p.per_query.insert(*qid, seq.clone());
                let (c, t) = static_choice_exact(&p, train, factor, config)?;
                if better(&t, &best) {
                    best = Some((c, t));
                    cur = p;
                    moved = true;
                }
            }
        }
        if !moved {
            break;
        }
    }
    Ok(best.expect("seeded with the finest plan").0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_roundtrip() {
        for s in Strategy::ALL {
            assert_eq!(s.name().parse::<Strategy>().unwrap(), s);
            assert_eq!(serde_json::to_string(&s).unwrap(), format!("\"{}\"", s.name()));
        }
        assert_eq!("dynamiq-oracle".parse::<Strategy>().unwrap(), Strategy::DynamiqOracle);
        assert!(matches!("FOO".parse::<Strategy>(), Err(Error::UnknownStrategy(_))));
    }

    #[test]
    fn plan_enumeration() {
        let shapes = vec![
            QueryShape { qid: 2, levels: vec![0, 16, 32], n_ops: 1 },
            QueryShape { qid: 1, levels: vec![0, 8, 16, 32], n_ops: 1 },
        ];
        let plans = all_plans(&shapes, 100).unwrap();
        // 4 sequences for qid 1, 2 for qid 2
        assert_eq!(plans.len(), 8);
        assert_eq!(plans[0].per_query[&1], vec![0, 8, 16, 32]);
        assert_eq!(plans[0].per_query[&2], vec![0, 16, 32]);
        assert_eq!(plans[7].per_query[&1], vec![0, 32]);
        assert_eq!(plans[7].per_query[&2], vec![0, 32]);
        assert!(all_plans(&shapes, 7).is_none());
    }

    #[test]
    fn scale_b_rounds_up() {
        let mut m = CostMatrix::new(0);
        let k = crate::cost::CostKey { qid: 1, i: 0, j: 32, k: 0 };
        m.entries.insert(k, crate::cost::CostEntry::new(7, 4, 2));
        assert_eq!(scale_b(&m, 1.5).entries[&k].b, 11);
        assert_eq!(scale_b(&m, 1.5).entries[&k].n_in, 4);
    }
}
