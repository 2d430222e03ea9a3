use std::collections::BTreeMap;
use std::path::Path;

use num_rational::BigRational;
use serde::{Deserialize, Serialize};

use super::strategy::{
    all_plans, exact_fit_plan, finest_snr_plan, sonata_search, static_choice, tom_snr_plan, RunConfig,
    Strategy, StrategyKind, MAX_PLAN_COMBINATIONS,
};
use crate::bootstrap::{snr_sizes, BootstrapPlan, RegisterConfig};
use crate::cost::{shapes_of, CostMatrix};
use crate::error::{Error, Result};
use crate::forecast::{compare, median_relative_error, ForecastModel, ScalingSetup};
use crate::load::{assignment_load_exact, OpAssignment, OperatorLoad};
use crate::mapping::{build_goa_instance, exact_map, map_window, to_op_assignment, GoaCostModel};
use crate::query::{QueryShape, RefinementPlan};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowReport {
    pub window: usize,
    pub sp_load: f64,
    pub per_operator: Vec<OperatorLoad>,
    /// Register id → operator.
    pub assignment: OpAssignment,
    /// Median relative error of the predicted B values.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prediction_error: Option<f64>,
    /// Set when the window ran on its own plan rather than the run's.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plan: Option<BootstrapPlan>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationRun {
    pub strategy: Strategy,
    pub plan: BootstrapPlan,
    pub train_windows: Vec<usize>,
    pub windows: Vec<WindowReport>,
    pub config: RunConfig,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub forecast: Option<ForecastModel>,
}

impl SimulationRun {
    pub fn loads(&self) -> Vec<f64> {
        self.windows.iter().map(|w| w.sp_load).collect()
    }

    pub fn total(&self) -> f64 {
        self.windows.iter().map(|w| w.sp_load).sum()
    }

    /// Upper median of the per-window loads.
    pub fn median_load(&self) -> f64 {
        let mut v = self.loads();
        if v.is_empty() {
            return 0.0;
        }
        v.sort_by(f64::total_cmp);
        v[v.len() / 2]
    }

    pub fn window(&self, window: usize) -> Option<&WindowReport> {
        self.windows.iter().find(|w| w.window == window)
    }

    pub fn plan_of(&self, report: &WindowReport) -> BootstrapPlan {
        report.plan.clone().unwrap_or_else(|| self.plan.clone())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

fn report(
    window: usize,
    assignment: OpAssignment,
    plan: &BootstrapPlan,
    shapes: &[QueryShape],
    truth: &CostMatrix,
    config: &RunConfig,
) -> Result<(WindowReport, BigRational)> {
    let chains = plan.chains(shapes)?;
    let (est, exact) = assignment_load_exact(&assignment, &chains, truth, &plan.registers, &config.load)?;
    Ok((
        WindowReport {
            window,
            sp_load: est.total,
            per_operator: est.per_operator,
            assignment,
            prediction_error: None,
            plan: None,
        },
        exact,
    ))
}

/// Load of one stored window, recomputed from its assignment.
pub fn recompute_load(run: &SimulationRun, report: &WindowReport, truth: &CostMatrix) -> Result<f64> {
    let plan = run.plan_of(report);
    let chains = plan.chains(&truth.shapes())?;
    Ok(assignment_load_exact(&report.assignment, &chains, truth, &plan.registers, &run.config.load)?.0.total)
}

/// Evaluates one frozen plan and mapping on every test window.
pub fn run_frozen(
    strategy: Strategy,
    plan: &BootstrapPlan,
    assignment: &OpAssignment,
    train: &[CostMatrix],
    test: &[CostMatrix],
    config: &RunConfig,
) -> Result<SimulationRun> {
    let shapes = shapes_of(test);
    let mut windows = Vec::with_capacity(test.len());
    for m in test {
        windows.push(report(m.window, assignment.clone(), plan, &shapes, m, config)?.0);
    }
    Ok(SimulationRun {
        strategy,
        plan: plan.clone(),
        train_windows: train.iter().map(|m| m.window).collect(),
        windows,
        config: config.clone(),
        seed: config.seed,
        forecast: None,
    })
}

/// Source of the cost matrix a window is mapped on.
pub trait Predictor {
    /// `history` holds every known window before `truth`, oldest first.
    fn predict(&self, history: &[CostMatrix], truth: &CostMatrix) -> Result<CostMatrix>;

    /// Windows of history needed before a window can be mapped.
    fn min_history(&self) -> usize {
        0
    }

    fn reports_error(&self) -> bool {
        false
    }
}

/// Maps on the true costs.
pub struct OraclePredictor;

impl Predictor for OraclePredictor {
    fn predict(&self, _history: &[CostMatrix], truth: &CostMatrix) -> Result<CostMatrix> {
        Ok(truth.clone())
    }
}

/// Maps on smoothed, scaled predictions.
pub struct ForecastPredictor {
    pub model: ForecastModel,
    pub warmup: usize,
}

impl Predictor for ForecastPredictor {
    fn predict(&self, history: &[CostMatrix], _truth: &CostMatrix) -> Result<CostMatrix> {
        self.model.predict(history)
    }

    fn min_history(&self) -> usize {
        self.warmup.max(2)
    }

    fn reports_error(&self) -> bool {
        true
    }
}

/// Remaps every test window with the greedy mapper on the predictor's
/// costs and evaluates on the true ones. Windows with too little history
/// for the predictor are skipped. History is every window of `train` and
/// `test` numbered below the current one.
pub fn run_dynamic_with(
    strategy: Strategy,
    plan: &BootstrapPlan,
    train: &[CostMatrix],
    test: &[CostMatrix],
    predictor: &dyn Predictor,
    config: &RunConfig,
) -> Result<SimulationRun> {
    let mut pool: BTreeMap<usize, &CostMatrix> = BTreeMap::new();
    for m in train.iter().chain(test) {
        pool.entry(m.window).or_insert(m);
    }
    let shapes = shapes_of(test);
    let chains = plan.chains(&shapes)?;
    let mut windows = Vec::with_capacity(test.len());
    for truth in test {
        let history: Vec<CostMatrix> = pool.range(..truth.window).map(|(_, m)| (*m).clone()).collect();
        if history.len() < predictor.min_history() {
            continue;
        }
        let costs = predictor.predict(&history, truth)?;
        let assignment = map_window(&chains, &plan.registers, &costs, config.goa_model, config.enhanced)?;
        let (mut r, _) = report(truth.window, assignment, plan, &shapes, truth, config)?;
        if predictor.reports_error() {
            let rows = compare(&costs, truth);
            r.prediction_error = median_relative_error(rows.iter().filter(|row| row.component == "B"));
        }
        windows.push(r);
    }
    Ok(SimulationRun {
        strategy,
        plan: plan.clone(),
        train_windows: train.iter().map(|m| m.window).collect(),
        windows,
        config: config.clone(),
        seed: config.seed,
        forecast: None,
    })
}

/// Static strategies: one plan and one mapping from the training windows.
pub fn run_static(strategy: Strategy, train: &[CostMatrix], test: &[CostMatrix], config: &RunConfig) -> Result<SimulationRun> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::InsufficientHistory { needed: 1, got: 0 });
    }
    let choice = match strategy {
        Strategy::MaxDp => static_choice(&RefinementPlan::finest_only(&shapes_of(train)), train, 1.0, config)?,
        Strategy::SonataStatic => sonata_search(train, 1.0, config)?,
        Strategy::SonataOp => sonata_search(train, config.overprovision, config)?,
        other => return Err(Error::Precondition(format!("{other} is not a static strategy"))),
    };
    run_frozen(strategy, &choice.plan, &choice.assignment, train, test, config)
}

/// Bootstrap plan a dynamic strategy starts from.
pub fn dynamic_bootstrap(strategy: Strategy, train: &[CostMatrix], config: &RunConfig) -> Result<BootstrapPlan> {
    if train.is_empty() {
        return Err(Error::InsufficientHistory { needed: 1, got: 0 });
    }
    let switch = &config.switch;
    Ok(match strategy {
        Strategy::MaxDpD => finest_snr_plan(&shapes_of(train), switch),
        Strategy::DynamiqOracle | Strategy::DynamiqPred => tom_snr_plan(train, switch)?,
        Strategy::DynamiqRand => sonata_search(train, 1.0, config)?.plan,
        Strategy::DynamiqSnr => BootstrapPlan {
            refinement: sonata_search(train, 1.0, config)?.plan.refinement,
            registers: snr_sizes(switch),
        },
        Strategy::DynamiqTom => {
            let tom = tom_snr_plan(train, switch)?;
            exact_fit_plan(&tom.refinement, train, switch, 1.0)?
        }
        other => return Err(Error::Precondition(format!("{other} is not a dynamic strategy"))),
    })
}

/// Dynamic strategies. `plan` replaces the strategy's own bootstrap.
pub fn run_dynamic(
    strategy: Strategy,
    train: &[CostMatrix],
    test: &[CostMatrix],
    config: &RunConfig,
    plan: Option<&BootstrapPlan>,
) -> Result<SimulationRun> {
    config.validate()?;
    let plan = match plan {
        Some(p) => p.clone(),
        None => dynamic_bootstrap(strategy, train, config)?,
    };
    if strategy != Strategy::DynamiqPred {
        return run_dynamic_with(strategy, &plan, train, test, &OraclePredictor, config);
    }
    let chains = plan.chains(&shapes_of(train))?;
    let setup = ScalingSetup {
        chains: &chains,
        registers: &plan.registers,
        load: config.load,
        model: config.goa_model,
        enhanced: config.enhanced,
    };
    let model = ForecastModel::fit(train, config.desp, config.clusters, config.seed, &setup)?;
    let predictor = ForecastPredictor {
        model,
        warmup: config.warmup,
    };
    let mut run = run_dynamic_with(strategy, &plan, train, test, &predictor, config)?;
    run.forecast = Some(predictor.model);
    Ok(run)
}

/// Register layouts tried for one plan by the exhaustive strategies.
fn optimal_layouts(
    refinement: &RefinementPlan,
    train: &[CostMatrix],
    truth: &CostMatrix,
    config: &RunConfig,
) -> Result<Vec<RegisterConfig>> {
    let switch = &config.switch;
    let mut out = vec![snr_sizes(switch)];
    for f in [1.0, config.overprovision] {
        out.push(exact_fit_plan(refinement, train, switch, f)?.registers);
    }
    out.push(exact_fit_plan(refinement, std::slice::from_ref(truth), switch, 1.0)?.registers);
    out.dedup();
    Ok(out)
}

/// Exhaustive strategies. Every window tries each candidate plan (all plans
/// for OPTIMAL_SONATA, the finest one for OPTIMAL_MAX_DP) with each layout
/// from Slice-n-Repeat and exact-fit sizing to the training median, the
/// over-provisioned median and the window itself, mapped optimally on the
/// true costs.
pub fn run_optimal(strategy: Strategy, train: &[CostMatrix], test: &[CostMatrix], config: &RunConfig) -> Result<SimulationRun> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::InsufficientHistory { needed: 1, got: 0 });
    }
    let shapes = shapes_of(test);
    let plans = match strategy {
        Strategy::OptimalSonata => all_plans(&shapes, MAX_PLAN_COMBINATIONS)
            .ok_or_else(|| Error::Precondition("too many refinement plans for exhaustive search".into()))?,
        Strategy::OptimalMaxDp => vec![RefinementPlan::finest_only(&shapes)],
        other => return Err(Error::Precondition(format!("{other} is not an exhaustive strategy"))),
    };
    // the cost model equals the average-mode load, so the optimum is exact there
    let model = GoaCostModel::Output;
    let mut windows = Vec::with_capacity(test.len());
    for truth in test {
        let mut best: Option<(BigRational, WindowReport)> = None;
        for p in &plans {
            for registers in optimal_layouts(p, train, truth, config)? {
                let plan = BootstrapPlan {
                    refinement: p.clone(),
                    registers,
                };
                let chains = plan.chains(&shapes)?;
                let (inst, refs) = build_goa_instance(&chains, &plan.registers, truth, model)?;
                let (alpha, _) = exact_map(&inst)?;
                let (mut r, exact) = report(truth.window, to_op_assignment(&alpha, &refs), &plan, &shapes, truth, config)?;
                if best.as_ref().is_none_or(|(b, _)| exact < *b) {
                    r.plan = Some(plan);
                    best = Some((exact, r));
                }
            }
        }
        windows.push(best.expect("at least one plan and layout").1);
    }
    let plan = windows
        .first()
        .and_then(|w| w.plan.clone())
        .unwrap_or_else(|| finest_snr_plan(&shapes, &config.switch));
    for w in windows.iter_mut() {
        if w.plan.as_ref() == Some(&plan) {
            w.plan = None;
        }
    }
    Ok(SimulationRun {
        strategy,
        plan,
        train_windows: train.iter().map(|m| m.window).collect(),
        windows,
        config: config.clone(),
        seed: config.seed,
        forecast: None,
    })
}

/// Runs any strategy. `plan` only affects dynamic strategies.
pub fn run_strategy(
    strategy: Strategy,
    train: &[CostMatrix],
    test: &[CostMatrix],
    config: &RunConfig,
    plan: Option<&BootstrapPlan>,
) -> Result<SimulationRun> {
    match strategy.kind() {
        StrategyKind::Static => run_static(strategy, train, test, config),
        StrategyKind::Dynamic => run_dynamic(strategy, train, test, config, plan),
        StrategyKind::Optimal => run_optimal(strategy, train, test, config),
    }
}

/// Splits a history into its first `train` windows and the rest.
pub fn split_history(history: &[CostMatrix], train: usize) -> Result<(&[CostMatrix], &[CostMatrix])> {
    if train == 0 || train >= history.len() {
        return Err(Error::InsufficientHistory {
            needed: train.max(1) + 1,
            got: history.len(),
        });
    }
    Ok(history.split_at(train))
}
