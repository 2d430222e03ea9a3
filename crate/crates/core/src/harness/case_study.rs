use super::sim::{run_dynamic_with, run_frozen, OraclePredictor, SimulationRun};
use super::strategy::{RunConfig, Strategy};
use crate::bootstrap::BootstrapPlan;
use crate::cost::{median_matrix, CostMatrix};
use crate::error::{Error, Result};
use crate::mapping::map_window;
use crate::query::RefinementPlan;
use crate::synth::{bimodal_queries, bimodal_registers, bimodal_switch, bimodal_workload, synth_bimodal, BimodalConfig};
use crate::workload::generate_cost_history;

/// Both queries at /32 on the two fixed registers.
#[derive(Debug, Clone, PartialEq)]
pub struct CaseStudy {
    pub history: Vec<CostMatrix>,
    /// First window at or after the flip.
    pub flip_window: usize,
    /// Mapping frozen on the pre-flip median, evaluated on every window.
    pub static_run: SimulationRun,
    /// Greedy remapping on the true costs of every window.
    pub oracle_run: SimulationRun,
}

impl CaseStudy {
    fn mean(run: &SimulationRun, pre: bool, flip: usize) -> f64 {
        let v: Vec<f64> = run
            .windows
            .iter()
            .filter(|w| (w.window < flip) == pre)
            .map(|w| w.sp_load)
            .collect();
        v.iter().sum::<f64>() / v.len().max(1) as f64
    }

    /// Mean load before and after the flip.
    pub fn static_phases(&self) -> (f64, f64) {
        (Self::mean(&self.static_run, true, self.flip_window), Self::mean(&self.static_run, false, self.flip_window))
    }

    pub fn oracle_phases(&self) -> (f64, f64) {
        (Self::mean(&self.oracle_run, true, self.flip_window), Self::mean(&self.oracle_run, false, self.flip_window))
    }
}

pub fn run_case_study(cfg: &BimodalConfig) -> Result<CaseStudy> {
    let queries = bimodal_queries();
    let history = generate_cost_history(&queries, &synth_bimodal(cfg), &bimodal_workload(cfg))?;
    let flip_window = (cfg.flip_at / cfg.window_sec).ceil() as usize;
    if flip_window == 0 || flip_window >= history.len() {
        return Err(Error::Precondition(format!(
            "flip at window {flip_window} leaves no pre- or post-flip windows in {}",
            history.len()
        )));
    }
    let shapes: Vec<_> = queries.iter().map(|q| q.shape()).collect();
    let plan = BootstrapPlan {
        refinement: RefinementPlan::finest_only(&shapes),
        registers: bimodal_registers(),
    };
    let config = RunConfig {
        switch: bimodal_switch(),
        seed: cfg.seed,
        ..RunConfig::default()
    };
    let train = &history[..flip_window];
    let chains = plan.chains(&shapes)?;
    let frozen = map_window(&chains, &plan.registers, &median_matrix(train), config.goa_model, config.enhanced)?;
    let static_run = run_frozen(Strategy::SonataStatic, &plan, &frozen, train, &history, &config)?;
    let oracle_run = run_dynamic_with(Strategy::DynamiqOracle, &plan, &[], &history, &OraclePredictor, &config)?;
    Ok(CaseStudy {
        history,
        flip_window,
        static_run,
        oracle_run,
    })
}
