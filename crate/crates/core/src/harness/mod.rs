//! Planner strategies, the per-window simulation loop and reports.

mod case_study;
mod report;
mod sim;
mod strategy;

pub use case_study::{run_case_study, CaseStudy};
pub use report::{
    allocation_rows, allocation_svg, cov_rows, emit_comparison, emit_report, load_rows, summary_rows,
};
pub use sim::{
    dynamic_bootstrap, recompute_load, run_dynamic, run_dynamic_with, run_frozen, run_optimal, run_static,
    run_strategy, split_history, ForecastPredictor, OraclePredictor, Predictor, SimulationRun, WindowReport,
};
pub use strategy::{
    all_plans, exact_fit_plan, finest_snr_plan, plan_space, scale_b, sonata_search, static_choice, tom_snr_plan,
    RunConfig, StaticChoice, Strategy, StrategyKind, MAX_PLAN_COMBINATIONS,
};
