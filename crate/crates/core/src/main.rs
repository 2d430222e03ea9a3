use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use qplan::bootstrap::{select_refinement_plan, snr_sizes, BootstrapPlan, SwitchConfig};
use qplan::cost::{load_cost_history, save_cost_history, shapes_of, CostMatrix};
use qplan::forecast::{median_relative_error, predict_eval, DespParams};
use qplan::harness::{emit_comparison, emit_report, exact_fit_plan, run_strategy, split_history, RunConfig, SimulationRun, Strategy};
use qplan::load::LoadMode;
use qplan::query::{load_queries, RefinementPlan};
use qplan::synth::{
    bimodal_queries, bimodal_switch, micro_queries, micro_switch, synth_bimodal, synth_micro, synth_smooth_costs,
    BimodalConfig, MicroConfig, SmoothConfig,
};
use qplan::trace::{load_trace, write_trace};
use qplan::workload::{generate_cost_history, WorkloadConfig};

#[derive(Parser)]
#[command(name = "qplan", version, about = "Query planning and load simulation for switch-offloaded telemetry")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build per-window cost matrices by running refined queries over a trace.
    GenCostMatrix {
        #[arg(long)]
        queries: PathBuf,
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 3.0)]
        window_sec: f64,
        #[arg(long, default_value_t = 1.0)]
        speedup: f64,
    },
    /// Pick a refinement plan and register layout from training windows.
    Bootstrap {
        #[arg(long)]
        cost: PathBuf,
        #[arg(long)]
        switch: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Refinement::Tom)]
        refinement: Refinement,
        #[arg(long, value_enum, default_value_t = Sizing::Snr)]
        sizing: Sizing,
        /// Windows used for training; all of them by default.
        #[arg(long)]
        train_windows: Option<usize>,
    },
    /// Run one planner strategy over a cost history.
    Simulate {
        #[arg(long)]
        strategy: Strategy,
        /// Frozen bootstrap plan for dynamic strategies.
        #[arg(long)]
        plan: Option<PathBuf>,
        #[arg(long)]
        cost: PathBuf,
        #[arg(long)]
        switch: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "average")]
        mode: LoadMode,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 2.0)]
        overprovision: f64,
        /// Defaults to min(10, windows - 1).
        #[arg(long)]
        train_windows: Option<usize>,
        /// Also write loads.csv, allocation.csv, cov.csv and allocation.svg here.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Side-by-side loads and summary of several runs.
    Compare {
        #[arg(long, num_args = 1.., required = true)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a seeded synthetic workload.
    Synth {
        #[arg(long, value_enum)]
        scenario: Scenario,
        /// A trace CSV, or a cost history JSON for `smooth`.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Also write the scenario's query set.
        #[arg(long)]
        queries_out: Option<PathBuf>,
        /// Also write the scenario's switch config.
        #[arg(long)]
        switch_out: Option<PathBuf>,
    },
    /// Rolling one-step prediction error per cost entry.
    PredictEval {
        #[arg(long)]
        cost: PathBuf,
        #[arg(long, default_value_t = 10)]
        train_windows: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        alpha: f64,
        #[arg(long, default_value_t = 0.3)]
        beta: f64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Refinement {
    Tom,
    Finest,
}

#[derive(Clone, Copy, ValueEnum)]
enum Sizing {
    Snr,
    ExactFit,
}

#[derive(Clone, Copy, ValueEnum)]
enum Scenario {
    Bimodal,
    Micro,
    Smooth,
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn training(history: &[CostMatrix], n: Option<usize>) -> Result<&[CostMatrix]> {
    let n = n.unwrap_or(history.len());
    if n == 0 || n > history.len() {
        bail!("{n} training windows requested, history has {}", history.len());
    }
    Ok(&history[..n])
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::GenCostMatrix {
            queries,
            trace,
            out,
            window_sec,
            speedup,
        } => {
            let queries = load_queries(&queries)?;
            let packets = load_trace(&trace)?;
            let cfg = WorkloadConfig {
                window_sec,
                speedup,
                ..WorkloadConfig::default()
            };
            let history = generate_cost_history(&queries, &packets, &cfg)?;
            save_cost_history(&out, &history)?;
            eprintln!("{} windows written to {}", history.len(), out.display());
        }
        Command::Bootstrap {
            cost,
            switch,
            out,
            refinement,
            sizing,
            train_windows,
        } => {
            let history = load_cost_history(&cost)?;
            let switch = SwitchConfig::load(&switch)?;
            let train = training(&history, train_windows)?;
            let shapes = shapes_of(train);
            let plan = match refinement {
                Refinement::Tom => select_refinement_plan(&shapes, train, &switch)?.plan,
                Refinement::Finest => RefinementPlan::finest_only(&shapes),
            };
            let plan = match sizing {
                Sizing::Snr => BootstrapPlan {
                    refinement: plan,
                    registers: snr_sizes(&switch),
                },
                Sizing::ExactFit => exact_fit_plan(&plan, train, &switch, 1.0)?,
            };
            plan.save(&out)?;
        }
        Command::Simulate {
            strategy,
            plan,
            cost,
            switch,
            out,
            mode,
            seed,
            overprovision,
            train_windows,
            report,
        } => {
            let history = load_cost_history(&cost)?;
            let mut config = RunConfig {
                switch: SwitchConfig::load(&switch)?,
                overprovision,
                seed,
                ..RunConfig::default()
            };
            config.load.mode = mode;
            config.validate()?;
            let plan = plan.as_deref().map(BootstrapPlan::load).transpose()?;
            let n_train = train_windows.unwrap_or_else(|| history.len().saturating_sub(1).min(10));
            let (train, test) = split_history(&history, n_train)?;
            let run = run_strategy(strategy, train, test, &config, plan.as_ref())?;
            run.save(&out)?;
            if let Some(dir) = report {
                emit_report(&run, &dir)?;
            }
            println!("{} total {} median {}", run.strategy, run.total(), run.median_load());
        }
        Command::Compare { runs, out } => {
            let runs = runs
                .iter()
                .map(|p| SimulationRun::load(p))
                .collect::<qplan::Result<Vec<_>>>()?;
            let refs: Vec<&SimulationRun> = runs.iter().collect();
            emit_comparison(&refs, &out)?;
        }
        Command::Synth {
            scenario,
            out,
            seed,
            queries_out,
            switch_out,
        } => {
            let (queries, switch) = match scenario {
                Scenario::Bimodal => {
                    let trace = synth_bimodal(&BimodalConfig {
                        seed,
                        ..BimodalConfig::default()
                    });
                    write_trace(BufWriter::new(File::create(&out)?), &trace)?;
                    (bimodal_queries(), bimodal_switch())
                }
                Scenario::Micro => {
                    let trace = synth_micro(&MicroConfig {
                        seed,
                        ..MicroConfig::default()
                    });
                    write_trace(BufWriter::new(File::create(&out)?), &trace)?;
                    (micro_queries(), micro_switch())
                }
                Scenario::Smooth => {
                    if queries_out.is_some() {
                        bail!("the smooth scenario is a cost history and has no queries");
                    }
                    let history = synth_smooth_costs(&SmoothConfig {
                        seed,
                        ..SmoothConfig::default()
                    })?;
                    save_cost_history(&out, &history)?;
                    (Vec::new(), SwitchConfig::default())
                }
            };
            if let Some(p) = queries_out {
                write_json(&p, &queries)?;
            }
            if let Some(p) = switch_out {
                write_json(&p, &switch)?;
            }
        }
        Command::PredictEval {
            cost,
            train_windows,
            out,
            alpha,
            beta,
        } => {
            let history = load_cost_history(&cost)?;
            let rows = predict_eval(&history, train_windows, DespParams { alpha, beta })?;
            let mut w = csv::Writer::from_path(&out).with_context(|| format!("writing {}", out.display()))?;
            w.write_record(["window", "qid", "i", "j", "k", "component", "predicted", "actual", "rel_error"])?;
            for r in &rows {
                w.write_record([
                    r.window.to_string(),
                    r.key.qid.to_string(),
                    r.key.i.to_string(),
                    r.key.j.to_string(),
                    r.key.k.to_string(),
                    r.component.clone(),
                    r.predicted.to_string(),
                    r.actual.to_string(),
                    r.relative_error().map(|e| e.to_string()).unwrap_or_default(),
                ])?;
            }
            w.flush()?;
            match median_relative_error(&rows) {
                Some(e) => println!("median relative error {e}"),
                None => println!("no entries with a nonzero actual value"),
            }
        }
    }
    Ok(())
}
