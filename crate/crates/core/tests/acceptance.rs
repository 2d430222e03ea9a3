//! Runs every acceptance criterion and prints one PASS/FAIL line for each.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use num_bigint::BigInt;
use num_rational::{BigRational, Ratio};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use qplan::bootstrap::{snr_scale, snr_sizes, tom_of_plan, SwitchConfig};
use qplan::cost::{CostEntry, CostMatrix};
use qplan::forecast::{desp_forecast, median_relative_error, predict_eval, DespParams};
use qplan::harness::{run_case_study, run_strategy, split_history, RunConfig, Strategy};
use qplan::load::{operator_load_exact, spilled_load, LoadConfig};
use qplan::mapping::{assignment_cost, exact_map, greedy_map, is_feasible};
use qplan::query::{QueryShape, RefinementPlan};
use qplan::synth::{micro_switch, synth_smooth_costs, BimodalConfig, SmoothConfig};
use qplan::workload::cov_report_for;

type Outcome = Result<(), String>;

fn check(cond: bool, msg: impl FnOnce() -> String) -> Outcome {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(t: Instant, limit: Duration) -> Outcome {
    let took = t.elapsed();
    check(took < limit, || format!("took {took:?}, limit {limit:?}"))
}

fn snr_example() -> Outcome {
    const MB: u64 = 1 << 20;
    let cfg = SwitchConfig { stages: 12, alus_per_stage: 8, stage_mem_bits: 2 * MB, max_reg_bits: MB };
    let t = Instant::now();
    let s = snr_scale(&cfg);
    let regs = snr_sizes(&cfg);
    within(t, Duration::from_millis(1))?;
    check(s == Ratio::new(MB as u128, 18), || format!("S = {s} bits"))?;
    for (i, r) in regs.registers.iter().enumerate() {
        let k = (i % 8 + 1) as u128;
        check(Ratio::from_integer(r.bits as u128) == (s * k).floor(), || format!("register {i}: {} bits", r.bits))?;
    }
    Ok(())
}

fn tom_example() -> Outcome {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("data/superspreader_b.json");
    let m: CostMatrix = serde_json::from_str(&std::fs::read_to_string(path).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    let shapes = vec![QueryShape { qid: 3, levels: vec![0, 8, 16, 24, 32], n_ops: 2 }];
    for (seq, want) in [([0u8, 8, 32], 15.479e6), ([0, 16, 32], 7.2458e6)] {
        let plan = RefinementPlan { per_query: [(3, seq.to_vec())].into() };
        let tom = tom_of_plan(&plan, &shapes, std::slice::from_ref(&m)).map_err(|e| e.to_string())?.mean;
        check((tom - want).abs() <= 0.05e6, || format!("{seq:?}: {tom}"))?;
    }
    Ok(())
}

fn goa_suite() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for n in 0..10_000 {
        let inst = common::random_goa(&mut rng, 8, 5);
        let (_, best) = exact_map(&inst).map_err(|e| e.to_string())?;
        for enhanced in [false, true] {
            let a = greedy_map(&inst, enhanced);
            check(is_feasible(&a, &inst) && common::brute_feasible(&inst, &a.slots), || {
                format!("instance {n}: greedy infeasible")
            })?;
            check(assignment_cost(&inst, &a) >= best, || format!("instance {n}: greedy below exact"))?;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for n in 0..300 {
        let inst = common::random_goa(&mut rng, 6, 4);
        let (a, cost) = exact_map(&inst).map_err(|e| e.to_string())?;
        let (slots, brute) = common::brute_optimum(&inst);
        check(cost == brute && a.slots == slots, || format!("instance {n}: exact {cost} vs enumeration {brute}"))?;
    }
    within(t, Duration::from_secs(60))
}

fn load_identities() -> Outcome {
    let int = |v: u64| BigRational::from_integer(BigInt::from(v));
    let avg = LoadConfig::default();
    let e = CostEntry::new(15 * 32, 150, 15);
    check(spilled_load(&e, 10 * 32) == 50.0, || format!("spilled {}", spilled_load(&e, 10 * 32)))?;
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..1000 {
        let n_in = rng.gen_range(0..1_000_000u64);
        let e = CostEntry::new(rng.gen_range(1..10_000_000), n_in, rng.gen_range(0..=n_in));
        check(operator_load_exact(&e, 0, &avg) == int(e.n_in), || format!("{e:?} at 0"))?;
        check(operator_load_exact(&e, e.b, &avg) == int(e.n_out), || format!("{e:?} at B"))?;
        let (a1, a2) = (rng.gen_range(0..=e.b), rng.gen_range(0..=e.b));
        let (lo, hi) = (a1.min(a2), a1.max(a2));
        check(operator_load_exact(&e, hi, &avg) <= operator_load_exact(&e, lo, &avg), || {
            format!("{e:?} not monotone between {lo} and {hi}")
        })?;
    }
    Ok(())
}

fn forecasting() -> Outcome {
    let t = Instant::now();
    let f = desp_forecast(&[10.0, 12.0, 11.0], DespParams { alpha: 0.5, beta: 0.5 }).map_err(|e| e.to_string())?;
    check(f == 13.75, || format!("forecast {f}"))?;
    let linear: Vec<f64> = (0..20).map(|t| 50.0 + 4.0 * t as f64).collect();
    for n in 2..linear.len() {
        let f = desp_forecast(&linear[..n], DespParams::default()).map_err(|e| e.to_string())?;
        check((f - linear[n]).abs() < 1e-9, || format!("linear step {n}: {f}"))?;
    }
    let h = synth_smooth_costs(&SmoothConfig::default()).map_err(|e| e.to_string())?;
    let rows = predict_eval(&h, 10, DespParams::default()).map_err(|e| e.to_string())?;
    let e = median_relative_error(&rows).unwrap_or(f64::INFINITY);
    check(e < 0.10, || format!("median relative error {e}"))?;
    within(t, Duration::from_secs(5))
}

fn case_study() -> Outcome {
    let t = Instant::now();
    let cs = run_case_study(&BimodalConfig::default()).map_err(|e| e.to_string())?;
    let (pre, post) = cs.static_phases();
    check(post > 2.0 * pre, || format!("static {pre} -> {post}"))?;
    let (pre, post) = cs.oracle_phases();
    check(post <= 2.0 * pre, || format!("oracle {pre} -> {post}"))?;
    let (o, s) = (cs.oracle_run.total(), cs.static_run.total());
    check(o <= s, || format!("oracle total {o} > static total {s}"))?;
    within(t, Duration::from_secs(10))
}

fn micro_dominance() -> Outcome {
    let t = Instant::now();
    for seed in 1..=20 {
        let h = common::micro_history(seed);
        let cov = cov_report_for(&h, &common::micro_finest_keys(&h)).map_err(|e| e.to_string())?;
        check(cov.per_operator.values().all(|&c| c >= 0.3) && cov.aggregate <= 0.1, || {
            format!("seed {seed}: {cov:?}")
        })?;
        let config = RunConfig { switch: micro_switch(), seed, ..RunConfig::default() };
        let (train, test) = split_history(&h, 10).map_err(|e| e.to_string())?;
        let runs = Strategy::ALL
            .iter()
            .map(|&s| run_strategy(s, train, test, &config, None))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| e.to_string())?;
        let get = |s: Strategy| runs.iter().find(|r| r.strategy == s).expect("every strategy ran");
        let opt = get(Strategy::OptimalSonata);
        for r in &runs {
            for w in &r.windows {
                let o = opt.window(w.window).map_or(f64::INFINITY, |x| x.sp_load);
                check(o <= w.sp_load, || format!("seed {seed} {} window {}: {} < optimal {o}", r.strategy, w.window, w.sp_load))?;
            }
        }
        let (d, s) = (get(Strategy::DynamiqOracle).total(), get(Strategy::SonataStatic).total());
        check(d < s, || format!("seed {seed}: oracle {d} >= static {s}"))?;
    }
    within(t, Duration::from_secs(120))
}

fn greedy_speed() -> Outcome {
    let inst = common::eval_scale_instance(3);
    check(inst.registers.len() == 96 && inst.operators.len() == 70, || "unexpected instance shape".into())?;
    let t = Instant::now();
    let a = greedy_map(&inst, true);
    within(t, Duration::from_millis(100))?;
    check(is_feasible(&a, &inst), || "infeasible".into())
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let run = |args: &[&str]| -> Outcome {
        let out = Command::new(env!("CARGO_BIN_EXE_qplan"))
            .current_dir(dir.path())
            .args(args)
            .output()
            .map_err(|e| e.to_string())?;
        check(out.status.success(), || format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr)))
    };
    run(&["synth", "--scenario", "micro", "--out", "t.csv", "--seed", "5", "--queries-out", "q.json", "--switch-out", "sw.json"])?;
    run(&["gen-cost-matrix", "--queries", "q.json", "--trace", "t.csv", "--out", "cm.json", "--window-sec", "1"])?;
    run(&["bootstrap", "--cost", "cm.json", "--switch", "sw.json", "--out", "plan.json", "--train-windows", "10"])?;
    for name in ["a", "b"] {
        run(&[
            "simulate", "--strategy", "DYNAMIQ_PRED", "--plan", "plan.json", "--cost", "cm.json", "--switch", "sw.json",
            "--out", &format!("{name}.json"), "--seed", "5", "--report", name,
        ])?;
    }
    let read = |p: String| std::fs::read(dir.path().join(&p)).map_err(|e| format!("{p}: {e}"));
    check(read("a.json".into())? == read("b.json".into())?, || "RUN.json differs".into())?;
    for f in ["loads.csv", "allocation.csv", "cov.csv"] {
        check(read(format!("a/{f}"))? == read(format!("b/{f}"))?, || format!("{f} differs"))?;
    }
    Ok(())
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("Slice-n-Repeat worked example", snr_example),
        ("TOM of the superspreader plans", tom_example),
        ("greedy and exact mapping oracle suite", goa_suite),
        ("load model identities", load_identities),
        ("forecasting", forecasting),
        ("bi-modal case study", case_study),
        ("strategy dominance on micro seeds", micro_dominance),
        ("greedy on the eval-scale instance", greedy_speed),
        ("simulate determinism", determinism),
    ];
    std::panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let took = t.elapsed();
        match outcome {
            Ok(()) => println!("criterion {}: PASS  {name} ({took:.2?})", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {}: FAIL  {name} ({took:.2?}): {why}", i + 1);
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
