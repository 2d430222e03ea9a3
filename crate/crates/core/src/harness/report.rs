use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use super::sim::SimulationRun;
use crate::error::{Error, Result};
use crate::query::OperatorRef;
use crate::workload::cov;

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Precondition(format!("writing {}: {other:?}", path.display())),
    }
}

fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(header).map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.write_record(r).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// `window,strategy,sp_load` rows of several runs, run by run.
pub fn load_rows(runs: &[&SimulationRun]) -> Vec<Vec<String>> {
    runs.iter()
        .flat_map(|r| {
            r.windows
                .iter()
                .map(move |w| vec![w.window.to_string(), r.strategy.to_string(), w.sp_load.to_string()])
        })
        .collect()
}

/// `window,op,alloc_bits,req_bits,rho,load` rows.
pub fn allocation_rows(run: &SimulationRun) -> Vec<Vec<String>> {
    run.windows
        .iter()
        .flat_map(|w| {
            w.per_operator.iter().map(move |o| {
                vec![
                    w.window.to_string(),
                    o.op.to_string(),
                    o.alloc_bits.to_string(),
                    o.req_bits.to_string(),
                    o.rho.to_string(),
                    o.load.to_string(),
                ]
            })
        })
        .collect()
}

/// CoV of the required bits of every operator across the run's windows,
/// plus one `aggregate` row for the per-window sum.
pub fn cov_rows(run: &SimulationRun) -> Vec<Vec<String>> {
    let mut series: BTreeMap<OperatorRef, Vec<f64>> = BTreeMap::new();
    let mut totals = Vec::with_capacity(run.windows.len());
    for w in &run.windows {
        let mut t = 0.0;
        for o in &w.per_operator {
            series.entry(o.op).or_default().push(o.req_bits as f64);
            t += o.req_bits as f64;
        }
        totals.push(t);
    }
    let mean = |v: &[f64]| if v.is_empty() { 0.0 } else { v.iter().sum::<f64>() / v.len() as f64 };
    let mut rows: Vec<Vec<String>> = series
        .iter()
        .map(|(op, v)| vec![op.to_string(), v.len().to_string(), mean(v).to_string(), cov(v).to_string()])
        .collect();
    rows.push(vec![
        "aggregate".into(),
        totals.len().to_string(),
        mean(&totals).to_string(),
        cov(&totals).to_string(),
    ]);
    rows
}

/// Stacked bars, one per window, one block per operator. Block height is
/// proportional to allocated bits; the fill goes from green (ρ = 1) to red
/// (ρ = 0).
pub fn allocation_svg(run: &SimulationRun) -> String {
    const BAR: f64 = 24.0;
    const GAP: f64 = 6.0;
    const HEIGHT: f64 = 240.0;
    const PAD: f64 = 30.0;
    let max_alloc = run
        .windows
        .iter()
        .map(|w| w.per_operator.iter().map(|o| o.alloc_bits).sum::<u64>())
        .max()
        .unwrap_or(0)
        .max(1) as f64;
    let width = PAD * 2.0 + run.windows.len() as f64 * (BAR + GAP);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{:.0}" font-family="monospace" font-size="9">"#,
        HEIGHT + PAD * 2.0
    );
    let _ = writeln!(s, r#"<text x="{PAD}" y="14">{} allocation by window</text>"#, run.strategy);
    for (i, w) in run.windows.iter().enumerate() {
        let x = PAD + i as f64 * (BAR + GAP);
        let mut y = PAD + HEIGHT;
        for o in w.per_operator.iter().filter(|o| o.alloc_bits > 0) {
            let h = o.alloc_bits as f64 / max_alloc * HEIGHT;
            y -= h;
            let red = ((1.0 - o.rho) * 255.0).round() as u8;
            let green = (o.rho * 200.0).round() as u8;
            let _ = writeln!(
                s,
                r#"<rect x="{x:.1}" y="{y:.2}" width="{BAR}" height="{h:.2}" fill="rgb({red},{green},60)" stroke="white"><title>{} rho={:.3} load={}</title></rect>"#,
                o.op, o.rho, o.load
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.0}" text-anchor="middle">{}</text>"#,
            x + BAR / 2.0,
            PAD + HEIGHT + 12.0,
            w.window
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Writes loads.csv, allocation.csv, cov.csv and allocation.svg into `dir`.
pub fn emit_report(run: &SimulationRun, dir: &Path) -> Result<()> {
    create_dir(dir)?;
    write_csv(&dir.join("loads.csv"), &["window", "strategy", "sp_load"], &load_rows(&[run]))?;
    write_csv(
        &dir.join("allocation.csv"),
        &["window", "op", "alloc_bits", "req_bits", "rho", "load"],
        &allocation_rows(run),
    )?;
    write_csv(&dir.join("cov.csv"), &["op", "windows", "mean_req_bits", "cov_req_bits"], &cov_rows(run))?;
    let svg = dir.join("allocation.svg");
    std::fs::write(&svg, allocation_svg(run)).map_err(|e| Error::io(&svg, e))
}

/// Per-strategy summary: windows, total, median, mean and max load.
pub fn summary_rows(runs: &[&SimulationRun]) -> Vec<Vec<String>> {
    runs.iter()
        .map(|r| {
            let loads = r.loads();
            let n = loads.len();
            let mean = if n == 0 { 0.0 } else { r.total() / n as f64 };
            let max = loads.iter().copied().fold(0.0, f64::max);
            vec![
                r.strategy.to_string(),
                n.to_string(),
                r.total().to_string(),
                r.median_load().to_string(),
                mean.to_string(),
                max.to_string(),
            ]
        })
        .collect()
}

/// Writes loads.csv with every run's windows and summary.csv into `dir`.
pub fn emit_comparison(runs: &[&SimulationRun], dir: &Path) -> Result<()> {
    create_dir(dir)?;
    write_csv(&dir.join("loads.csv"), &["window", "strategy", "sp_load"], &load_rows(runs))?;
    write_csv(
        &dir.join("summary.csv"),
        &["strategy", "windows", "total", "median", "mean", "max"],
        &summary_rows(runs),
    )
}
