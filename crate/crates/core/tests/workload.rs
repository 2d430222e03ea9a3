use std::path::Path;

use qplan::cost::CostKey;
use qplan::query::load_queries;
use qplan::synth::{synth_micro, MicroConfig};
use qplan::trace::{load_trace, write_trace, PacketRecord};
use qplan::workload::{
    check_entry_invariants, cov_report, expected_entry_count, generate_cost_history, WorkloadConfig,
};

fn queries() -> Vec<qplan::query::QuerySpec> {
    load_queries(&Path::new(env!("CARGO_MANIFEST_DIR")).join("data/queries.json")).unwrap()
}

fn pkt(ts: f64, sip: u32, dip: u32) -> PacketRecord {
    PacketRecord { ts, sip, dip, sport: 1000, dport: 80, proto: 6, len: 60, tcp_flags: 2 }
}

#[test]
fn three_source_prefixes_give_three_coarse_keys() {
    let ss: Vec<_> = queries().into_iter().filter(|q| q.qid == 3).collect();
    let mut trace = Vec::new();
    for (n, prefix) in [10u32, 20, 30].iter().enumerate() {
        for host in 0..5u32 {
            trace.push(pkt(0.1 * (n as f64 + 1.0), prefix << 24 | host, 0x0a00_0001));
        }
    }
    let h = generate_cost_history(&ss, &trace, &WorkloadConfig::default()).unwrap();
    assert_eq!(h.len(), 1);
    let coarse = h[0].get(CostKey { qid: 3, i: 0, j: 8, k: 0 }).unwrap();
    assert_eq!(coarse.b, 3);
    let fine = h[0].get(CostKey { qid: 3, i: 0, j: 32, k: 0 }).unwrap();
    assert_eq!(fine.b, 15);
    assert_eq!(fine.n_in, 15);
}

#[test]
fn fixture_queries_yield_full_matrices() {
    let qs = queries();
    let cfg = MicroConfig { windows: 4, ..MicroConfig::default() };
    let trace = synth_micro(&cfg);
    let h = generate_cost_history(&qs, &trace, &WorkloadConfig { window_sec: 1.0, ..WorkloadConfig::default() })
        .unwrap();
    assert_eq!(h.len(), 4);
    for m in &h {
        assert_eq!(m.len(), expected_entry_count(&qs));
        check_entry_invariants(m).unwrap();
    }
    let cov = cov_report(&h).unwrap();
    assert_eq!(cov.per_operator.len(), expected_entry_count(&qs));
}

#[test]
fn trace_file_roundtrip_gives_same_history() {
    let cfg = MicroConfig { windows: 3, ..MicroConfig::default() };
    let trace = synth_micro(&cfg);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.csv");
    write_trace(std::fs::File::create(&path).unwrap(), &trace).unwrap();
    let back = load_trace(&path).unwrap();
    assert_eq!(back, trace);
    let wl = WorkloadConfig { window_sec: 1.0, ..WorkloadConfig::default() };
    let qs = qplan::synth::micro_queries();
    assert_eq!(generate_cost_history(&qs, &back, &wl).unwrap(), generate_cost_history(&qs, &trace, &wl).unwrap());
}
