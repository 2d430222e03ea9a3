//! Seeded synthetic traces: the bi-modal two-query scenario and small
//! anti-correlated workloads used for planner comparisons. Also smooth
//! cost histories for checking the forecaster.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::cost::{CostEntry, CostKey, CostMatrix};
use crate::bootstrap::{Register, RegisterConfig, SwitchConfig};
use crate::pipeline::EntryBits;
use crate::query::QuerySpec;
use crate::trace::PacketRecord;
use crate::workload::WorkloadConfig;
use crate::error::{Error, Result};

pub const PROTO_TCP: u8 = 6;
pub const PROTO_UDP: u8 = 17;
pub const TCP_SYN: u8 = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BimodalConfig {
    pub seed: u64,
    pub windows: usize,
    pub window_sec: f64,
    /// Seconds from the start at which the two queries swap key counts.
    pub flip_at: f64,
    pub newtcp_before: usize,
    pub newtcp_after: usize,
    pub ddos_before: usize,
    pub ddos_after: usize,
    pub packets_per_key: usize,
}

impl Default for BimodalConfig {
    fn default() -> Self {
        BimodalConfig {
            seed: 1,
            windows: 6,
            window_sec: 1.0,
            flip_at: 3.0,
            newtcp_before: 10,
            newtcp_after: 100,
            ddos_before: 100,
            ddos_after: 10,
            packets_per_key: 8,
        }
    }
}

/// Queries for the bi-modal scenario: qid 1 counts new TCP connections per
/// destination, qid 2 collects distinct (source, destination) pairs of UDP
/// traffic. Both refine on dIP from the root straight to /32.
pub fn bimodal_queries() -> Vec<QuerySpec> {
    serde_json::from_str(
        r#"[
          {"qid": 1, "name": "new_tcp", "refinement_key": "dIP", "levels": [0, 32],
           "ops": [
             {"kind": "filter", "predicate": {"and": [
               {"cmp": {"field": "proto", "op": "eq", "value": 6}},
               {"cmp": {"field": "tcpFlags", "op": "eq", "value": 2}}]}},
             {"kind": "map", "columns": [{"name": "dIP", "expr": {"field": "dIP"}}]},
             {"kind": "reduce", "keys": ["dIP"]},
             {"kind": "filter", "predicate": {"cmp": {"field": "count", "op": "ge", "value": 1}}}
           ]},
          {"qid": 2, "name": "ddos", "refinement_key": "dIP", "levels": [0, 32],
           "ops": [
             {"kind": "filter", "predicate": {"cmp": {"field": "proto", "op": "eq", "value": 17}}},
             {"kind": "map", "columns": [{"name": "sIP", "expr": {"field": "sIP"}},
                                         {"name": "dIP", "expr": {"field": "dIP"}}]},
             {"kind": "distinct"}
           ]}
        ]"#,
    )
    .expect("built-in queries parse")
}

/// The case study stores full 32-bit entries for both operators.
pub fn bimodal_workload(cfg: &BimodalConfig) -> WorkloadConfig {
    WorkloadConfig {
        window_sec: cfg.window_sec,
        speedup: 1.0,
        entry_bits: EntryBits {
            distinct: 32,
            reduce: 32,
        },
    }
}

/// One stage with a 64-entry and a 2048-entry register of 32-bit slots.
pub fn bimodal_registers() -> RegisterConfig {
    RegisterConfig {
        registers: vec![
            Register {
                id: 0,
                stage: 0,
                bits: 64 * 32,
            },
            Register {
                id: 1,
                stage: 0,
                bits: 2048 * 32,
            },
        ],
    }
}

pub fn bimodal_switch() -> SwitchConfig {
    SwitchConfig {
        stages: 1,
        alus_per_stage: 2,
        stage_mem_bits: 2112 * 32,
        max_reg_bits: 2048 * 32,
    }
}

fn push_keyed(
    out: &mut Vec<PacketRecord>,
    rng: &mut ChaCha8Rng,
    start: f64,
    span: f64,
    per_key: usize,
    make: impl Fn(&mut ChaCha8Rng) -> PacketRecord,
) {
    let n = per_key + rng.gen_range(0..3);
    for _ in 0..n {
        let mut p = make(rng);
        p.ts = start + rng.gen::<f64>() * span;
        out.push(p);
    }
}

/// Seeded two-phase trace. Before `flip_at` the TCP query sees
/// `newtcp_before` destinations and the UDP query `ddos_before` pairs; after
/// it the counts are swapped to the `_after` values.
pub fn synth_bimodal(cfg: &BimodalConfig) -> Vec<PacketRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = Vec::new();
    let victim = u32::from(std::net::Ipv4Addr::new(172, 16, 0, 1));
    for w in 0..cfg.windows {
        let start = w as f64 * cfg.window_sec;
        let after = start >= cfg.flip_at;
        let (n_tcp, n_ddos) = if after {
            (cfg.newtcp_after, cfg.ddos_after)
        } else {
            (cfg.newtcp_before, cfg.ddos_before)
        };
        // keep every packet strictly inside its window
        let span = cfg.window_sec * 0.999;
        for d in 0..n_tcp {
            let dip = u32::from(std::net::Ipv4Addr::new(10, 1, (d / 250) as u8, (d % 250) as u8 + 1));
            push_keyed(&mut out, &mut rng, start, span, cfg.packets_per_key, |r| PacketRecord {
                ts: 0.0,
                sip: r.gen::<u32>() | 0x0100_0000,
                dip,
                sport: r.gen_range(1024..65535),
                dport: 80,
                proto: PROTO_TCP,
                len: 60,
                tcp_flags: TCP_SYN,
            });
        }
        for s in 0..n_ddos {
            let sip = u32::from(std::net::Ipv4Addr::new(192, 0, (s / 250) as u8, (s % 250) as u8 + 1));
            push_keyed(&mut out, &mut rng, start, span, cfg.packets_per_key, |r| PacketRecord {
                ts: 0.0,
                sip,
                dip: victim,
                sport: r.gen_range(1024..65535),
                dport: 53,
                proto: PROTO_UDP,
                len: 512,
                tcp_flags: 0,
            });
        }
    }
    sort_by_time(&mut out);
    out
}

fn sort_by_time(v: &mut [PacketRecord]) {
    // timestamps are rounded to microseconds so the CSV round trip is exact
    for p in v.iter_mut() {
        p.ts = (p.ts * 1e6).round() / 1e6;
    }
    v.sort_by(|a, b| a.ts.total_cmp(&b.ts).then(a.sip.cmp(&b.sip)).then(a.dip.cmp(&b.dip)));
}

/// Small two-query workload whose per-query key counts move in opposite
/// directions while their sum stays fixed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MicroConfig {
    pub seed: u64,
    pub windows: usize,
    pub window_sec: f64,
    /// Heavy destinations shared between the two queries in every window.
    pub total_keys: usize,
    /// Largest swing of query 1's share away from one half, in (0, 0.5).
    /// Every window swings by at least half of it.
    pub swing: f64,
    /// Packets each heavy destination receives.
    pub packets_per_key: usize,
    /// /16 prefixes the heavy destinations of one query fall into.
    pub hot_prefixes: usize,
    /// Single-packet background destinations per query and window.
    pub noise: usize,
}

impl Default for MicroConfig {
    fn default() -> Self {
        MicroConfig {
            seed: 1,
            windows: 20,
            window_sec: 1.0,
            total_keys: 60,
            swing: 0.45,
            packets_per_key: 4,
            hot_prefixes: 3,
            noise: 8,
        }
    }
}

/// Two heavy-hitter queries (TCP and UDP destinations) refined on dIP over
/// the levels {0, 16, 32}.
pub fn micro_queries() -> Vec<QuerySpec> {
    let q = |qid: u32, proto: u8| {
        serde_json::from_value::<QuerySpec>(serde_json::json!({
            "qid": qid, "refinement_key": "dIP", "levels": [0, 16, 32],
            "ops": [
              {"kind": "filter", "predicate": {"cmp": {"field": "proto", "op": "eq", "value": proto}}},
              {"kind": "map", "columns": [{"name": "dIP", "expr": {"field": "dIP"}}]},
              {"kind": "reduce", "keys": ["dIP"]},
              {"kind": "filter", "predicate": {"cmp": {"field": "count", "op": "ge", "value": 3}}}
            ]
        }))
        .expect("built-in queries parse")
    };
    vec![q(1, PROTO_TCP), q(2, PROTO_UDP)]
}

/// Two stages of two registers each.
pub fn micro_switch() -> SwitchConfig {
    SwitchConfig {
        stages: 2,
        alus_per_stage: 2,
        stage_mem_bits: 1536,
        max_reg_bits: 1536,
    }
}

pub fn micro_workload(cfg: &MicroConfig) -> WorkloadConfig {
    WorkloadConfig {
        window_sec: cfg.window_sec,
        speedup: 1.0,
        entry_bits: EntryBits::default(),
    }
}

/// Seeded trace for [`micro_queries`].
pub fn synth_micro(cfg: &MicroConfig) -> Vec<PacketRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = Vec::new();
    let span = cfg.window_sec * 0.999;
    // hot prefixes: 10.q.x.0/16 for query q
    let hot: Vec<Vec<u32>> = (0..2u32)
        .map(|q| {
            (0..cfg.hot_prefixes as u32)
                .map(|h| (10 << 24) | ((q + 1) << 20) | (h << 16))
                .collect()
        })
        .collect();
    for w in 0..cfg.windows {
        let start = w as f64 * cfg.window_sec;
        // at least half the amplitude, either direction
        let dir = if rng.gen::<bool>() { 1.0 } else { -1.0 };
        let share = 0.5 + dir * cfg.swing * rng.gen_range(0.5..=1.0);
        let n1 = ((cfg.total_keys as f64) * share).round() as usize;
        let counts = [n1, cfg.total_keys - n1.min(cfg.total_keys)];
        for (q, &n) in counts.iter().enumerate() {
            let proto = if q == 0 { PROTO_TCP } else { PROTO_UDP };
            let mut hosts: Vec<u32> = (1..=250u32).collect();
            hosts.shuffle(&mut rng);
            for d in 0..n {
                let prefix = hot[q][d % hot[q].len()];
                let dip = prefix | ((d / hot[q].len()) as u32) << 8 | hosts[d % hosts.len()];
                for _ in 0..cfg.packets_per_key {
                    out.push(PacketRecord {
                        ts: start + rng.gen::<f64>() * span,
                        sip: rng.gen::<u32>() | 0x0100_0000,
                        dip,
                        sport: rng.gen_range(1024..65535),
                        dport: 443,
                        proto,
                        len: 100,
                        tcp_flags: if proto == PROTO_TCP { TCP_SYN } else { 0 },
                    });
                }
            }
            for _ in 0..cfg.noise {
                // one packet each, spread over cold /16 prefixes
                let dip = (20 << 24) | (rng.gen_range(0..4096u32) << 12) | rng.gen_range(1..4096u32);
                out.push(PacketRecord {
                    ts: start + rng.gen::<f64>() * span,
                    sip: rng.gen::<u32>() | 0x0100_0000,
                    dip,
                    sport: rng.gen_range(1024..65535),
                    dport: 443,
                    proto,
                    len: 100,
                    tcp_flags: if proto == PROTO_TCP { TCP_SYN } else { 0 },
                });
            }
        }
    }
    sort_by_time(&mut out);
    out
}

/// Cost history whose entries follow a linear trend times (1 + d), where d
/// is an AR(1) deviation with Gaussian innovations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothConfig {
    pub seed: u64,
    pub windows: usize,
    pub operators: usize,
    pub phi: f64,
    /// Innovation standard deviation, relative to the trend.
    pub noise: f64,
    /// Per-window growth, relative to the starting level.
    pub slope: f64,
}

impl Default for SmoothConfig {
    fn default() -> Self {
        SmoothConfig {
            seed: 1,
            windows: 40,
            operators: 12,
            phi: 0.5,
            noise: 0.05,
            slope: 0.02,
        }
    }
}

pub fn synth_smooth_costs(cfg: &SmoothConfig) -> Result<Vec<CostMatrix>> {
    if !(cfg.noise >= 0.0 && cfg.noise.is_finite()) || !(cfg.phi.abs() < 1.0) {
        return Err(Error::Precondition("need |phi| < 1 and a finite noise level".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let eps = Normal::new(0.0, cfg.noise).map_err(|e| Error::Precondition(e.to_string()))?;
    let mut out: Vec<CostMatrix> = (0..cfg.windows).map(CostMatrix::new).collect();
    for o in 0..cfg.operators {
        let key = CostKey { qid: o as u32 + 1, i: 0, j: 32, k: 0 };
        let base = rng.gen_range(2_000.0..20_000.0);
        let out_share = rng.gen_range(0.1..0.5);
        let mut d = 0.0;
        for (w, m) in out.iter_mut().enumerate() {
            d = cfg.phi * d + eps.sample(&mut rng);
            let level = (base * (1.0 + cfg.slope * w as f64) * (1.0 + d)).max(0.0);
            let n_in = level.round() as u64;
            let n_out = (level * out_share).round() as u64;
            m.entries.insert(key, CostEntry::new(n_in * 32, n_in, n_out.min(n_in)));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost::CostKey;
    use crate::workload::generate_cost_history;

    #[test]
    fn bimodal_default_counts() {
        let cfg = BimodalConfig::default();
        let trace = synth_bimodal(&cfg);
        let hist = generate_cost_history(&bimodal_queries(), &trace, &bimodal_workload(&cfg)).unwrap();
        assert_eq!(hist.len(), 6);
        let tcp = CostKey { qid: 1, i: 0, j: 32, k: 0 };
        let ddos = CostKey { qid: 2, i: 0, j: 32, k: 0 };
        for (w, m) in hist.iter().enumerate() {
            let (a, b) = if w < 3 { (10, 100) } else { (100, 10) };
            assert_eq!(m.entries[&tcp].n_out, a, "window {w}");
            assert_eq!(m.entries[&ddos].n_out, b, "window {w}");
        }
    }

    #[test]
    fn flip_at_zero_is_single_mode() {
        let cfg = BimodalConfig {
            flip_at: 0.0,
            ..Default::default()
        };
        let trace = synth_bimodal(&cfg);
        let hist = generate_cost_history(&bimodal_queries(), &trace, &bimodal_workload(&cfg)).unwrap();
        let tcp = CostKey { qid: 1, i: 0, j: 32, k: 0 };
        assert!(hist.iter().all(|m| m.entries[&tcp].n_out == 100));
    }

    #[test]
    fn seeded_traces_repeat() {
        let cfg = BimodalConfig::default();
        assert_eq!(synth_bimodal(&cfg), synth_bimodal(&cfg));
        let m = MicroConfig::default();
        assert_eq!(synth_micro(&m), synth_micro(&m));
        let other = MicroConfig { seed: 2, ..m.clone() };
        assert_ne!(synth_micro(&m), synth_micro(&other));
    }

    #[test]
    fn smooth_costs_are_seeded() {
        let cfg = SmoothConfig::default();
        let a = synth_smooth_costs(&cfg).unwrap();
        assert_eq!(a, synth_smooth_costs(&cfg).unwrap());
        assert_eq!(a.len(), 40);
        assert!(a.iter().all(|m| m.len() == 12 && m.entries.values().all(|e| e.n_out <= e.n_in)));
        let flat = SmoothConfig { noise: 0.0, ..cfg };
        let m = synth_smooth_costs(&flat).unwrap();
        let e = |w: usize| m[w].entries.values().next().unwrap().n_in as f64;
        assert!((e(2) - e(1) - (e(1) - e(0))).abs() <= 1.0);
    }
}
