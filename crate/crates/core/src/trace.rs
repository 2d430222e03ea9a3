//! CSV packet records and windowing.

use std::io::Write;
use std::net::Ipv4Addr;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const TRACE_HEADER: [&str; 8] = ["ts", "sip", "dip", "sport", "dport", "proto", "len", "tcpflags"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PacketRecord {
    /// Seconds.
    pub ts: f64,
    pub sip: u32,
    pub dip: u32,
    pub sport: u16,
    pub dport: u16,
    pub proto: u8,
    pub len: u32,
    pub tcp_flags: u8,
}

impl PacketRecord {
    /// Tuple in the column order of [`crate::query::PACKET_FIELDS`]; `ts` in microseconds.
    pub fn to_tuple(&self) -> Vec<u64> {
        vec![
            (self.ts * 1e6).round().max(0.0) as u64,
            self.sip as u64,
            self.dip as u64,
            self.sport as u64,
            self.dport as u64,
            self.proto as u64,
            self.len as u64,
            self.tcp_flags as u64,
        ]
    }
}

fn parse_ip(s: &str) -> std::result::Result<u32, String> {
    if s.contains('.') {
        s.parse::<Ipv4Addr>()
            .map(u32::from)
            .map_err(|e| format!("bad address `{s}`: {e}"))
    } else {
        s.parse::<u32>().map_err(|e| format!("bad address `{s}`: {e}"))
    }
}

fn parse_num<T: std::str::FromStr>(s: &str, what: &str) -> std::result::Result<T, String> {
    s.parse::<T>()
        .map_err(|_| format!("{what} `{s}` is not a valid value"))
}

/// Reads a trace CSV. Timestamps must be non-decreasing.
pub fn load_trace(path: &Path) -> Result<Vec<PacketRecord>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_trace(file, path)
}

pub fn read_trace<R: std::io::Read>(reader: R, path: &Path) -> Result<Vec<PacketRecord>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let err = |line: u64, reason: String| Error::TraceParse {
        path: path.to_path_buf(),
        line,
        reason,
    };
    let header = rdr.headers().map_err(|e| err(1, e.to_string()))?.clone();
    let got: Vec<String> = header.iter().map(|h| h.to_ascii_lowercase()).collect();
    if got != TRACE_HEADER {
        return Err(err(
            1,
            format!("expected header `{}`, got `{}`", TRACE_HEADER.join(","), got.join(",")),
        ));
    }
    let mut out = Vec::new();
    let mut last_ts = f64::NEG_INFINITY;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            err(line, e.to_string())
        })?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let parse = || -> std::result::Result<PacketRecord, String> {
            if rec.len() != 8 {
                return Err(format!("expected 8 fields, got {}", rec.len()));
            }
            let ts: f64 = parse_num(&rec[0], "ts")?;
            if !ts.is_finite() || ts < 0.0 {
                return Err(format!("ts `{}` must be a finite non-negative number", &rec[0]));
            }
            Ok(PacketRecord {
                ts,
                sip: parse_ip(&rec[1])?,
                dip: parse_ip(&rec[2])?,
                sport: parse_num(&rec[3], "sport")?,
                dport: parse_num(&rec[4], "dport")?,
                proto: parse_num(&rec[5], "proto")?,
                len: parse_num(&rec[6], "len")?,
                tcp_flags: parse_num(&rec[7], "tcpflags")?,
            })
        };
        let p = parse().map_err(|r| err(line, r))?;
        if p.ts < last_ts {
            return Err(err(line, format!("ts {} goes backwards", p.ts)));
        }
        last_ts = p.ts;
        out.push(p);
    }
    Ok(out)
}

/// Writes records with dotted-quad addresses and microsecond-precision timestamps.
pub fn write_trace<W: Write>(w: W, records: &[PacketRecord]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    let csv_err = |e: csv::Error| Error::Precondition(format!("csv write failed: {e}"));
    wtr.write_record(TRACE_HEADER).map_err(csv_err)?;
    for p in records {
        wtr.write_record([
            format!("{:.6}", p.ts),
            Ipv4Addr::from(p.sip).to_string(),
            Ipv4Addr::from(p.dip).to_string(),
            p.sport.to_string(),
            p.dport.to_string(),
            p.proto.to_string(),
            p.len.to_string(),
            p.tcp_flags.to_string(),
        ])
        .map_err(csv_err)?;
    }
    wtr.flush()
        .map_err(|e| Error::Precondition(format!("csv flush failed: {e}")))?;
    Ok(())
}

/// Splits records into consecutive windows of `window_sec` seconds of replayed
/// time, after compressing the trace by `speedup`. Empty windows in the middle
/// of the trace are kept.
pub fn split_windows(records: &[PacketRecord], window_sec: f64, speedup: f64) -> Result<Vec<Vec<PacketRecord>>> {
    if !(window_sec > 0.0) || !(speedup > 0.0) {
        return Err(Error::Precondition(
            "window length and speedup must be positive".into(),
        ));
    }
    let Some(first) = records.first() else {
        return Ok(Vec::new());
    };
    let span = window_sec * speedup;
    let mut windows: Vec<Vec<PacketRecord>> = Vec::new();
    for p in records {
        let idx = ((p.ts - first.ts) / span).floor() as usize;
        if windows.len() <= idx {
            windows.resize_with(idx + 1, Vec::new);
        }
        windows[idx].push(*p);
    }
    Ok(windows)
}
