//! Per-window cost matrices.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::query::{OperatorRef, QueryShape};

/// (query, prior level, level, stateful operator ordinal).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CostKey {
    pub qid: u32,
    pub i: u8,
    pub j: u8,
    pub k: usize,
}

impl fmt::Display for CostKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(q={}, {}->{}, op {})", self.qid, self.i, self.j, self.k)
    }
}

impl From<OperatorRef> for CostKey {
    fn from(o: OperatorRef) -> Self {
        CostKey {
            qid: o.qid,
            i: o.prior,
            j: o.level,
            k: o.k,
        }
    }
}

impl From<CostKey> for OperatorRef {
    fn from(c: CostKey) -> Self {
        OperatorRef {
            qid: c.qid,
            prior: c.i,
            level: c.j,
            k: c.k,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CostEntry {
    /// Bits of register memory needed to hold every key.
    #[serde(rename = "B")]
    pub b: u64,
    pub n_in: u64,
    pub n_out: u64,
}

impl CostEntry {
    pub fn new(b: u64, n_in: u64, n_out: u64) -> Self {
        CostEntry { b, n_in, n_out }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "CostMatrixRepr", into = "CostMatrixRepr")]
pub struct CostMatrix {
    pub window: usize,
    pub entries: BTreeMap<CostKey, CostEntry>,
}

#[derive(Serialize, Deserialize)]
struct CostMatrixRepr {
    window: usize,
    entries: Vec<EntryRepr>,
}

#[derive(Serialize, Deserialize)]
struct EntryRepr {
    qid: u32,
    i: u8,
    j: u8,
    k: usize,
    #[serde(rename = "B")]
    b: u64,
    n_in: u64,
    n_out: u64,
}

impl From<CostMatrixRepr> for CostMatrix {
    fn from(r: CostMatrixRepr) -> Self {
        CostMatrix {
            window: r.window,
            entries: r
                .entries
                .into_iter()
                .map(|e| {
                    (
                        CostKey {
                            qid: e.qid,
                            i: e.i,
                            j: e.j,
                            k: e.k,
                        },
                        CostEntry::new(e.b, e.n_in, e.n_out),
                    )
                })
                .collect(),
        }
    }
}

impl From<CostMatrix> for CostMatrixRepr {
    fn from(m: CostMatrix) -> Self {
        CostMatrixRepr {
            window: m.window,
            entries: m
                .entries
                .into_iter()
                .map(|(k, e)| EntryRepr {
                    qid: k.qid,
                    i: k.i,
                    j: k.j,
                    k: k.k,
                    b: e.b,
                    n_in: e.n_in,
                    n_out: e.n_out,
                })
                .collect(),
        }
    }
}

impl CostMatrix {
    pub fn new(window: usize) -> Self {
        CostMatrix {
            window,
            entries: BTreeMap::new(),
        }
    }

    pub fn get(&self, key: CostKey) -> Result<&CostEntry> {
        self.entries.get(&key).ok_or(Error::MissingEntry(key))
    }

    pub fn entry(&self, op: OperatorRef) -> Result<&CostEntry> {
        self.get(op.into())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Query shapes implied by the keys: levels seen and operator count.
    pub fn shapes(&self) -> Vec<QueryShape> {
        shapes_of(std::slice::from_ref(self))
    }
}

/// Query shapes seen across a set of matrices.
pub fn shapes_of(history: &[CostMatrix]) -> Vec<QueryShape> {
    let mut levels: BTreeMap<u32, BTreeSet<u8>> = BTreeMap::new();
    let mut ops: BTreeMap<u32, usize> = BTreeMap::new();
    for m in history {
        for k in m.entries.keys() {
            let l = levels.entry(k.qid).or_default();
            l.insert(k.i);
            l.insert(k.j);
            let n = ops.entry(k.qid).or_default();
            *n = (*n).max(k.k + 1);
        }
    }
    levels
        .into_iter()
        .map(|(qid, l)| QueryShape {
            qid,
            levels: l.into_iter().collect(),
            n_ops: ops[&qid],
        })
        .collect()
}

/// Reads one matrix or an array of matrices.
pub fn load_cost_history(path: &Path) -> Result<Vec<CostMatrix>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_cost_history(&text)
}

pub fn parse_cost_history(text: &str) -> Result<Vec<CostMatrix>> {
    let value: serde_json::Value = serde_json::from_str(text)?;
    let mut out: Vec<CostMatrix> = if value.is_array() {
        serde_json::from_value(value)?
    } else {
        vec![serde_json::from_value(value)?]
    };
    out.sort_by_key(|m| m.window);
    Ok(out)
}

pub fn save_cost_history(path: &Path, history: &[CostMatrix]) -> Result<()> {
    let text = serde_json::to_string_pretty(history)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// Element-wise median over windows. Missing entries count as zero.
/// For an even count the upper of the two middle values is taken.
pub fn median_matrix(history: &[CostMatrix]) -> CostMatrix {
    let keys: BTreeSet<CostKey> = history.iter().flat_map(|m| m.entries.keys().copied()).collect();
    let mut out = CostMatrix::new(history.last().map(|m| m.window).unwrap_or(0));
    for key in keys {
        let col = |f: fn(&CostEntry) -> u64| {
            let mut v: Vec<u64> = history
                .iter()
                .map(|m| m.entries.get(&key).map(f).unwrap_or(0))
                .collect();
            v.sort_unstable();
            v[v.len() / 2]
        };
        let b = col(|e| e.b);
        let n_in = col(|e| e.n_in);
        let n_out = col(|e| e.n_out).min(n_in);
        out.entries.insert(key, CostEntry::new(b, n_in, n_out));
    }
    out
}
