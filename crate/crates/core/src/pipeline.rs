//! Tuple-at-a-time interpreter for query pipelines.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::cost::CostEntry;
use crate::error::{Error, Result};
use crate::query::{mask_ipv4, output_schema, CmpOp, DataflowOp, Expr, FieldRef, OpKind, Predicate, QuerySpec, PACKET_FIELDS};
use crate::trace::PacketRecord;

/// A bag of tuples sharing one schema.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Relation {
    pub schema: Vec<String>,
    pub rows: Vec<Vec<u64>>,
}

impl Relation {
    pub fn new(schema: &[&str], rows: Vec<Vec<u64>>) -> Self {
        Relation {
            schema: schema.iter().map(|s| s.to_string()).collect(),
            rows,
        }
    }

    pub fn from_packets(packets: &[PacketRecord]) -> Self {
        Relation {
            schema: PACKET_FIELDS.iter().map(|s| s.to_string()).collect(),
            rows: packets.iter().map(PacketRecord::to_tuple).collect(),
        }
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.schema.iter().position(|s| s == name)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// Bits one register entry takes, per stateful operator kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntryBits {
    pub distinct: u64,
    pub reduce: u64,
}

impl Default for EntryBits {
    fn default() -> Self {
        EntryBits {
            distinct: 1,
            reduce: 32,
        }
    }
}

impl EntryBits {
    pub fn for_kind(&self, kind: OpKind) -> u64 {
        match kind {
            OpKind::Distinct => self.distinct,
            OpKind::Reduce => self.reduce,
            _ => 0,
        }
    }
}

/// Output of running a pipeline over one window.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Execution {
    pub output: Relation,
    /// One entry per stateful operator, in pipeline order.
    pub stateful: Vec<CostEntry>,
}

enum CExpr {
    Col(usize),
    Const(u64),
    Mask(usize, u8),
    Add(Box<CExpr>, Box<CExpr>),
    Sub(Box<CExpr>, Box<CExpr>),
    Mul(Box<CExpr>, Box<CExpr>),
    And(Box<CExpr>, Box<CExpr>),
}

impl CExpr {
    fn eval(&self, row: &[u64]) -> u64 {
        match self {
            CExpr::Col(i) => row[*i],
            CExpr::Const(c) => *c,
            CExpr::Mask(i, b) => mask_ipv4(row[*i], *b),
            CExpr::Add(a, b) => a.eval(row).saturating_add(b.eval(row)),
            CExpr::Sub(a, b) => a.eval(row).saturating_sub(b.eval(row)),
            CExpr::Mul(a, b) => a.eval(row).saturating_mul(b.eval(row)),
            CExpr::And(a, b) => a.eval(row) & b.eval(row),
        }
    }
}

enum CPred {
    Cmp(usize, CmpOp, u64),
    And(Vec<CPred>),
    Or(Vec<CPred>),
    Not(Box<CPred>),
    InSet(usize, u8, BTreeSet<u64>),
}

impl CPred {
    fn eval(&self, row: &[u64]) -> bool {
        match self {
            CPred::Cmp(i, op, v) => op.eval(row[*i], *v),
            CPred::And(ps) => ps.iter().all(|p| p.eval(row)),
            CPred::Or(ps) => ps.iter().any(|p| p.eval(row)),
            CPred::Not(p) => !p.eval(row),
            CPred::InSet(i, b, set) => set.contains(&mask_ipv4(row[*i], *b)),
        }
    }
}

fn col(schema: &[String], name: &str) -> Result<usize> {
    schema
        .iter()
        .position(|s| s == name)
        .ok_or_else(|| Error::Precondition(format!("unknown column `{name}`")))
}

fn compile_expr(e: &Expr, schema: &[String]) -> Result<CExpr> {
    let pair = |p: &(Expr, Expr)| -> Result<(Box<CExpr>, Box<CExpr>)> {
        Ok((
            Box::new(compile_expr(&p.0, schema)?),
            Box::new(compile_expr(&p.1, schema)?),
        ))
    };
    Ok(match e {
        Expr::Field(f) => CExpr::Col(col(schema, f)?),
        Expr::Const(c) => CExpr::Const(*c),
        Expr::Mask { field, bits } => CExpr::Mask(col(schema, field)?, *bits),
        Expr::Add(p) => {
            let (a, b) = pair(p)?;
            CExpr::Add(a, b)
        }
        Expr::Sub(p) => {
            let (a, b) = pair(p)?;
            CExpr::Sub(a, b)
        }
        Expr::Mul(p) => {
            let (a, b) = pair(p)?;
            CExpr::Mul(a, b)
        }
        Expr::BitAnd(p) => {
            let (a, b) = pair(p)?;
            CExpr::And(a, b)
        }
    })
}

fn compile_pred(p: &Predicate, schema: &[String]) -> Result<CPred> {
    Ok(match p {
        Predicate::Cmp { field, op, value } => CPred::Cmp(col(schema, field)?, *op, *value),
        Predicate::And(ps) => CPred::And(ps.iter().map(|p| compile_pred(p, schema)).collect::<Result<_>>()?),
        Predicate::Or(ps) => CPred::Or(ps.iter().map(|p| compile_pred(p, schema)).collect::<Result<_>>()?),
        Predicate::Not(p) => CPred::Not(Box::new(compile_pred(p, schema)?)),
        Predicate::InSet {
            field,
            mask_bits,
            values,
        } => CPred::InSet(col(schema, field)?, *mask_bits, values.clone()),
    })
}

fn key_extractor(keys: &[FieldRef], schema: &[String]) -> Result<Vec<(usize, Option<u8>)>> {
    if keys.is_empty() {
        return Ok((0..schema.len()).map(|i| (i, None)).collect());
    }
    keys.iter()
        .map(|k| Ok((col(schema, &k.name)?, k.mask_bits)))
        .collect()
}

fn extract(row: &[u64], spec: &[(usize, Option<u8>)]) -> Vec<u64> {
    spec.iter()
        .map(|&(i, m)| match m {
            Some(b) => mask_ipv4(row[i], b),
            None => row[i],
        })
        .collect()
}

/// Runs `q` over `input`, recording tuple counts and memory for every stateful operator.
///
/// Distinct and reduce emit their keys in ascending order so the output is
/// independent of arrival order.
pub fn execute_pipeline(q: &QuerySpec, input: &Relation, bits: &EntryBits) -> Result<Execution> {
    execute_ops(&q.ops, input, bits)
}

pub fn execute_ops(ops: &[DataflowOp], input: &Relation, bits: &EntryBits) -> Result<Execution> {
    let mut schema = input.schema.clone();
    let mut rows = input.rows.clone();
    let mut stateful = Vec::new();
    for op in ops {
        let next_schema = output_schema(op, &schema);
        rows = match op {
            DataflowOp::Filter { predicate } => {
                let p = compile_pred(predicate, &schema)?;
                rows.retain(|r| p.eval(r));
                rows
            }
            DataflowOp::Map { columns } => {
                let exprs = columns
                    .iter()
                    .map(|c| compile_expr(&c.expr, &schema))
                    .collect::<Result<Vec<_>>>()?;
                rows.iter()
                    .map(|r| exprs.iter().map(|e| e.eval(r)).collect())
                    .collect()
            }
            DataflowOp::Distinct { keys } => {
                let spec = key_extractor(keys, &schema)?;
                let n_in = rows.len() as u64;
                let set: BTreeSet<Vec<u64>> = rows.iter().map(|r| extract(r, &spec)).collect();
                let n_out = set.len() as u64;
                stateful.push(CostEntry::new(n_out * bits.distinct, n_in, n_out));
                set.into_iter().collect()
            }
            DataflowOp::Reduce { keys, value, .. } => {
                let spec = key_extractor(keys, &schema)?;
                let v = compile_expr(value, &schema)?;
                let n_in = rows.len() as u64;
                let mut agg: BTreeMap<Vec<u64>, u64> = BTreeMap::new();
                for r in &rows {
                    let slot = agg.entry(extract(r, &spec)).or_insert(0);
                    *slot = slot.saturating_add(v.eval(r));
                }
                let n_out = agg.len() as u64;
                stateful.push(CostEntry::new(n_out * bits.reduce, n_in, n_out));
                agg.into_iter()
                    .map(|(mut k, s)| {
                        k.push(s);
                        k
                    })
                    .collect()
            }
        };
        schema = next_schema;
    }
    Ok(Execution {
        output: Relation { schema, rows },
        stateful,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::query::MapColumn;

    fn count_pipeline(threshold: u64) -> Vec<DataflowOp> {
        vec![
            DataflowOp::Distinct { keys: vec![] },
            DataflowOp::Map {
                columns: vec![MapColumn {
                    name: "src".into(),
                    expr: Expr::field("src"),
                }],
            },
            DataflowOp::Reduce {
                keys: vec![FieldRef::new("src")],
                value: Expr::Const(1),
                output: "count".into(),
            },
            DataflowOp::Filter {
                predicate: Predicate::Cmp {
                    field: "count".into(),
                    op: CmpOp::Ge,
                    value: threshold,
                },
            },
        ]
    }

    #[test]
    fn distinct_count_threshold_example() {
        let (a, b, c, d) = (1, 2, 3, 4);
        let input = Relation::new(
            &["src", "dst"],
            vec![vec![a, b], vec![a, b], vec![a, c], vec![c, d]],
        );
        let ex = execute_ops(&count_pipeline(2), &input, &EntryBits::default()).unwrap();
        assert_eq!(ex.output.schema, vec!["src", "count"]);
        assert_eq!(ex.output.rows, vec![vec![a, 2]]);
        assert_eq!(ex.stateful[0], CostEntry::new(3, 4, 3));
        assert_eq!(ex.stateful[1], CostEntry::new(2 * 32, 3, 2));
    }

    #[test]
    fn empty_window_gives_zero_entries() {
        let input = Relation::new(&["src", "dst"], vec![]);
        let ex = execute_ops(&count_pipeline(2), &input, &EntryBits::default()).unwrap();
        assert!(ex.output.is_empty());
        assert!(ex.stateful.iter().all(|e| *e == CostEntry::default()));
        assert_eq!(ex.stateful.len(), 2);
    }

    #[test]
    fn ten_tuples_one_key() {
        let input = Relation::new(&["src", "dst"], (0..10).map(|i| vec![7, i]).collect());
        let ops = vec![DataflowOp::Reduce {
            keys: vec![FieldRef::new("src")],
            value: Expr::Const(1),
            output: "count".into(),
        }];
        let ex = execute_ops(&ops, &input, &EntryBits::default()).unwrap();
        assert_eq!(ex.stateful[0], CostEntry::new(32, 10, 1));
        assert_eq!(ex.output.rows, vec![vec![7, 10]]);
    }

    #[test]
    fn reduce_sums_values_and_masks_keys() {
        let input = Relation::new(
            &["sIP", "len"],
            vec![vec![0x0a00_0001, 5], vec![0x0a00_0002, 7], vec![0x0b00_0001, 1]],
        );
        let ops = vec![DataflowOp::Reduce {
            keys: vec![FieldRef::masked("sIP", 8)],
            value: Expr::field("len"),
            output: "bytes".into(),
        }];
        let ex = execute_ops(&ops, &input, &EntryBits::default()).unwrap();
        assert_eq!(
            ex.output.rows,
            vec![vec![0x0a00_0000, 12], vec![0x0b00_0000, 1]]
        );
    }

    #[test]
    fn unknown_column_is_an_error() {
        let input = Relation::new(&["x"], vec![vec![1]]);
        let ops = vec![DataflowOp::Distinct {
            keys: vec![FieldRef::new("y")],
        }];
        assert!(execute_ops(&ops, &input, &EntryBits::default()).is_err());
    }
}
