//! Dataflow queries, refinement levels and dependency chains.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Columns of a raw packet tuple, in order.
pub const PACKET_FIELDS: [&str; 8] = [
    "ts", "sIP", "dIP", "sPort", "dPort", "proto", "len", "tcpFlags",
];

/// Default candidate refinement levels, root (mask 0) first.
pub const DEFAULT_LEVELS: [u8; 5] = [0, 8, 16, 24, 32];

/// Fields that carry an IPv4 address and can be masked hierarchically.
pub fn is_hierarchical(name: &str) -> bool {
    matches!(name, "sIP" | "dIP")
}

/// Keep the top `bits` bits of an IPv4 address.
pub fn mask_ipv4(value: u64, bits: u8) -> u64 {
    match bits {
        0 => 0,
        b if b >= 32 => value & 0xffff_ffff,
        b => value & ((u32::MAX << (32 - b)) as u64),
    }
}

/// A column reference, optionally masked to a prefix length.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "FieldRefRepr", into = "FieldRefRepr")]
pub struct FieldRef {
    pub name: String,
    pub mask_bits: Option<u8>,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum FieldRefRepr {
    Bare(String),
    Full {
        name: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        mask_bits: Option<u8>,
    },
}

impl From<FieldRefRepr> for FieldRef {
    fn from(r: FieldRefRepr) -> Self {
        match r {
            FieldRefRepr::Bare(name) => FieldRef {
                name,
                mask_bits: None,
            },
            FieldRefRepr::Full { name, mask_bits } => FieldRef { name, mask_bits },
        }
    }
}

impl From<FieldRef> for FieldRefRepr {
    fn from(f: FieldRef) -> Self {
        match f.mask_bits {
            None => FieldRefRepr::Bare(f.name),
            Some(_) => FieldRefRepr::Full {
                name: f.name,
                mask_bits: f.mask_bits,
            },
        }
    }
}

impl FieldRef {
    pub fn new(name: impl Into<String>) -> Self {
        FieldRef {
            name: name.into(),
            mask_bits: None,
        }
    }

    pub fn masked(name: impl Into<String>, bits: u8) -> Self {
        FieldRef {
            name: name.into(),
            mask_bits: Some(bits),
        }
    }
}

impl fmt::Display for FieldRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.mask_bits {
            Some(b) => write!(f, "{}/{}", self.name, b),
            None => f.write_str(&self.name),
        }
    }
}

/// Integer expression over the columns of a tuple.
///
/// Arithmetic saturates; it never panics on overflow.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Expr {
    Field(String),
    Const(u64),
    Mask { field: String, bits: u8 },
    Add(Box<(Expr, Expr)>),
    Sub(Box<(Expr, Expr)>),
    Mul(Box<(Expr, Expr)>),
    BitAnd(Box<(Expr, Expr)>),
}

impl Expr {
    pub fn field(name: &str) -> Self {
        Expr::Field(name.to_string())
    }

    fn collect_fields<'a>(&'a self, out: &mut Vec<&'a str>) {
        match self {
            Expr::Field(f) | Expr::Mask { field: f, .. } => out.push(f),
            Expr::Const(_) => {}
            Expr::Add(p) | Expr::Sub(p) | Expr::Mul(p) | Expr::BitAnd(p) => {
                p.0.collect_fields(out);
                p.1.collect_fields(out);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CmpOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl CmpOp {
    pub fn eval(self, a: u64, b: u64) -> bool {
        match self {
            CmpOp::Eq => a == b,
            CmpOp::Ne => a != b,
            CmpOp::Lt => a < b,
            CmpOp::Le => a <= b,
            CmpOp::Gt => a > b,
            CmpOp::Ge => a >= b,
        }
    }
}

/// Boolean predicate used by filters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Predicate {
    Cmp { field: String, op: CmpOp, value: u64 },
    And(Vec<Predicate>),
    Or(Vec<Predicate>),
    Not(Box<Predicate>),
    /// Membership of a (masked) column in a fixed set. Used for refinement allow-sets.
    InSet {
        field: String,
        mask_bits: u8,
        values: BTreeSet<u64>,
    },
}

impl Predicate {
    fn collect_fields<'a>(&'a self, out: &mut Vec<&'a str>) {
        match self {
            Predicate::Cmp { field, .. } | Predicate::InSet { field, .. } => out.push(field),
            Predicate::And(ps) | Predicate::Or(ps) => ps.iter().for_each(|p| p.collect_fields(out)),
            Predicate::Not(p) => p.collect_fields(out),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MapColumn {
    pub name: String,
    pub expr: Expr,
}

fn default_value() -> Expr {
    Expr::Const(1)
}

fn default_output() -> String {
    "count".to_string()
}

/// One step of a dataflow pipeline.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataflowOp {
    Filter {
        predicate: Predicate,
    },
    /// Projects the tuple onto the listed columns.
    Map {
        columns: Vec<MapColumn>,
    },
    /// Unique tuples over `keys` (all columns when empty).
    Distinct {
        #[serde(default)]
        keys: Vec<FieldRef>,
    },
    /// Sums `value` per key. Output is the key columns followed by `output`.
    Reduce {
        keys: Vec<FieldRef>,
        #[serde(default = "default_value")]
        value: Expr,
        #[serde(rename = "as", default = "default_output")]
        output: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpKind {
    Filter,
    Map,
    Distinct,
    Reduce,
}

impl DataflowOp {
    pub fn kind(&self) -> OpKind {
        match self {
            DataflowOp::Filter { .. } => OpKind::Filter,
            DataflowOp::Map { .. } => OpKind::Map,
            DataflowOp::Distinct { .. } => OpKind::Distinct,
            DataflowOp::Reduce { .. } => OpKind::Reduce,
        }
    }

    pub fn is_stateful(&self) -> bool {
        matches!(self, DataflowOp::Distinct { .. } | DataflowOp::Reduce { .. })
    }
}

fn default_levels() -> Vec<u8> {
    DEFAULT_LEVELS.to_vec()
}

/// A telemetry query: an ordered pipeline with a hierarchical refinement key.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuerySpec {
    pub qid: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    /// Sub-pipelines of one joined query share a group id.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub join_group: Option<u32>,
    pub refinement_key: FieldRef,
    #[serde(default = "default_levels")]
    pub levels: Vec<u8>,
    pub ops: Vec<DataflowOp>,
}

impl QuerySpec {
    /// Checks the structural invariants and returns `self` for chaining.
    pub fn validate(&self) -> Result<&Self> {
        let bad = |reason: String| Error::InvalidQuery {
            qid: self.qid,
            reason,
        };
        if self.ops.is_empty() {
            return Err(bad("pipeline has no operators".into()));
        }
        if !is_hierarchical(&self.refinement_key.name) {
            return Err(bad(format!(
                "refinement key `{}` is not a hierarchical field",
                self.refinement_key.name
            )));
        }
        if self.levels.first() != Some(&0) {
            return Err(bad("levels must start at the root level 0".into()));
        }
        if self.levels.windows(2).any(|w| w[0] >= w[1]) || self.levels.iter().any(|&l| l > 32) {
            return Err(bad("levels must be strictly increasing and at most 32".into()));
        }
        if self.levels.len() < 2 {
            return Err(bad("need at least one level besides the root".into()));
        }
        let mut schema: Vec<String> = PACKET_FIELDS.iter().map(|s| s.to_string()).collect();
        for (idx, op) in self.ops.iter().enumerate() {
            let mut used = Vec::new();
            match op {
                DataflowOp::Filter { predicate } => predicate.collect_fields(&mut used),
                DataflowOp::Map { columns } => {
                    if columns.is_empty() {
                        return Err(bad(format!("op {idx}: map has no columns")));
                    }
                    columns.iter().for_each(|c| c.expr.collect_fields(&mut used));
                }
                DataflowOp::Distinct { keys } => used.extend(keys.iter().map(|k| k.name.as_str())),
                DataflowOp::Reduce { keys, value, .. } => {
                    if keys.is_empty() {
                        return Err(bad(format!("op {idx}: reduce needs at least one key")));
                    }
                    used.extend(keys.iter().map(|k| k.name.as_str()));
                    value.collect_fields(&mut used);
                }
            }
            for f in used {
                if !schema.iter().any(|s| s == f) {
                    return Err(bad(format!("op {idx}: unknown column `{f}`")));
                }
            }
            for k in stateful_keys(op) {
                if let Some(b) = k.mask_bits {
                    if b > 32 || !is_hierarchical(&k.name) {
                        return Err(bad(format!("op {idx}: invalid mask on `{k}`")));
                    }
                }
            }
            if op.is_stateful() {
                let key = &self.refinement_key.name;
                let keys = stateful_keys(op);
                let present = if keys.is_empty() {
                    schema.iter().any(|s| s == key)
                } else {
                    keys.iter().any(|k| &k.name == key)
                };
                if !present {
                    return Err(bad(format!(
                        "op {idx}: refinement key `{key}` missing from stateful keys"
                    )));
                }
            }
            schema = output_schema(op, &schema);
        }
        Ok(self)
    }

    pub fn finest_level(&self) -> u8 {
        *self.levels.last().unwrap_or(&32)
    }

    /// Number of stateful operators, |O_q|.
    pub fn n_stateful(&self) -> usize {
        self.ops.iter().filter(|o| o.is_stateful()).count()
    }

    pub fn shape(&self) -> QueryShape {
        QueryShape {
            qid: self.qid,
            levels: self.levels.clone(),
            n_ops: self.n_stateful(),
        }
    }
}

fn stateful_keys(op: &DataflowOp) -> &[FieldRef] {
    match op {
        DataflowOp::Distinct { keys } | DataflowOp::Reduce { keys, .. } => keys,
        _ => &[],
    }
}

/// Column names produced by `op` when fed tuples with `input` columns.
pub fn output_schema(op: &DataflowOp, input: &[String]) -> Vec<String> {
    match op {
        DataflowOp::Filter { .. } => input.to_vec(),
        DataflowOp::Map { columns } => columns.iter().map(|c| c.name.clone()).collect(),
        DataflowOp::Distinct { keys } if keys.is_empty() => input.to_vec(),
        DataflowOp::Distinct { keys } => keys.iter().map(|k| k.name.clone()).collect(),
        DataflowOp::Reduce { keys, output, .. } => keys
            .iter()
            .map(|k| k.name.clone())
            .chain(std::iter::once(output.clone()))
            .collect(),
    }
}

/// What the planner needs to know about a query without its pipeline.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryShape {
    pub qid: u32,
    pub levels: Vec<u8>,
    pub n_ops: usize,
}

impl QueryShape {
    pub fn finest_level(&self) -> u8 {
        *self.levels.last().unwrap_or(&32)
    }
}

/// Distinct/reduce operators in pipeline order, with their pipeline positions.
pub fn stateful_operators(q: &QuerySpec) -> Vec<(usize, &DataflowOp)> {
    q.ops
        .iter()
        .enumerate()
        .filter(|(_, op)| op.is_stateful())
        .collect()
}

/// Builds the query that runs `q` at `level` after `prior_level`, stopping after
/// stateful operator `upto_op` (counted among stateful operators only).
///
/// The key is masked to `level` before the first operator. When `prior_level`
/// is above the root, tuples whose key prefix is not in `allow` are dropped
/// first; `None` means every prefix is allowed.
pub fn refine_query(
    q: &QuerySpec,
    prior_level: u8,
    level: u8,
    upto_op: usize,
    allow: Option<&BTreeSet<u64>>,
) -> Result<QuerySpec> {
    if prior_level >= level {
        return Err(Error::Precondition(format!(
            "prior level {prior_level} must be below level {level}"
        )));
    }
    for l in [prior_level, level] {
        if !q.levels.contains(&l) {
            return Err(Error::Precondition(format!(
                "level {l} is not a candidate level of query {}",
                q.qid
            )));
        }
    }
    let stateful = stateful_operators(q);
    let Some(&(cut, _)) = stateful.get(upto_op) else {
        return Err(Error::Precondition(format!(
            "query {} has {} stateful operators, asked for index {upto_op}",
            q.qid,
            stateful.len()
        )));
    };

    let key = q.refinement_key.name.clone();
    let mut ops = Vec::with_capacity(q.ops.len() + 2);
    if prior_level > 0 {
        if let Some(values) = allow {
            ops.push(DataflowOp::Filter {
                predicate: Predicate::InSet {
                    field: key.clone(),
                    mask_bits: prior_level,
                    values: values.clone(),
                },
            });
        }
    }
    if level < 32 {
        let columns = PACKET_FIELDS
            .iter()
            .map(|&f| MapColumn {
                name: f.to_string(),
                expr: if f == key {
                    Expr::Mask {
                        field: key.clone(),
                        bits: level,
                    }
                } else {
                    Expr::field(f)
                },
            })
            .collect();
        ops.push(DataflowOp::Map { columns });
    }
    ops.extend(q.ops[..=cut].iter().cloned());
    Ok(QuerySpec {
        qid: q.qid,
        name: q.name.clone(),
        join_group: q.join_group,
        refinement_key: FieldRef::masked(key, level),
        levels: q.levels.clone(),
        ops,
    })
}

/// Levels each query traverses, root first. Keyed by qid.
#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RefinementPlan {
    pub per_query: BTreeMap<u32, Vec<u8>>,
}

impl RefinementPlan {
    /// Every query refined straight from the root to its finest level.
    pub fn finest_only<'a>(shapes: impl IntoIterator<Item = &'a QueryShape>) -> Self {
        RefinementPlan {
            per_query: shapes
                .into_iter()
                .map(|s| (s.qid, vec![0, s.finest_level()]))
                .collect(),
        }
    }

    pub fn validate(&self, shapes: &[QueryShape]) -> Result<()> {
        for s in shapes {
            let Some(seq) = self.per_query.get(&s.qid) else {
                return Err(Error::Precondition(format!(
                    "refinement plan does not cover query {}",
                    s.qid
                )));
            };
            let ok = seq.first() == Some(&0)
                && seq.last() == Some(&s.finest_level())
                && seq.len() >= 2
                && seq.windows(2).all(|w| w[0] < w[1])
                && seq.iter().all(|l| s.levels.contains(l));
            if !ok {
                return Err(Error::Precondition(format!(
                    "invalid level sequence {seq:?} for query {}",
                    s.qid
                )));
            }
        }
        Ok(())
    }

    /// (prior, level) pairs of one query's plan.
    pub fn transitions(&self, qid: u32) -> Vec<(u8, u8)> {
        self.per_query
            .get(&qid)
            .map(|seq| seq.windows(2).map(|w| (w[0], w[1])).collect())
            .unwrap_or_default()
    }

    pub fn n_operators(&self, shapes: &[QueryShape]) -> usize {
        shapes
            .iter()
            .map(|s| self.transitions(s.qid).len() * s.n_ops)
            .sum()
    }
}

/// One stateful operator of one refined query instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct OperatorRef {
    pub qid: u32,
    pub prior: u8,
    pub level: u8,
    pub k: usize,
}

impl fmt::Display for OperatorRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "q{}:{}->{}:{}", self.qid, self.prior, self.level, self.k)
    }
}

/// Stateful operators of one refined query instance, in pipeline order.
/// Position in `operators` is the chain order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DependencyChain {
    pub chain_id: usize,
    pub operators: Vec<OperatorRef>,
}

pub fn build_chains(plan: &RefinementPlan, queries: &[QuerySpec]) -> Result<Vec<DependencyChain>> {
    let shapes: Vec<QueryShape> = queries.iter().map(QuerySpec::shape).collect();
    build_chains_for_shapes(plan, &shapes)
}

/// Same as [`build_chains`] but needs only query shapes.
pub fn build_chains_for_shapes(
    plan: &RefinementPlan,
    shapes: &[QueryShape],
) -> Result<Vec<DependencyChain>> {
    plan.validate(shapes)?;
    let mut sorted: Vec<&QueryShape> = shapes.iter().collect();
    sorted.sort_by_key(|s| s.qid);
    let mut chains = Vec::new();
    for s in sorted {
        if s.n_ops == 0 {
            continue;
        }
        for (prior, level) in plan.transitions(s.qid) {
            chains.push(DependencyChain {
                chain_id: chains.len(),
                operators: (0..s.n_ops)
                    .map(|k| OperatorRef {
                        qid: s.qid,
                        prior,
                        level,
                        k,
                    })
                    .collect(),
            });
        }
    }
    Ok(chains)
}

/// Reads a JSON array of queries and validates each.
pub fn load_queries(path: &std::path::Path) -> Result<Vec<QuerySpec>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let queries: Vec<QuerySpec> = serde_json::from_str(&text)?;
    let mut seen = BTreeSet::new();
    for q in &queries {
        q.validate()?;
        if !seen.insert(q.qid) {
            return Err(Error::InvalidQuery {
                qid: q.qid,
                reason: "duplicate qid".into(),
            });
        }
    }
    Ok(queries)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn superspreader() -> QuerySpec {
        serde_json::from_str(
            r#"{
              "qid": 3, "refinement_key": "sIP",
              "ops": [
                {"kind": "map", "columns": [{"name": "sIP", "expr": {"field": "sIP"}},
                                            {"name": "dIP", "expr": {"field": "dIP"}}]},
                {"kind": "distinct"},
                {"kind": "map", "columns": [{"name": "sIP", "expr": {"field": "sIP"}}]},
                {"kind": "reduce", "keys": ["sIP"]},
                {"kind": "filter", "predicate": {"cmp": {"field": "count", "op": "ge", "value": 40}}}
              ]
            }"#,
        )
        .unwrap()
    }

    #[test]
    fn mask_boundaries() {
        let ip = 0x0a01_0203;
        assert_eq!(mask_ipv4(ip, 0), 0);
        assert_eq!(mask_ipv4(ip, 8), 0x0a00_0000);
        assert_eq!(mask_ipv4(ip, 24), 0x0a01_0200);
        assert_eq!(mask_ipv4(ip, 32), ip);
    }

    #[test]
    fn superspreader_is_valid_with_two_stateful_ops() {
        let q = superspreader();
        q.validate().unwrap();
        let st = stateful_operators(&q);
        assert_eq!(st.len(), 2);
        assert_eq!(st[0].0, 1);
        assert_eq!(st[1].1.kind(), OpKind::Reduce);
    }

    #[test]
    fn stateless_query_has_no_stateful_ops() {
        let mut q = superspreader();
        q.ops = vec![q.ops[0].clone()];
        assert!(stateful_operators(&q).is_empty());
    }

    #[test]
    fn refine_inserts_mask_before_distinct() {
        let q = superspreader();
        let r = refine_query(&q, 0, 8, 1, None).unwrap();
        assert_eq!(r.ops.len(), q.ops.len() - 1 + 1);
        let DataflowOp::Map { columns } = &r.ops[0] else {
            panic!("expected map first")
        };
        let sip = columns.iter().find(|c| c.name == "sIP").unwrap();
        assert_eq!(
            sip.expr,
            Expr::Mask {
                field: "sIP".into(),
                bits: 8
            }
        );
        assert_eq!(r.ops[2].kind(), OpKind::Distinct);
        assert_eq!(r.refinement_key, FieldRef::masked("sIP", 8));
        // truncated after the reduce: trailing filter gone
        assert_eq!(r.ops.last().unwrap().kind(), OpKind::Reduce);
    }

    #[test]
    fn refine_root_finest_truncates_at_first_stateful() {
        let q = superspreader();
        let r = refine_query(&q, 0, 32, 0, None).unwrap();
        assert_eq!(r.ops, q.ops[..2].to_vec());
    }

    #[test]
    fn refine_rejects_bad_levels() {
        let q = superspreader();
        assert!(refine_query(&q, 8, 8, 0, None).is_err());
        assert!(refine_query(&q, 0, 12, 0, None).is_err());
        assert!(refine_query(&q, 0, 8, 2, None).is_err());
    }

    #[test]
    fn chains_for_two_step_plan() {
        let q = superspreader();
        let plan = RefinementPlan {
            per_query: [(3, vec![0, 8, 32])].into(),
        };
        let chains = build_chains(&plan, &[q]).unwrap();
        assert_eq!(chains.len(), 2);
        assert!(chains.iter().all(|c| c.operators.len() == 2));
        assert_eq!(chains[1].operators[0].prior, 8);
        assert_eq!(chains[1].operators[1].k, 1);
    }

    #[test]
    fn field_ref_accepts_both_forms() {
        let a: FieldRef = serde_json::from_str(r#""dIP""#).unwrap();
        let b: FieldRef = serde_json::from_str(r#"{"name":"dIP","mask_bits":16}"#).unwrap();
        assert_eq!(a, FieldRef::new("dIP"));
        assert_eq!(b, FieldRef::masked("dIP", 16));
        assert_eq!(serde_json::to_string(&a).unwrap(), r#""dIP""#);
    }

    #[test]
    fn validate_catches_missing_key() {
        let mut q = superspreader();
        q.ops[3] = DataflowOp::Reduce {
            keys: vec![FieldRef::new("dIP")],
            value: Expr::Const(1),
            output: "count".into(),
        };
        assert!(q.validate().is_err());
    }
}
