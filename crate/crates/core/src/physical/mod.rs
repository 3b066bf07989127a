//! Physical plans: remote operators that talk to the store, local operators
//! that run over bounded fetched data, and the static operation bound.

mod matcher;

use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::catalog::{IndexDef, IndexField, Schema};
use crate::kvstore::latency::Alpha;
use crate::kvstore::Direction;
use crate::logical::fmt_keys;
use crate::query::{ColumnRef, LimitKind, Operand, OrderKey, Param, Predicate, Projection};

pub use matcher::{
    compile, compile_with, plan_generate, CompileError, CompileOptions, Compiled,
    NotScaleIndependent, ScalingClass, ScalingClassReport,
};

/// Where the value of one index key field comes from.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", content = "source", rename_all = "snake_case")]
pub enum KeyPart {
    /// A literal or parameter.
    Value(Operand),
    /// The token probed in a `token(col)` field.
    Token(Operand),
    /// One element per probe of an `IN`-list parameter of at most `max`
    /// elements.
    InList { list: Param, max: u32 },
    /// A column of the current left (child) row of a join.
    LeftColumn(ColumnRef),
}

impl fmt::Display for KeyPart {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KeyPart::Value(o) => o.fmt(f),
            KeyPart::Token(o) => write!(f, "token {o}"),
            KeyPart::InList { list, max } => write!(f, "each of {list} (max {max})"),
            KeyPart::LeftColumn(c) => write!(f, "{c}"),
        }
    }
}

/// One end of a range over the field right after the key prefix.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RangeBound {
    pub value: Operand,
    pub inclusive: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct KeyRange {
    pub column: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lower: Option<RangeBound>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub upper: Option<RangeBound>,
}

/// Index access shared by scans and sorted joins.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct IndexAccess {
    pub index: IndexDef,
    /// Values for the leading index fields, in index order.
    pub key_prefix: Vec<KeyPart>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub range: Option<KeyRange>,
    pub direction: Direction,
    /// Entries carry the whole tuple; no dereference round trip.
    pub covering: bool,
    /// The prefix names the full primary key of the primary index, so a
    /// single get serves each probe.
    pub point: bool,
}

impl IndexAccess {
    /// Number of probes issued per execution (the `IN`-list bound, or 1).
    pub fn probes(&self) -> u64 {
        self.key_prefix
            .iter()
            .find_map(|k| match k {
                KeyPart::InList { max, .. } => Some(u64::from(*max)),
                _ => None,
            })
            .unwrap_or(1)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexScan {
    pub id: u32,
    pub table: String,
    pub access: IndexAccess,
    /// Per-probe tuple limit; the page size when `unbounded`.
    pub limit_hint: u64,
    pub output_bound: u64,
    /// Unsafe mode: keep fetching pages until the range is exhausted.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub unbounded: bool,
    /// Truncated by a stop, in index order equal to the output order; a page
    /// cursor can reposition it.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub ordered: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexFkJoin {
    pub id: u32,
    pub table: String,
    /// Value source for each primary-key column of `table`, in key order.
    pub key: Vec<KeyPart>,
    pub input: Box<PhysicalPlan>,
    pub output_bound: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SortedIndexJoin {
    pub id: u32,
    pub table: String,
    pub access: IndexAccess,
    pub per_key_limit: u64,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub ordered: bool,
    /// Output order of the merged per-key runs.
    pub sort: Vec<OrderKey>,
    pub input: Box<PhysicalPlan>,
    pub output_bound: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op")]
pub enum PhysicalPlan {
    IndexScan(IndexScan),
    IndexFkJoin(IndexFkJoin),
    SortedIndexJoin(SortedIndexJoin),
    LocalSelection {
        id: u32,
        predicate: Predicate,
        input: Box<PhysicalPlan>,
    },
    LocalSort {
        id: u32,
        keys: Vec<OrderKey>,
        input: Box<PhysicalPlan>,
    },
    LocalStop {
        id: u32,
        count: u64,
        kind: LimitKind,
        input: Box<PhysicalPlan>,
    },
    LocalAggregate {
        id: u32,
        group_by: Vec<ColumnRef>,
        outputs: Vec<Projection>,
        input: Box<PhysicalPlan>,
    },
}

/// Static worst-case store work of one operator.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OperatorBound {
    pub id: u32,
    pub operator: String,
    pub requests: u64,
    pub tuples: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OperationBound {
    pub max_requests: u64,
    pub max_tuples: u64,
    pub per_operator: Vec<OperatorBound>,
}

/// How an executor issues requests; determines which bound applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    /// One tuple per request, fetched on demand.
    Lazy,
    /// Each operator prefetches up to its limit hint; requests sequential.
    Simple,
    /// Like simple, but each operator issues its independent requests as
    /// one concurrent wave.
    #[default]
    Parallel,
}

impl std::str::FromStr for Strategy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "lazy" => Ok(Strategy::Lazy),
            "simple" => Ok(Strategy::Simple),
            "parallel" => Ok(Strategy::Parallel),
            other => Err(format!(
                "unknown strategy {other:?} (lazy, simple or parallel)"
            )),
        }
    }
}

impl PhysicalPlan {
    pub fn id(&self) -> u32 {
        match self {
            PhysicalPlan::IndexScan(s) => s.id,
            PhysicalPlan::IndexFkJoin(j) => j.id,
            PhysicalPlan::SortedIndexJoin(j) => j.id,
            PhysicalPlan::LocalSelection { id, .. }
            | PhysicalPlan::LocalSort { id, .. }
            | PhysicalPlan::LocalStop { id, .. }
            | PhysicalPlan::LocalAggregate { id, .. } => *id,
        }
    }

    pub fn input(&self) -> Option<&PhysicalPlan> {
        match self {
            PhysicalPlan::IndexScan(_) => None,
            PhysicalPlan::IndexFkJoin(j) => Some(&j.input),
            PhysicalPlan::SortedIndexJoin(j) => Some(&j.input),
            PhysicalPlan::LocalSelection { input, .. }
            | PhysicalPlan::LocalSort { input, .. }
            | PhysicalPlan::LocalStop { input, .. }
            | PhysicalPlan::LocalAggregate { input, .. } => Some(input),
        }
    }

    fn input_mut(&mut self) -> Option<&mut PhysicalPlan> {
        match self {
            PhysicalPlan::IndexScan(_) => None,
            PhysicalPlan::IndexFkJoin(j) => Some(&mut j.input),
            PhysicalPlan::SortedIndexJoin(j) => Some(&mut j.input),
            PhysicalPlan::LocalSelection { input, .. }
            | PhysicalPlan::LocalSort { input, .. }
            | PhysicalPlan::LocalStop { input, .. }
            | PhysicalPlan::LocalAggregate { input, .. } => Some(input),
        }
    }

    fn set_id(&mut self, new: u32) {
        match self {
            PhysicalPlan::IndexScan(s) => s.id = new,
            PhysicalPlan::IndexFkJoin(j) => j.id = new,
            PhysicalPlan::SortedIndexJoin(j) => j.id = new,
            PhysicalPlan::LocalSelection { id, .. }
            | PhysicalPlan::LocalSort { id, .. }
            | PhysicalPlan::LocalStop { id, .. }
            | PhysicalPlan::LocalAggregate { id, .. } => *id = new,
        }
    }

    /// Numbers nodes 1, 2, ... from the root down.
    pub(crate) fn renumber(&mut self) {
        let mut next = 1;
        let mut node = Some(self);
        while let Some(n) = node {
            n.set_id(next);
            next += 1;
            node = n.input_mut();
        }
    }

    /// Nodes from the root down (plans are linear chains).
    pub fn nodes(&self) -> Vec<&PhysicalPlan> {
        let mut out = vec![self];
        while let Some(i) = out.last().unwrap().input() {
            out.push(i);
        }
        out
    }

    pub fn is_remote(&self) -> bool {
        matches!(
            self,
            PhysicalPlan::IndexScan(_)
                | PhysicalPlan::IndexFkJoin(_)
                | PhysicalPlan::SortedIndexJoin(_)
        )
    }

    /// Maximum number of tuples this node outputs.
    pub fn output_bound(&self) -> u64 {
        match self {
            PhysicalPlan::IndexScan(s) => s.output_bound,
            PhysicalPlan::IndexFkJoin(j) => j.output_bound,
            PhysicalPlan::SortedIndexJoin(j) => j.output_bound,
            PhysicalPlan::LocalStop { count, input, .. } => (*count).min(input.output_bound()),
            PhysicalPlan::LocalSelection { input, .. }
            | PhysicalPlan::LocalSort { input, .. }
            | PhysicalPlan::LocalAggregate { input, .. } => input.output_bound(),
        }
    }

    /// Relations contributing columns, in join order.
    pub fn relations(&self) -> Vec<String> {
        let mut rels: Vec<String> = Vec::new();
        for n in self.nodes().into_iter().rev() {
            match n {
                PhysicalPlan::IndexScan(s) => rels.push(s.table.clone()),
                PhysicalPlan::IndexFkJoin(j) => rels.push(j.table.clone()),
                PhysicalPlan::SortedIndexJoin(j) => rels.push(j.table.clone()),
                _ => {}
            }
        }
        rels
    }

    pub fn label(&self) -> String {
        match self {
            PhysicalPlan::IndexScan(s) => format!(
                "IndexScan({} via {}, {}, limit {})",
                s.table,
                s.access.index.name(),
                describe_access(&s.access),
                s.limit_hint
            ),
            PhysicalPlan::IndexFkJoin(j) => {
                let k: Vec<String> = j.key.iter().map(ToString::to_string).collect();
                format!("IndexFKJoin({} on primary key [{}])", j.table, k.join(", "))
            }
            PhysicalPlan::SortedIndexJoin(j) => format!(
                "SortedIndexJoin({} via {}, {}, per-key limit {}{})",
                j.table,
                j.access.index.name(),
                describe_access(&j.access),
                j.per_key_limit,
                if j.sort.is_empty() {
                    String::new()
                } else {
                    format!(", merge by {}", fmt_keys(&j.sort))
                }
            ),
            PhysicalPlan::LocalSelection { predicate, .. } => {
                format!("LocalSelection({predicate})")
            }
            PhysicalPlan::LocalSort { keys, .. } => format!("LocalSort({})", fmt_keys(keys)),
            PhysicalPlan::LocalStop { count, kind, .. } => {
                format!(
                    "LocalStop({count}, {})",
                    if *kind == LimitKind::Paginate {
                        "paginate"
                    } else {
                        "limit"
                    }
                )
            }
            PhysicalPlan::LocalAggregate {
                group_by, outputs, ..
            } => {
                let o: Vec<String> = outputs.iter().map(ToString::to_string).collect();
                let g: Vec<String> = group_by.iter().map(ToString::to_string).collect();
                format!("LocalAggregate([{}] by [{}])", o.join(", "), g.join(", "))
            }
        }
    }

    /// Operator kind names in execution (bottom-up) order.
    pub fn operator_sequence(&self) -> Vec<&'static str> {
        self.nodes()
            .into_iter()
            .rev()
            .map(|n| n.kind_name())
            .collect()
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            PhysicalPlan::IndexScan(_) => "IndexScan",
            PhysicalPlan::IndexFkJoin(_) => "IndexFKJoin",
            PhysicalPlan::SortedIndexJoin(_) => "SortedIndexJoin",
            PhysicalPlan::LocalSelection { .. } => "LocalSelection",
            PhysicalPlan::LocalSort { .. } => "LocalSort",
            PhysicalPlan::LocalStop { .. } => "LocalStop",
            PhysicalPlan::LocalAggregate { .. } => "LocalAggregate",
        }
    }

    /// Canonical JSON serialization.
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("plan serializes")
    }

    /// Hex SHA-256 of the canonical JSON.
    pub fn fingerprint(&self) -> String {
        let digest = Sha256::digest(self.to_json().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Latency-model key `(kind, α, β)` of a remote operator: α is its
    /// maximum cardinality, β the largest serialized tuple of its table.
    pub fn model_key(&self, schema: &Schema) -> Option<(&'static str, Alpha, u64)> {
        let beta = |t: &str| schema.table(t).map_or(0, |t| t.max_tuple_bytes());
        match self {
            PhysicalPlan::IndexScan(s) => {
                Some(("IndexScan", Alpha::scan(s.output_bound), beta(&s.table)))
            }
            PhysicalPlan::IndexFkJoin(j) => Some((
                "IndexFKJoin",
                Alpha::scan(j.input.output_bound()),
                beta(&j.table),
            )),
            PhysicalPlan::SortedIndexJoin(j) => Some((
                "SortedIndexJoin",
                Alpha::join(j.input.output_bound(), j.per_key_limit),
                beta(&j.table),
            )),
            _ => None,
        }
    }
}

fn describe_access(a: &IndexAccess) -> String {
    let mut parts = Vec::new();
    let fields = &a.index.fields;
    let prefix: Vec<String> = a
        .key_prefix
        .iter()
        .zip(fields)
        .map(|(k, f)| format!("{} = {}", f, k))
        .collect();
    if !prefix.is_empty() {
        parts.push(format!("prefix [{}]", prefix.join(", ")));
    }
    if let Some(r) = &a.range {
        let mut s = String::new();
        if let Some(l) = &r.lower {
            let _ = write!(s, "{} {} ", l.value, if l.inclusive { "<=" } else { "<" });
        }
        s.push_str(&r.column);
        if let Some(u) = &r.upper {
            let _ = write!(s, " {} {}", if u.inclusive { "<=" } else { "<" }, u.value);
        }
        parts.push(format!("range [{s}]"));
    }
    parts.push(if a.direction == Direction::Descending {
        "desc".into()
    } else {
        "asc".into()
    });
    if a.point {
        parts.push("get".into());
    } else if a.covering {
        parts.push("covering".into());
    } else {
        parts.push("dereference".into());
    }
    parts.join(", ")
}

/// Worst-case requests and tuples of every remote operator under `strategy`.
///
/// Simple and parallel: an index scan costs one range request per probe plus
/// one dereference get per tuple if not covering; a foreign-key join one get
/// per child tuple; a sorted join one range per child tuple plus
/// dereferences. The lazy strategy fetches one tuple per request, so every
/// tuple costs its own range request.
pub fn compute_operation_bound(plan: &PhysicalPlan, strategy: Strategy) -> OperationBound {
    let mut per_operator = Vec::new();
    for n in plan.nodes().into_iter().rev() {
        let (requests, tuples) = match n {
            PhysicalPlan::IndexScan(s) if s.unbounded => (u64::MAX, u64::MAX),
            PhysicalPlan::IndexScan(s) => {
                let probes = s.access.probes();
                let per_probe = if s.access.point {
                    1
                } else {
                    let ranges = if strategy == Strategy::Lazy {
                        s.limit_hint
                    } else {
                        1
                    };
                    ranges.saturating_add(if s.access.covering { 0 } else { s.limit_hint })
                };
                (probes.saturating_mul(per_probe), s.output_bound)
            }
            PhysicalPlan::IndexFkJoin(j) => (j.input.output_bound(), j.output_bound),
            PhysicalPlan::SortedIndexJoin(j) => {
                let child = j.input.output_bound();
                let ranges = if strategy == Strategy::Lazy {
                    j.output_bound
                } else {
                    child
                };
                let derefs = if j.access.covering { 0 } else { j.output_bound };
                (ranges.saturating_add(derefs), j.output_bound)
            }
            _ => continue,
        };
        per_operator.push(OperatorBound {
            id: n.id(),
            operator: n.kind_name().to_string(),
            requests,
            tuples,
        });
    }
    OperationBound {
        max_requests: per_operator
            .iter()
            .fold(0u64, |a, o| a.saturating_add(o.requests)),
        max_tuples: per_operator
            .iter()
            .fold(0u64, |a, o| a.saturating_add(o.tuples)),
        per_operator,
    }
}

/// Every index the plan reads, in plan order (bottom-up), without duplicates.
pub fn select_indexes(plan: &PhysicalPlan, schema: &Schema) -> Vec<IndexDef> {
    let mut out: Vec<IndexDef> = Vec::new();
    for n in plan.nodes().into_iter().rev() {
        let idx = match n {
            PhysicalPlan::IndexScan(s) => Some(s.access.index.clone()),
            PhysicalPlan::SortedIndexJoin(j) => Some(j.access.index.clone()),
            PhysicalPlan::IndexFkJoin(j) => schema.primary_index(&j.table).cloned(),
            _ => None,
        };
        if let Some(i) = idx {
            if !out
                .iter()
                .any(|o| o.table == i.table && o.fields == i.fields)
            {
                out.push(i);
            }
        }
    }
    out
}

/// Indented operator tree with per-node bound annotations.
pub fn explain(plan: &PhysicalPlan, bound: &OperationBound) -> String {
    let mut out = String::new();
    for (depth, n) in plan.nodes().into_iter().enumerate() {
        let _ = write!(out, "{}{}", "  ".repeat(depth), n.label());
        match bound.per_operator.iter().find(|o| o.id == n.id()) {
            Some(b) => {
                let _ = writeln!(
                    out,
                    "  [requests <= {}, tuples <= {}, out <= {}]",
                    b.requests,
                    b.tuples,
                    n.output_bound()
                );
            }
            None => {
                let _ = writeln!(out, "  [out <= {}]", n.output_bound());
            }
        }
    }
    let _ = writeln!(
        out,
        "OperationBound: requests <= {}, tuples <= {}",
        bound.max_requests, bound.max_tuples
    );
    out
}

/// Fields of `index` after the key prefix, used by the executor to rebuild
/// index keys from rows.
pub fn index_field_columns(index: &IndexDef) -> Vec<&str> {
    index.fields.iter().map(IndexField::column).collect()
}
