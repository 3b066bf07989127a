//! Query execution against a key/value store.

pub mod cursor;
mod ops;
pub mod storage;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{CatalogError, IndexDef, Schema};
use crate::kvstore::keycodec::CodecError;
use crate::kvstore::latency::measure;
use crate::kvstore::{KvError, KvStore};
use crate::logical::ParamSpec;
use crate::physical::{Compiled, PhysicalPlan, Strategy};
use crate::query::{LimitKind, Param};
use crate::value::Value;

pub use cursor::{query_id, CursorError, PageCursor, TieField, TieOrder};
pub use storage::{tokenize, FaultPoint, WriteError};

#[derive(Debug, Error)]
pub enum ExecError {
    #[error("missing value for parameter {0}")]
    MissingParam(String),
    #[error("parameter {name}: {detail}")]
    ParamType { name: String, detail: String },
    #[error("parameter {name}: {len} values exceed the declared maximum of {max}")]
    ListTooLong { name: String, len: usize, max: u32 },
    #[error("index {0} does not exist; create it first")]
    MissingIndex(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error(transparent)]
    Cursor(#[from] CursorError),
    #[error(transparent)]
    Store(#[from] KvError),
    #[error("corrupt record: {0}")]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Write(#[from] WriteError),
    #[error(transparent)]
    Catalog(#[from] CatalogError),
}

/// A bound parameter: a scalar, or the elements of an `IN`-list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    One(Value),
    List(Vec<Value>),
}

/// Parameter values checked against a query's declared parameter types.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct BoundParams {
    values: BTreeMap<String, ParamValue>,
}

impl BoundParams {
    /// Coerces each value to its declared type and checks list lengths.
    /// Values for undeclared names are ignored.
    pub fn bind(
        specs: &[ParamSpec],
        mut raw: BTreeMap<String, ParamValue>,
    ) -> Result<Self, ExecError> {
        let mut values = BTreeMap::new();
        for spec in specs {
            let v = raw
                .remove(&spec.name)
                .ok_or_else(|| ExecError::MissingParam(spec.name.clone()))?;
            let coerce = |v: Value| {
                let found = v.column_type();
                v.coerce(spec.ty).ok_or_else(|| ExecError::ParamType {
                    name: spec.name.clone(),
                    detail: format!("expected {}, got {found}", spec.ty),
                })
            };
            let bound = match (spec.list_max, v) {
                (Some(max), ParamValue::List(items)) => {
                    if items.len() > max as usize {
                        return Err(ExecError::ListTooLong {
                            name: spec.name.clone(),
                            len: items.len(),
                            max,
                        });
                    }
                    ParamValue::List(items.into_iter().map(coerce).collect::<Result<_, _>>()?)
                }
                (Some(_), ParamValue::One(v)) => ParamValue::List(vec![coerce(v)?]),
                (None, ParamValue::One(v)) => ParamValue::One(coerce(v)?),
                (None, ParamValue::List(_)) => {
                    return Err(ExecError::ParamType {
                        name: spec.name.clone(),
                        detail: "expected a single value".into(),
                    })
                }
            };
            values.insert(spec.name.clone(), bound);
        }
        Ok(BoundParams { values })
    }

    /// Binds textual values: `name=value` pairs, with comma-separated
    /// elements for `IN`-lists.
    pub fn parse(specs: &[ParamSpec], pairs: &[(String, String)]) -> Result<Self, ExecError> {
        let mut raw = BTreeMap::new();
        for spec in specs {
            let Some((_, text)) = pairs.iter().find(|(k, _)| *k == spec.name) else {
                continue;
            };
            let parse = |t: &str| {
                Value::parse_as(t, spec.ty).ok_or_else(|| ExecError::ParamType {
                    name: spec.name.clone(),
                    detail: format!("cannot read {t:?} as {}", spec.ty),
                })
            };
            let v = if spec.list_max.is_some() {
                let items = if text.is_empty() {
                    Vec::new()
                } else {
                    text.split(',').map(parse).collect::<Result<_, _>>()?
                };
                ParamValue::List(items)
            } else {
                ParamValue::One(parse(text)?)
            };
            raw.insert(spec.name.clone(), v);
        }
        Self::bind(specs, raw)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.values).expect("parameters serialize")
    }

    pub(crate) fn scalar(&self, p: &Param) -> Result<Value, ExecError> {
        match self.values.get(&p.name) {
            Some(ParamValue::One(v)) => Ok(v.clone()),
            Some(ParamValue::List(_)) => Err(ExecError::ParamType {
                name: p.name.clone(),
                detail: "expected a single value".into(),
            }),
            None => Err(ExecError::MissingParam(p.name.clone())),
        }
    }

    pub(crate) fn list(&self, p: &Param) -> Result<Vec<Value>, ExecError> {
        match self.values.get(&p.name) {
            Some(ParamValue::List(v)) => Ok(v.clone()),
            Some(ParamValue::One(v)) => Ok(vec![v.clone()]),
            None => Err(ExecError::MissingParam(p.name.clone())),
        }
    }
}

/// Store work done by one operator during an execution.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OperatorStats {
    pub id: u32,
    pub operator: String,
    pub requests: u64,
    pub tuples: u64,
    pub latency_ms: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ExecutionStats {
    pub requests: u64,
    pub tuples: u64,
    pub wall_ms: f64,
    /// Remote operators, leaf first.
    pub per_operator: Vec<OperatorStats>,
}

impl ExecutionStats {
    /// `requests=<n> tuples=<n> wall_ms=<ms>`.
    pub fn line(&self) -> String {
        format!(
            "requests={} tuples={} wall_ms={:.3}",
            self.requests, self.tuples, self.wall_ms
        )
    }
}

/// One page of results. `cursor` is set when more rows may follow.
#[derive(Debug, Clone, PartialEq)]
pub struct Page {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Value>>,
    pub cursor: Option<String>,
    pub stats: ExecutionStats,
}

impl Page {
    /// Header line plus one tab-separated line per row.
    pub fn to_tsv(&self) -> String {
        let mut out = self.columns.join("\t");
        out.push('\n');
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(tsv_cell).collect();
            let _ = writeln!(out, "{}", cells.join("\t"));
        }
        out
    }
}

fn tsv_cell(v: &Value) -> String {
    match v {
        Value::Int(i) | Value::Timestamp(i) => i.to_string(),
        Value::Str(s) => s.replace(['\t', '\n'], " "),
        Value::Bool(b) => b.to_string(),
    }
}

/// A schema bound to a store: writes, index maintenance and queries.
pub struct Engine {
    store: Arc<dyn KvStore>,
    schema: Schema,
}

impl Engine {
    pub fn new(store: Arc<dyn KvStore>, schema: Schema) -> Self {
        Engine { store, schema }
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn store(&self) -> &Arc<dyn KvStore> {
        &self.store
    }

    /// Registers `index` and fills it from the existing records.
    pub fn create_index(&mut self, index: IndexDef) -> Result<(), ExecError> {
        let table = self.schema.require_table(&index.table)?;
        if index.is_primary(table) || self.schema.indexes.contains(&index) {
            return Ok(());
        }
        self.schema.register_index(index.clone())?;
        storage::backfill(self.store.as_ref(), &self.schema, &index)?;
        Ok(())
    }

    /// Creates every index the compiled query needs. Returns those created.
    pub fn prepare(&mut self, compiled: &Compiled) -> Result<Vec<IndexDef>, ExecError> {
        let mut created = Vec::new();
        for index in &compiled.indexes {
            let table = self.schema.require_table(&index.table)?;
            if !index.is_primary(table) && !self.schema.indexes.contains(index) {
                self.create_index(index.clone())?;
                created.push(index.clone());
            }
        }
        Ok(created)
    }

    pub fn insert(&self, table: &str, values: Vec<Value>) -> Result<(), WriteError> {
        storage::insert(self.store.as_ref(), &self.schema, table, values, None)
    }

    /// Insert that aborts at `fault`, leaving the partial write behind.
    pub fn insert_with_fault(
        &self,
        table: &str,
        values: Vec<Value>,
        fault: FaultPoint,
    ) -> Result<(), WriteError> {
        storage::insert(
            self.store.as_ref(),
            &self.schema,
            table,
            values,
            Some(fault),
        )
    }

    pub fn update(&self, table: &str, values: Vec<Value>) -> Result<(), WriteError> {
        storage::update(self.store.as_ref(), &self.schema, table, values)
    }

    pub fn delete(&self, table: &str, pk: Vec<Value>) -> Result<(), WriteError> {
        storage::delete(self.store.as_ref(), &self.schema, table, pk)
    }

    /// Removes index entries whose base record no longer matches them.
    pub fn gc(&self) -> Result<usize, WriteError> {
        storage::gc_sweep(self.store.as_ref(), &self.schema)
    }

    /// Runs the query to completion (the first page for `PAGINATE`).
    pub fn execute(
        &self,
        compiled: &Compiled,
        params: &BoundParams,
        strategy: Strategy,
    ) -> Result<Page, ExecError> {
        self.execute_page(compiled, params, strategy, None)
    }

    /// Runs one page, continuing after `cursor` if given.
    pub fn execute_page(
        &self,
        compiled: &Compiled,
        params: &BoundParams,
        strategy: Strategy,
        cursor: Option<&str>,
    ) -> Result<Page, ExecError> {
        let ast = &compiled.query.ast;
        let plan = &compiled.plan;
        let paginate = ast.limit.filter(|l| l.kind == LimitKind::Paginate);
        let aggregated = plan
            .nodes()
            .iter()
            .any(|n| matches!(n, PhysicalPlan::LocalAggregate { .. }));
        if paginate.is_some() && aggregated {
            return Err(ExecError::Unsupported("PAGINATE over aggregates".into()));
        }
        let order = TieOrder::new(&ast.order_by, &plan.relations(), &self.schema);
        let qid = query_id(&plan.to_json(), &params.to_json());
        let resume = match cursor {
            Some(token) => {
                let c = PageCursor::decode(token)?;
                let page_size = paginate.map(|l| l.count);
                if c.query_id != qid
                    || Some(c.page_size) != page_size
                    || c.last_key.len() != order.fields.len()
                {
                    return Err(CursorError::Mismatch.into());
                }
                Some(c.last_key)
            }
            None => None,
        };
        let ctx = ops::Ctx {
            store: self.store.as_ref(),
            params,
            strategy,
            order: &order,
            last: resume.as_deref(),
        };
        let mut per_operator = Vec::new();
        let (result, wall_ms) = measure(|| -> Result<(ops::Layout, Vec<ops::Row>), ExecError> {
            let mut root = ops::build(plan, &self.schema, &order)?;
            let run = (|| -> Result<Vec<ops::Row>, ExecError> {
                root.open(&ctx)?;
                let mut rows = Vec::new();
                while let Some(r) = root.next(&ctx)? {
                    rows.push(r);
                }
                Ok(rows)
            })();
            root.close(&mut per_operator);
            Ok((root.layout().clone(), run?))
        });
        let (layout, rows) = result?;
        let columns = compiled.output_columns(&self.schema);
        let next_cursor = match paginate {
            Some(l) if rows.len() as u64 == l.count && l.count > 0 => {
                let last = rows.last().expect("full page");
                let last_key = order
                    .fields
                    .iter()
                    .map(|f| {
                        layout
                            .0
                            .iter()
                            .position(|(t, c)| *t == f.table && *c == f.column)
                            .map(|i| last[i].clone())
                            .ok_or_else(|| {
                                ExecError::Unsupported(format!(
                                    "order field {}.{} not in output",
                                    f.table, f.column
                                ))
                            })
                    })
                    .collect::<Result<_, _>>()?;
                Some(
                    PageCursor {
                        query_id: qid,
                        page_size: l.count,
                        last_key,
                    }
                    .encode(),
                )
            }
            _ => None,
        };
        let rows = project(&columns, &layout, rows, aggregated);
        let per_operator: Vec<OperatorStats> = per_operator;
        let stats = ExecutionStats {
            requests: per_operator.iter().map(|s| s.requests).sum(),
            tuples: per_operator.iter().map(|s| s.tuples).sum(),
            wall_ms,
            per_operator,
        };
        Ok(Page {
            columns,
            rows,
            cursor: next_cursor,
            stats,
        })
    }
}

fn project(
    columns: &[String],
    layout: &ops::Layout,
    rows: Vec<ops::Row>,
    aggregated: bool,
) -> Vec<Vec<Value>> {
    if aggregated {
        return rows;
    }
    let slots: Vec<usize> = columns
        .iter()
        .map(|c| {
            let (t, col) = c.split_once('.').expect("qualified output column");
            layout
                .0
                .iter()
                .position(|(lt, lc)| lt == t && lc == col)
                .expect("output column in layout")
        })
        .collect();
    rows.into_iter()
        .map(|r| slots.iter().map(|&i| r[i].clone()).collect())
        .collect()
}

#[cfg(test)]
mod tests;
