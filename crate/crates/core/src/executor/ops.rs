//! Iterator-model operators.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, VecDeque};

use super::cursor::{resume_bound, Resume, RunField, TieOrder};
use super::storage::{decode_record, entry_is_live, key_from_pk, namespace_prefix, tokenize};
use super::{BoundParams, ExecError, OperatorStats};
use crate::catalog::{IndexField, Schema, TableDef};
use crate::kvstore::keycodec::{decode_tuple, encode_field, prefix_end, successor};
use crate::kvstore::latency::{charge_simulated, measure, take_simulated};
use crate::kvstore::{Direction, KvRecord, KvStore};
use crate::physical::{IndexAccess, KeyPart, PhysicalPlan, Strategy};
use crate::query::{AggFunc, ColumnRef, LimitKind, Operand, OrderKey, Predicate, Projection};
use crate::value::{ColumnType, Value};

pub(crate) type Row = Vec<Value>;

/// `(table, column)` of each row position. Aggregate outputs have an empty
/// table and their rendered projection as column.
#[derive(Debug, Clone, Default)]
pub(crate) struct Layout(pub Vec<(String, String)>);

impl Layout {
    fn of_table(t: &TableDef) -> Self {
        Layout(
            t.columns
                .iter()
                .map(|c| (t.name.clone(), c.name.clone()))
                .collect(),
        )
    }

    fn concat(&self, other: &Layout) -> Self {
        Layout(self.0.iter().chain(&other.0).cloned().collect())
    }

    pub fn find(&self, c: &ColumnRef) -> Option<usize> {
        self.0
            .iter()
            .position(|(t, col)| *col == c.column && c.table.as_deref().is_none_or(|x| x == t))
    }

    fn find_field(&self, table: &str, column: &str) -> Option<usize> {
        self.0.iter().position(|(t, c)| t == table && c == column)
    }

    pub fn relations(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for (t, _) in &self.0 {
            if !t.is_empty() && !out.contains(t) {
                out.push(t.clone());
            }
        }
        out
    }
}

pub(crate) struct Ctx<'a> {
    pub store: &'a dyn KvStore,
    pub params: &'a BoundParams,
    pub strategy: Strategy,
    pub order: &'a TieOrder,
    /// Total-order key of the last row of the previous page.
    pub last: Option<&'a [Value]>,
}

pub(crate) trait Operator {
    fn open(&mut self, ctx: &Ctx) -> Result<(), ExecError>;
    fn next(&mut self, ctx: &Ctx) -> Result<Option<Row>, ExecError>;
    fn close(&mut self, stats: &mut Vec<OperatorStats>);
    fn layout(&self) -> &Layout;
}

/// Projection of a row onto the total order, over the relations in `layout`.
struct RowKey {
    positions: Vec<usize>,
    slots: Vec<usize>,
}

impl RowKey {
    fn new(order: &TieOrder, layout: &Layout) -> Self {
        let positions = order.positions(&layout.relations());
        let slots = positions
            .iter()
            .map(|&i| {
                layout
                    .find_field(&order.fields[i].table, &order.fields[i].column)
                    .expect("order field in layout")
            })
            .collect();
        RowKey { positions, slots }
    }

    fn key(&self, row: &Row) -> Vec<Value> {
        self.slots.iter().map(|&s| row[s].clone()).collect()
    }

    fn last<'a>(&self, last: &'a [Value]) -> Vec<Value> {
        self.positions.iter().map(|&i| last[i].clone()).collect()
    }

    fn cmp(&self, order: &TieOrder, a: &[Value], b: &[Value]) -> Ordering {
        order.compare(&self.positions, a, b)
    }
}

pub(crate) fn operand_value(
    op: &Operand,
    layout: &Layout,
    row: Option<&Row>,
    params: &BoundParams,
) -> Result<Value, ExecError> {
    match op {
        Operand::Literal(v) => Ok(v.clone()),
        Operand::Param(p) => params.scalar(p),
        Operand::Column(c) => {
            let row =
                row.ok_or_else(|| ExecError::Unsupported(format!("column {c} outside a row")))?;
            let i = layout
                .find(c)
                .ok_or_else(|| ExecError::Unsupported(format!("column {c} not available")))?;
            Ok(row[i].clone())
        }
    }
}

fn compare_values(a: &Value, b: &Value) -> Ordering {
    let b = b
        .clone()
        .coerce(a.column_type())
        .unwrap_or_else(|| b.clone());
    a.cmp(&b)
}

/// The single token probed by a search word, if it is one token.
pub(crate) fn probe_token(word: &Value) -> Option<String> {
    let Value::Str(w) = word else { return None };
    let mut t = tokenize(w);
    (t.len() == 1).then(|| t.remove(0))
}

pub(crate) fn eval_predicate(
    p: &Predicate,
    layout: &Layout,
    row: &Row,
    params: &BoundParams,
) -> Result<bool, ExecError> {
    let col = |c: &ColumnRef| {
        layout
            .find(c)
            .map(|i| &row[i])
            .ok_or_else(|| ExecError::Unsupported(format!("column {c} not available")))
    };
    Ok(match p {
        Predicate::Compare { left, op, right } => {
            let r = operand_value(right, layout, Some(row), params)?;
            op.holds(compare_values(col(left)?, &r))
        }
        Predicate::TokenMatch { column, word } => {
            let w = operand_value(word, layout, Some(row), params)?;
            match (probe_token(&w), col(column)?) {
                (Some(t), Value::Str(text)) => tokenize(text).contains(&t),
                _ => false,
            }
        }
        Predicate::In { column, list, .. } => {
            let v = col(column)?;
            params
                .list(list)?
                .iter()
                .any(|x| compare_values(v, x) == Ordering::Equal)
        }
    })
}

/// Runs `f` on every item concurrently and charges the slowest item's
/// simulated delay to the caller.
///
/// Simulated stores never block, so once the first item shows the store is
/// simulated the rest run in order on this thread; the charge is the same.
fn wave<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    if items.len() <= 1 {
        return items.iter().map(f).collect();
    }
    let outer = take_simulated();
    let first = f(&items[0]);
    let mut results: Vec<(R, Option<f64>)> = vec![(first, take_simulated())];
    let f = &f;
    if results[0].1.is_some() {
        for it in &items[1..] {
            let r = f(it);
            results.push((r, take_simulated()));
        }
    } else {
        std::thread::scope(|s| {
            let handles: Vec<_> = items[1..]
                .iter()
                .map(|it| {
                    s.spawn(move || {
                        let r = f(it);
                        (r, take_simulated())
                    })
                })
                .collect();
            results.extend(
                handles
                    .into_iter()
                    .map(|h| h.join().expect("store request thread panicked")),
            );
        });
    }
    if let Some(ms) = outer {
        charge_simulated(ms);
    }
    let slowest = results.iter().filter_map(|(_, m)| *m).reduce(f64::max);
    if let Some(ms) = slowest {
        charge_simulated(ms);
    }
    results.into_iter().map(|(r, _)| r).collect()
}

/// Issues one request per item, concurrently or in order by strategy.
fn issue<T: Sync, R: Send>(strategy: Strategy, items: &[T], f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    if strategy == Strategy::Parallel {
        wave(items, f)
    } else {
        items.iter().map(f).collect()
    }
}

#[derive(Default)]
struct Counters {
    requests: u64,
    tuples: u64,
    latency_ms: f64,
}

/// One contiguous index range: a probe of a scan, or the matches of one
/// left row in a sorted join.
struct Run {
    left: Option<Row>,
    lo: Vec<u8>,
    hi: Option<Vec<u8>>,
    /// Point lookups use a get on `lo`.
    point: bool,
    limit: u64,
    fetched: u64,
    done: bool,
    buf: VecDeque<(Vec<Value>, Row)>,
}

/// Range fetching, dereferencing and merging shared by index scans and
/// sorted joins.
struct RunSet<'p> {
    table: &'p TableDef,
    access: &'p IndexAccess,
    ordered: bool,
    /// Unsafe mode: the batch size for an unbounded range.
    page: Option<u64>,
    layout: Layout,
    key: RowKey,
    runs: Vec<Run>,
    counters: Counters,
    sorted: VecDeque<Row>,
}

enum Fetched {
    Entries(Vec<KvRecord>),
    Error(ExecError),
}

impl<'p> RunSet<'p> {
    fn new(
        table: &'p TableDef,
        access: &'p IndexAccess,
        ordered: bool,
        page: Option<u64>,
        layout: Layout,
        order: &TieOrder,
    ) -> Self {
        let key = RowKey::new(order, &layout);
        RunSet {
            table,
            access,
            ordered,
            page,
            layout,
            key,
            runs: Vec::new(),
            counters: Counters::default(),
            sorted: VecDeque::new(),
        }
    }

    /// Builds the runs for one left row (or none), applying the cursor.
    fn add_runs(
        &mut self,
        ctx: &Ctx,
        left: Option<&Row>,
        left_layout: &Layout,
        limit: u64,
    ) -> Result<(), ExecError> {
        let index = &self.access.index;
        let types = index.field_types(self.table);
        let mut prefixes: Vec<(Vec<u8>, Vec<Value>)> =
            vec![(namespace_prefix(&index.namespace(self.table)), Vec::new())];
        for (part, ty) in self.access.key_prefix.iter().zip(&types) {
            let values: Vec<Value> = match part {
                KeyPart::Value(op) => vec![operand_value(op, left_layout, left, ctx.params)?],
                KeyPart::LeftColumn(c) => vec![operand_value(
                    &Operand::Column(c.clone()),
                    left_layout,
                    left,
                    ctx.params,
                )?],
                KeyPart::Token(op) => {
                    match probe_token(&operand_value(op, left_layout, left, ctx.params)?) {
                        Some(t) => vec![Value::Str(t)],
                        None => Vec::new(),
                    }
                }
                KeyPart::InList { list, .. } => {
                    let mut seen = BTreeSet::new();
                    ctx.params
                        .list(list)?
                        .into_iter()
                        .filter(|v| seen.insert(v.clone()))
                        .collect()
                }
            };
            let mut next = Vec::new();
            for (bytes, vals) in &prefixes {
                for v in &values {
                    let v = v.clone().coerce(*ty).ok_or_else(|| ExecError::ParamType {
                        name: format!("{part:?}"),
                        detail: format!("expected {ty}"),
                    })?;
                    let mut b = bytes.clone();
                    encode_field(&mut b, &v);
                    let mut vs = vals.clone();
                    vs.push(v);
                    next.push((b, vs));
                }
            }
            prefixes = next;
        }
        let lead = self.access.key_prefix.len();
        let range_ty = self
            .access
            .range
            .as_ref()
            .map(|r| self.table.column(&r.column).expect("validated").ty);
        for (prefix, values) in prefixes {
            let mut run = Run {
                left: left.cloned(),
                lo: prefix.clone(),
                hi: prefix_end(&prefix),
                point: self.access.point,
                limit,
                fetched: 0,
                done: false,
                buf: VecDeque::new(),
            };
            if self.access.point {
                run.hi = Some(successor(&prefix));
            }
            if let (Some(r), Some(ty)) = (&self.access.range, range_ty) {
                if let Some(b) = &r.lower {
                    let v = operand_value(&b.value, left_layout, left, ctx.params)?
                        .coerce(ty)
                        .ok_or_else(|| bad_bound(ty))?;
                    let mut k = prefix.clone();
                    encode_field(&mut k, &v);
                    run.lo = if b.inclusive {
                        k
                    } else {
                        prefix_end(&k).unwrap_or(k)
                    };
                }
                if let Some(b) = &r.upper {
                    let v = operand_value(&b.value, left_layout, left, ctx.params)?
                        .coerce(ty)
                        .ok_or_else(|| bad_bound(ty))?;
                    let mut k = prefix.clone();
                    encode_field(&mut k, &v);
                    run.hi = if b.inclusive { prefix_end(&k) } else { Some(k) };
                }
            }
            if let (Some(last), true) = (ctx.last, self.ordered) {
                let fields =
                    self.run_fields(ctx.order, left, left_layout, &index.fields[..lead], &values);
                match resume_bound(
                    ctx.order,
                    &self.key.positions,
                    &fields,
                    &self.key.last(last),
                    &prefix,
                    self.access.direction,
                ) {
                    Resume::Lower(k) => run.lo = run.lo.max(k),
                    Resume::Upper(k) => run.hi = Some(run.hi.map_or(k.clone(), |h| h.min(k))),
                    Resume::Empty => run.done = true,
                    Resume::Unchanged => {}
                }
            }
            if limit == 0 || run.hi.as_ref().is_some_and(|h| *h <= run.lo) {
                run.done = true;
            }
            self.runs.push(run);
        }
        Ok(())
    }

    fn run_fields(
        &self,
        order: &TieOrder,
        left: Option<&Row>,
        left_layout: &Layout,
        lead: &[IndexField],
        values: &[Value],
    ) -> Vec<RunField> {
        self.key
            .positions
            .iter()
            .map(|&i| {
                let f = &order.fields[i];
                if f.table != self.table.name {
                    let slot = left_layout
                        .find_field(&f.table, &f.column)
                        .expect("left relation field");
                    return RunField::Constant(left.expect("join row")[slot].clone());
                }
                match lead
                    .iter()
                    .position(|x| *x == IndexField::Column(f.column.clone()))
                {
                    Some(j) => RunField::Constant(values[j].clone()),
                    None => {
                        RunField::Varying(self.table.column(&f.column).expect("order column").ty)
                    }
                }
            })
            .collect()
    }

    /// One request for each listed run, fetching up to `n` entries each.
    fn fetch(&mut self, ctx: &Ctx, ids: &[usize], n: u64) -> Result<(), ExecError> {
        let reqs: Vec<(usize, Vec<u8>, Option<Vec<u8>>, bool, u64)> = ids
            .iter()
            .map(|&i| {
                let r = &self.runs[i];
                (
                    i,
                    r.lo.clone(),
                    r.hi.clone(),
                    r.point,
                    n.min(r.limit - r.fetched).max(1),
                )
            })
            .collect();
        let dir = self.access.direction;
        let store = ctx.store;
        let (results, ms) = measure(|| {
            issue(ctx.strategy, &reqs, |(_, lo, hi, point, n)| {
                let res = if *point {
                    store.get(lo).map(|v| {
                        v.map(|value| KvRecord {
                            key: lo.clone(),
                            value,
                        })
                        .into_iter()
                        .collect()
                    })
                } else {
                    store.get_range(lo, hi.as_deref(), *n as usize, dir)
                };
                match res {
                    Ok(recs) => Fetched::Entries(recs),
                    Err(e) => Fetched::Error(e.into()),
                }
            })
        });
        self.counters.latency_ms += ms;
        self.counters.requests += reqs.len() as u64;
        let mut entries: Vec<(usize, KvRecord)> = Vec::new();
        for ((i, _, _, point, n), res) in reqs.iter().zip(results) {
            let recs = match res {
                Fetched::Entries(r) => r,
                Fetched::Error(e) => return Err(e),
            };
            let run = &mut self.runs[*i];
            run.fetched += recs.len() as u64;
            self.counters.tuples += recs.len() as u64;
            if *point || (recs.len() as u64) < *n || run.fetched >= run.limit {
                run.done = true;
            }
            if let Some(last) = recs.last() {
                match dir {
                    Direction::Ascending => run.lo = successor(&last.key),
                    Direction::Descending => run.hi = Some(last.key.clone()),
                }
            }
            entries.extend(recs.into_iter().map(|r| (*i, r)));
        }
        let tuples = self.materialize(ctx, &entries)?;
        for ((i, _), t) in entries.iter().zip(tuples) {
            if let Some(t) = t {
                let row: Row = match &self.runs[*i].left {
                    Some(l) => l.iter().cloned().chain(t).collect(),
                    None => t,
                };
                self.runs[*i].buf.push_back((self.key.key(&row), row));
            }
        }
        Ok(())
    }

    /// Base tuples for fetched entries; `None` marks a dangling entry.
    fn materialize(
        &mut self,
        ctx: &Ctx,
        entries: &[(usize, KvRecord)],
    ) -> Result<Vec<Option<Row>>, ExecError> {
        if self.access.covering {
            return entries
                .iter()
                .map(|(_, r)| Ok(Some(decode_record(self.table, &r.value)?)))
                .collect();
        }
        let pk_types = self.table.pk_types();
        let keys: Vec<Vec<u8>> = entries
            .iter()
            .map(|(_, r)| Ok(key_from_pk(self.table, &decode_tuple(&r.value, &pk_types)?)))
            .collect::<Result<_, ExecError>>()?;
        let store = ctx.store;
        let (found, ms) = measure(|| issue(ctx.strategy, &keys, |k| store.get(k)));
        self.counters.latency_ms += ms;
        self.counters.requests += keys.len() as u64;
        let mut out = Vec::with_capacity(entries.len());
        for ((_, entry), got) in entries.iter().zip(found) {
            out.push(match got? {
                Some(bytes) => {
                    let t = decode_record(self.table, &bytes)?;
                    entry_is_live(&self.access.index, self.table, &t, &entry.key).then_some(t)
                }
                None => None,
            });
        }
        Ok(out)
    }

    fn pending(&self) -> Vec<usize> {
        (0..self.runs.len())
            .filter(|&i| !self.runs[i].done)
            .collect()
    }

    /// Reads every run to its limit and sorts the union.
    fn fetch_all(&mut self, ctx: &Ctx) -> Result<(), ExecError> {
        let batch = match (ctx.strategy, self.page) {
            (Strategy::Lazy, _) => 1,
            (_, Some(p)) => p,
            _ => u64::MAX,
        };
        loop {
            let ids = self.pending();
            if ids.is_empty() {
                break;
            }
            if ctx.strategy == Strategy::Lazy {
                for i in ids {
                    self.fetch(ctx, &[i], 1)?;
                }
            } else {
                self.fetch(ctx, &ids, batch)?;
            }
        }
        let mut all: Vec<(Vec<Value>, Row)> =
            self.runs.iter_mut().flat_map(|r| r.buf.drain(..)).collect();
        let order = ctx.order;
        all.sort_by(|a, b| self.key.cmp(order, &a.0, &b.0));
        self.sorted = all.into_iter().map(|(_, r)| r).collect();
        Ok(())
    }

    fn start(&mut self, ctx: &Ctx) -> Result<(), ExecError> {
        if ctx.strategy == Strategy::Lazy && self.ordered && self.page.is_none() {
            for i in 0..self.runs.len() {
                self.fill(ctx, i)?;
            }
            Ok(())
        } else {
            self.fetch_all(ctx)
        }
    }

    /// Next row: from the sorted union, or by merging run heads lazily.
    fn next(&mut self, ctx: &Ctx) -> Result<Option<Row>, ExecError> {
        if !(ctx.strategy == Strategy::Lazy && self.ordered && self.page.is_none()) {
            return Ok(self.sorted.pop_front());
        }
        let mut best: Option<usize> = None;
        for (i, r) in self.runs.iter().enumerate() {
            if let Some((k, _)) = r.buf.front() {
                let better = match best {
                    None => true,
                    Some(b) => {
                        self.key
                            .cmp(ctx.order, k, &self.runs[b].buf.front().expect("head").0)
                            == Ordering::Less
                    }
                };
                if better {
                    best = Some(i);
                }
            }
        }
        let Some(i) = best else { return Ok(None) };
        let (_, row) = self.runs[i].buf.pop_front().expect("head");
        self.fill(ctx, i)?;
        Ok(Some(row))
    }

    /// Fetches one entry at a time until run `i` has a live row or ends.
    fn fill(&mut self, ctx: &Ctx, i: usize) -> Result<(), ExecError> {
        while self.runs[i].buf.is_empty() && !self.runs[i].done {
            self.fetch(ctx, &[i], 1)?;
        }
        Ok(())
    }

    fn stats(&self, id: u32, operator: &str) -> OperatorStats {
        OperatorStats {
            id,
            operator: operator.to_string(),
            requests: self.counters.requests,
            tuples: self.counters.tuples,
            latency_ms: self.counters.latency_ms,
        }
    }
}

fn bad_bound(ty: ColumnType) -> ExecError {
    ExecError::ParamType {
        name: "range bound".into(),
        detail: format!("expected {ty}"),
    }
}

struct ScanOp<'p> {
    node: &'p crate::physical::IndexScan,
    set: RunSet<'p>,
}

impl Operator for ScanOp<'_> {
    fn open(&mut self, ctx: &Ctx) -> Result<(), ExecError> {
        let limit = if self.node.unbounded {
            u64::MAX
        } else {
            self.node.limit_hint
        };
        self.set.add_runs(ctx, None, &Layout::default(), limit)?;
        self.set.start(ctx)
    }
    fn next(&mut self, ctx: &Ctx) -> Result<Option<Row>, ExecError> {
        self.set.next(ctx)
    }
    fn close(&mut self, stats: &mut Vec<OperatorStats>) {
        stats.push(self.set.stats(self.node.id, "IndexScan"));
    }
    fn layout(&self) -> &Layout {
        &self.set.layout
    }
}

struct SortedJoinOp<'p> {
    node: &'p crate::physical::SortedIndexJoin,
    child: Box<dyn Operator + 'p>,
    set: RunSet<'p>,
}

impl Operator for SortedJoinOp<'_> {
    fn open(&mut self, ctx: &Ctx) -> Result<(), ExecError> {
        self.child.open(ctx)?;
        let left_layout = self.child.layout().clone();
        while let Some(row) = self.child.next(ctx)? {
            self.set
                .add_runs(ctx, Some(&row), &left_layout, self.node.per_key_limit)?;
        }
        self.set.start(ctx)
    }
    fn next(&mut self, ctx: &Ctx) -> Result<Option<Row>, ExecError> {
        self.set.next(ctx)
    }
    fn close(&mut self, stats: &mut Vec<OperatorStats>) {
        self.child.close(stats);
        stats.push(self.set.stats(self.node.id, "SortedIndexJoin"));
    }
    fn layout(&self) -> &Layout {
        &self.set.layout
    }
}

struct FkJoinOp<'p> {
    node: &'p crate::physical::IndexFkJoin,
    table: &'p TableDef,
    child: Box<dyn Operator + 'p>,
    layout: Layout,
    counters: Counters,
    ready: VecDeque<Row>,
}

impl FkJoinOp<'_> {
    fn key_for(&self, ctx: &Ctx, left: &Row) -> Result<Vec<u8>, ExecError> {
        let mut pk = Vec::new();
        for (part, ty) in self.node.key.iter().zip(self.table.pk_types()) {
            let v = match part {
                KeyPart::LeftColumn(c) => operand_value(
                    &Operand::Column(c.clone()),
                    self.child.layout(),
                    Some(left),
                    ctx.params,
                )?,
                KeyPart::Value(op) => {
                    operand_value(op, self.child.layout(), Some(left), ctx.params)?
                }
                other => {
                    return Err(ExecError::Unsupported(format!(
                        "foreign-key part {other:?}"
                    )))
                }
            };
            pk.push(v.clone().coerce(ty).unwrap_or(v));
        }
        Ok(key_from_pk(self.table, &pk))
    }

    fn join_batch(&mut self, ctx: &Ctx, lefts: Vec<Row>) -> Result<(), ExecError> {
        let keys: Vec<Vec<u8>> = lefts
            .iter()
            .map(|l| self.key_for(ctx, l))
            .collect::<Result<_, _>>()?;
        let store = ctx.store;
        let (found, ms) = measure(|| issue(ctx.strategy, &keys, |k| store.get(k)));
        self.counters.latency_ms += ms;
        self.counters.requests += keys.len() as u64;
        for (l, got) in lefts.into_iter().zip(found) {
            if let Some(bytes) = got? {
                self.counters.tuples += 1;
                let t = decode_record(self.table, &bytes)?;
                self.ready.push_back(l.into_iter().chain(t).collect());
            }
        }
        Ok(())
    }
}

impl Operator for FkJoinOp<'_> {
    fn open(&mut self, ctx: &Ctx) -> Result<(), ExecError> {
        self.child.open(ctx)?;
        if ctx.strategy != Strategy::Lazy {
            let mut lefts = Vec::new();
            while let Some(r) = self.child.next(ctx)? {
                lefts.push(r);
            }
            self.join_batch(ctx, lefts)?;
        }
        Ok(())
    }
    fn next(&mut self, ctx: &Ctx) -> Result<Option<Row>, ExecError> {
        while self.ready.is_empty() && ctx.strategy == Strategy::Lazy {
            match self.child.next(ctx)? {
                Some(l) => self.join_batch(ctx, vec![l])?,
                None => break,
            }
        }
        Ok(self.ready.pop_front())
    }
    fn close(&mut self, stats: &mut Vec<OperatorStats>) {
        self.child.close(stats);
        stats.push(OperatorStats {
            id: self.node.id,
            operator: "IndexFKJoin".into(),
            requests: self.counters.requests,
            tuples: self.counters.tuples,
            latency_ms: self.counters.latency_ms,
        });
    }
    fn layout(&self) -> &Layout {
        &self.layout
    }
}

struct SelectOp<'p> {
    predicate: &'p Predicate,
    child: Box<dyn Operator + 'p>,
}

impl Operator for SelectOp<'_> {
    fn open(&mut self, ctx: &Ctx) -> Result<(), ExecError> {
        self.child.open(ctx)
    }
    fn next(&mut self, ctx: &Ctx) -> Result<Option<Row>, ExecError> {
        while let Some(r) = self.child.next(ctx)? {
            if eval_predicate(self.predicate, self.child.layout(), &r, ctx.params)? {
                return Ok(Some(r));
            }
        }
        Ok(None)
    }
    fn close(&mut self, stats: &mut Vec<OperatorStats>) {
        self.child.close(stats)
    }
    fn layout(&self) -> &Layout {
        self.child.layout()
    }
}

struct SortOp<'p> {
    keys: &'p [OrderKey],
    child: Box<dyn Operator + 'p>,
    rows: VecDeque<Row>,
}

impl Operator for SortOp<'_> {
    fn open(&mut self, ctx: &Ctx) -> Result<(), ExecError> {
        self.child.open(ctx)?;
        let layout = self.child.layout().clone();
        let slots: Vec<(usize, bool)> = self
            .keys
            .iter()
            .map(|k| layout.find(&k.column).map(|i| (i, k.descending)))
            .collect::<Option<_>>()
            .ok_or_else(|| ExecError::Unsupported("sort key not in input".into()))?;
        let tie = RowKey::new(ctx.order, &layout);
        let mut rows = Vec::new();
        while let Some(r) = self.child.next(ctx)? {
            rows.push((tie.key(&r), r));
        }
        rows.sort_by(|(ka, a), (kb, b)| {
            for &(i, desc) in &slots {
                let o = a[i].cmp(&b[i]);
                let o = if desc { o.reverse() } else { o };
                if o != Ordering::Equal {
                    return o;
                }
            }
            tie.cmp(ctx.order, ka, kb)
        });
        self.rows = rows.into_iter().map(|(_, r)| r).collect();
        Ok(())
    }
    fn next(&mut self, _ctx: &Ctx) -> Result<Option<Row>, ExecError> {
        Ok(self.rows.pop_front())
    }
    fn close(&mut self, stats: &mut Vec<OperatorStats>) {
        self.child.close(stats)
    }
    fn layout(&self) -> &Layout {
        self.child.layout()
    }
}

struct StopOp<'p> {
    count: u64,
    kind: LimitKind,
    child: Box<dyn Operator + 'p>,
    emitted: u64,
    after: Option<(RowKey, Vec<Value>)>,
}

impl Operator for StopOp<'_> {
    fn open(&mut self, ctx: &Ctx) -> Result<(), ExecError> {
        self.child.open(ctx)?;
        if let (LimitKind::Paginate, Some(last)) = (self.kind, ctx.last) {
            let key = RowKey::new(ctx.order, self.child.layout());
            let last = key.last(last);
            self.after = Some((key, last));
        }
        Ok(())
    }
    fn next(&mut self, ctx: &Ctx) -> Result<Option<Row>, ExecError> {
        while self.emitted < self.count {
            let Some(r) = self.child.next(ctx)? else {
                return Ok(None);
            };
            if let Some((key, last)) = &self.after {
                if key.cmp(ctx.order, &key.key(&r), last) != Ordering::Greater {
                    continue;
                }
            }
            self.emitted += 1;
            return Ok(Some(r));
        }
        Ok(None)
    }
    fn close(&mut self, stats: &mut Vec<OperatorStats>) {
        self.child.close(stats)
    }
    fn layout(&self) -> &Layout {
        self.child.layout()
    }
}

enum Acc {
    Count(i64),
    Sum(i64),
    Min(Option<Value>),
    Max(Option<Value>),
    Group(Value),
}

struct AggregateOp<'p> {
    group_by: &'p [ColumnRef],
    outputs: &'p [Projection],
    child: Box<dyn Operator + 'p>,
    layout: Layout,
    rows: VecDeque<Row>,
}

impl Operator for AggregateOp<'_> {
    fn open(&mut self, ctx: &Ctx) -> Result<(), ExecError> {
        self.child.open(ctx)?;
        let input = self.child.layout().clone();
        let find = |c: &ColumnRef| {
            input
                .find(c)
                .ok_or_else(|| ExecError::Unsupported(format!("column {c} not available")))
        };
        let group_slots: Vec<usize> = self.group_by.iter().map(find).collect::<Result<_, _>>()?;
        let mut groups: BTreeMap<Vec<Value>, Vec<Acc>> = BTreeMap::new();
        let fresh = |row: &Row| -> Result<Vec<Acc>, ExecError> {
            self.outputs
                .iter()
                .map(|p| {
                    Ok(match p {
                        Projection::Column { column } => Acc::Group(row[find(column)?].clone()),
                        Projection::Aggregate {
                            func: AggFunc::Count,
                            ..
                        } => Acc::Count(0),
                        Projection::Aggregate {
                            func: AggFunc::Sum, ..
                        } => Acc::Sum(0),
                        Projection::Aggregate {
                            func: AggFunc::Min, ..
                        } => Acc::Min(None),
                        Projection::Aggregate {
                            func: AggFunc::Max, ..
                        } => Acc::Max(None),
                        Projection::Star => {
                            return Err(ExecError::Unsupported("* with aggregates".into()))
                        }
                    })
                })
                .collect()
        };
        let mut seen_any = false;
        while let Some(r) = self.child.next(ctx)? {
            seen_any = true;
            let g: Vec<Value> = group_slots.iter().map(|&i| r[i].clone()).collect();
            if !groups.contains_key(&g) {
                let accs = fresh(&r)?;
                groups.insert(g.clone(), accs);
            }
            let accs = groups.get_mut(&g).expect("inserted");
            for (acc, p) in accs.iter_mut().zip(self.outputs) {
                let arg = match p {
                    Projection::Aggregate { arg: Some(c), .. } => Some(r[find(c)?].clone()),
                    _ => None,
                };
                match acc {
                    Acc::Count(n) => *n += 1,
                    Acc::Sum(s) => {
                        if let Some(Value::Int(v) | Value::Timestamp(v)) = arg {
                            *s += v;
                        }
                    }
                    Acc::Min(m) => {
                        if let Some(v) = arg {
                            if m.as_ref().is_none_or(|x| v < *x) {
                                *m = Some(v);
                            }
                        }
                    }
                    Acc::Max(m) => {
                        if let Some(v) = arg {
                            if m.as_ref().is_none_or(|x| v > *x) {
                                *m = Some(v);
                            }
                        }
                    }
                    Acc::Group(_) => {}
                }
            }
        }
        // A global aggregate over no rows yields one row of zero counts and
        // sums, or nothing if it asks for a minimum or maximum.
        if !seen_any && self.group_by.is_empty() {
            let empty_ok = self.outputs.iter().all(|p| {
                matches!(
                    p,
                    Projection::Aggregate {
                        func: AggFunc::Count | AggFunc::Sum,
                        ..
                    }
                )
            });
            if empty_ok {
                let row = self.outputs.iter().map(|_| Value::Int(0)).collect();
                self.rows.push_back(row);
            }
            return Ok(());
        }
        for (_, accs) in groups {
            let row = accs
                .into_iter()
                .map(|a| match a {
                    Acc::Count(n) | Acc::Sum(n) => Value::Int(n),
                    Acc::Min(v) | Acc::Max(v) => v.expect("group has a row"),
                    Acc::Group(v) => v,
                })
                .collect();
            self.rows.push_back(row);
        }
        Ok(())
    }
    fn next(&mut self, _ctx: &Ctx) -> Result<Option<Row>, ExecError> {
        Ok(self.rows.pop_front())
    }
    fn close(&mut self, stats: &mut Vec<OperatorStats>) {
        self.child.close(stats)
    }
    fn layout(&self) -> &Layout {
        &self.layout
    }
}

/// Output layout of an aggregate.
fn aggregate_layout(outputs: &[Projection]) -> Layout {
    Layout(
        outputs
            .iter()
            .map(|p| match p {
                Projection::Column { column } => (
                    column.table.clone().unwrap_or_default(),
                    column.column.clone(),
                ),
                other => (String::new(), other.to_string()),
            })
            .collect(),
    )
}

/// Instantiates the operator tree of `plan`.
pub(crate) fn build<'p>(
    plan: &'p PhysicalPlan,
    schema: &'p Schema,
    order: &TieOrder,
) -> Result<Box<dyn Operator + 'p>, ExecError> {
    let table = |name: &str| {
        schema
            .table(name)
            .ok_or_else(|| ExecError::MissingIndex(format!("unknown table {name}")))
    };
    let check_index = |access: &IndexAccess| {
        let t = table(&access.index.table)?;
        if access.index.is_primary(t)
            || schema
                .indexes
                .iter()
                .any(|i| i.table == access.index.table && i.fields == access.index.fields)
        {
            Ok(())
        } else {
            Err(ExecError::MissingIndex(access.index.name()))
        }
    };
    Ok(match plan {
        PhysicalPlan::IndexScan(s) => {
            check_index(&s.access)?;
            let t = table(&s.table)?;
            let page = s.unbounded.then_some(s.limit_hint.max(1));
            Box::new(ScanOp {
                node: s,
                set: RunSet::new(t, &s.access, s.ordered, page, Layout::of_table(t), order),
            })
        }
        PhysicalPlan::SortedIndexJoin(j) => {
            check_index(&j.access)?;
            let t = table(&j.table)?;
            let child = build(&j.input, schema, order)?;
            let layout = child.layout().concat(&Layout::of_table(t));
            Box::new(SortedJoinOp {
                node: j,
                set: RunSet::new(t, &j.access, j.ordered, None, layout, order),
                child,
            })
        }
        PhysicalPlan::IndexFkJoin(j) => {
            let t = table(&j.table)?;
            let child = build(&j.input, schema, order)?;
            let layout = child.layout().concat(&Layout::of_table(t));
            Box::new(FkJoinOp {
                node: j,
                table: t,
                child,
                layout,
                counters: Counters::default(),
                ready: VecDeque::new(),
            })
        }
        PhysicalPlan::LocalSelection {
            predicate, input, ..
        } => Box::new(SelectOp {
            predicate,
            child: build(input, schema, order)?,
        }),
        PhysicalPlan::LocalSort { keys, input, .. } => Box::new(SortOp {
            keys,
            child: build(input, schema, order)?,
            rows: VecDeque::new(),
        }),
        PhysicalPlan::LocalStop {
            count, kind, input, ..
        } => Box::new(StopOp {
            count: *count,
            kind: *kind,
            child: build(input, schema, order)?,
            emitted: 0,
            after: None,
        }),
        PhysicalPlan::LocalAggregate {
            group_by,
            outputs,
            input,
            ..
        } => Box::new(AggregateOp {
            group_by,
            outputs,
            child: build(input, schema, order)?,
            layout: aggregate_layout(outputs),
            rows: VecDeque::new(),
        }),
    })
}
