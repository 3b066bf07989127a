//! Phase II: greedy matching of logical sections to remote operators, with
//! local operators as the fallback.

use std::collections::BTreeSet;
use std::fmt;

use serde::Serialize;
use thiserror::Error;

use super::{
    compute_operation_bound, select_indexes, IndexAccess, IndexFkJoin, IndexScan, KeyPart,
    KeyRange, OperationBound, PhysicalPlan, RangeBound, SortedIndexJoin, Strategy,
};
use crate::catalog::{IndexDef, IndexField, Schema, TableDef};
use crate::kvstore::Direction;
use crate::logical::{build_logical_plan, LogicalPlan, PlanError, ResolvedQuery};
use crate::query::{
    CmpOp, ColumnRef, LimitKind, Operand, OrderKey, Predicate, Projection, QueryAst,
};
use crate::stops::{phase_one, section_parts};

/// A section of the logical plan that no bounded operator can serve.
#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize)]
#[error("Not scale-independent: {reason}")]
pub struct NotScaleIndependent {
    /// The unmatched logical subtree.
    pub section: LogicalPlan,
    /// The relation the failure is attributed to.
    pub relation: Option<String>,
    pub reason: String,
    /// Bounded patterns that almost matched, with why they did not.
    pub near_misses: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CompileError {
    #[error("logical planning: {0}")]
    Plan(#[from] PlanError),
    #[error("physical planning: {0}")]
    NotScaleIndependent(#[from] NotScaleIndependent),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ScalingClass {
    /// Constant work: bounded by the query text and primary keys alone.
    I,
    /// Bounded by schema cardinality constraints.
    II,
    Rejected,
}

impl fmt::Display for ScalingClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScalingClass::I => "I",
            ScalingClass::II => "II",
            ScalingClass::Rejected => "III/IV (unbounded)",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ScalingClassReport {
    pub class: ScalingClass,
    pub reason: String,
    pub suggestions: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CompileOptions {
    /// Permit unbounded index scans (paged at `unsafe_page_size`) where no
    /// bounded operator matches. Plans compiled this way are class
    /// III/IV and carry no finite bound.
    pub allow_unbounded: bool,
    /// Serve `IN`-lists with one probe per element. When false they are
    /// evaluated locally.
    pub probe_in_lists: bool,
    pub unsafe_page_size: u64,
}

impl Default for CompileOptions {
    fn default() -> Self {
        CompileOptions {
            allow_unbounded: false,
            probe_in_lists: true,
            unsafe_page_size: 100,
        }
    }
}

/// Output of [`compile`].
#[derive(Debug, Clone)]
pub struct Compiled {
    pub query: ResolvedQuery,
    /// The logical plan after stop pushdown.
    pub logical: LogicalPlan,
    pub plan: PhysicalPlan,
    /// Bound for the simple and parallel strategies.
    pub bound: OperationBound,
    pub lazy_bound: OperationBound,
    pub report: ScalingClassReport,
    /// Every index the plan reads.
    pub indexes: Vec<IndexDef>,
    /// Indexes the plan needs that the schema does not have yet.
    pub new_indexes: Vec<IndexDef>,
}

impl Compiled {
    pub fn bound_for(&self, strategy: Strategy) -> &OperationBound {
        if strategy == Strategy::Lazy {
            &self.lazy_bound
        } else {
            &self.bound
        }
    }

    /// Columns of the result rows.
    pub fn output_columns(&self, schema: &Schema) -> Vec<String> {
        let ast = &self.query.ast;
        if ast.has_aggregates() || !ast.group_by.is_empty() {
            return ast.projections.iter().map(ToString::to_string).collect();
        }
        let mut out = Vec::new();
        for p in &ast.projections {
            match p {
                Projection::Star => {
                    for r in self.plan.relations() {
                        for c in &schema.table(&r).expect("resolved").columns {
                            out.push(format!("{r}.{}", c.name));
                        }
                    }
                }
                Projection::Column { column } => out.push(column.to_string()),
                Projection::Aggregate { .. } => unreachable!(),
            }
        }
        out
    }
}

/// Equality, token and range predicates of one relation section, sorted into
/// index roles.
#[derive(Default)]
struct Classified {
    eq: Vec<(String, KeyPart)>,
    token: Option<(String, Operand)>,
    range: Option<KeyRange>,
}

impl Classified {
    fn add(&mut self, p: &Predicate, probe_in: bool) -> Result<(), String> {
        match p {
            Predicate::Compare {
                left,
                op: CmpOp::Eq,
                right: right @ (Operand::Literal(_) | Operand::Param(_)),
            } => self.add_eq(&left.column, KeyPart::Value(right.clone())),
            Predicate::In { column, list, max } if probe_in => {
                if self
                    .eq
                    .iter()
                    .any(|(_, k)| matches!(k, KeyPart::InList { .. }))
                {
                    return Err("only one IN-list can drive an index scan".into());
                }
                self.add_eq(
                    &column.column,
                    KeyPart::InList {
                        list: list.clone(),
                        max: *max,
                    },
                )
            }
            Predicate::In { .. } => Err("IN-list probing is disabled".into()),
            Predicate::TokenMatch { column, word } => {
                if self.token.is_some() {
                    return Err("only one token search can drive an index scan".into());
                }
                self.token = Some((column.column.clone(), word.clone()));
                Ok(())
            }
            Predicate::Compare {
                left,
                op,
                right: right @ (Operand::Literal(_) | Operand::Param(_)),
            } => {
                let range = self.range.get_or_insert_with(|| KeyRange {
                    column: left.column.clone(),
                    lower: None,
                    upper: None,
                });
                if range.column != left.column {
                    return Err(format!(
                        "inequality may touch at most one attribute per index range; found {} and {}",
                        range.column, left.column
                    ));
                }
                let bound = RangeBound {
                    value: right.clone(),
                    inclusive: matches!(op, CmpOp::Ge | CmpOp::Le),
                };
                let slot = if matches!(op, CmpOp::Gt | CmpOp::Ge) {
                    &mut range.lower
                } else {
                    &mut range.upper
                };
                if slot.is_some() {
                    return Err(format!("two bounds on the same side of {}", left.column));
                }
                *slot = Some(bound);
                Ok(())
            }
            Predicate::Compare {
                right: Operand::Column(c),
                ..
            } => Err(format!(
                "comparison of {} with column {c} cannot be answered by an index range",
                p.column()
            )),
        }
    }

    fn add_eq(&mut self, attr: &str, part: KeyPart) -> Result<(), String> {
        if self.eq.iter().any(|(a, _)| a == attr) {
            return Err(format!("two equality conditions on {attr}"));
        }
        self.eq.push((attr.to_string(), part));
        Ok(())
    }
}

/// Chooses (or designs) the index serving `cls` in the order of `sort`.
fn build_access(
    schema: &Schema,
    table: &TableDef,
    cls: &Classified,
    sort: &[OrderKey],
) -> Result<IndexAccess, String> {
    let eq_attrs: BTreeSet<&str> = cls.eq.iter().map(|(a, _)| a.as_str()).collect();
    if let Some(r) = &cls.range {
        if eq_attrs.contains(r.column.as_str()) {
            return Err(format!(
                "{} has both an equality and a range condition",
                r.column
            ));
        }
    }
    let sort: Vec<&OrderKey> = sort
        .iter()
        .filter(|k| !eq_attrs.contains(k.column.column.as_str()))
        .collect();
    if let Some(k) = sort
        .iter()
        .find(|k| k.column.table.as_deref() != Some(table.name.as_str()))
    {
        return Err(format!(
            "sort key {} is not a column of {}",
            k.column, table.name
        ));
    }
    let direction = match sort.first() {
        None => Direction::Ascending,
        Some(k) => {
            if sort.iter().any(|o| o.descending != k.descending) {
                return Err(
                    "mixed ascending and descending sort keys cannot follow one index order".into(),
                );
            }
            if k.descending {
                Direction::Descending
            } else {
                Direction::Ascending
            }
        }
    };
    if let (Some(r), Some(k)) = (&cls.range, sort.first()) {
        if k.column.column != r.column {
            return Err(format!(
                "the sort must start with the range attribute {}",
                r.column
            ));
        }
    }

    // Canonical field list: token, equalities (key order, then declaration
    // order), sort or range attributes, then the rest of the primary key.
    let mut eq_sorted: Vec<&str> = eq_attrs.iter().copied().collect();
    let rank = |a: &str| {
        table
            .primary_key
            .iter()
            .position(|k| k == a)
            .unwrap_or(table.primary_key.len() + table.column_index(a).unwrap_or(0))
    };
    eq_sorted.sort_by_key(|a| rank(a));
    let mut fields: Vec<IndexField> = Vec::new();
    if let Some((c, _)) = &cls.token {
        fields.push(IndexField::Token(c.clone()));
    }
    let lead = fields.len() + eq_sorted.len();
    fields.extend(eq_sorted.iter().map(|a| IndexField::Column(a.to_string())));
    let mut ordered: Vec<String> = sort.iter().map(|k| k.column.column.clone()).collect();
    if ordered.is_empty() {
        ordered.extend(cls.range.as_ref().map(|r| r.column.clone()));
    }
    for c in ordered {
        if !fields.contains(&IndexField::Column(c.clone())) {
            fields.push(IndexField::Column(c));
        }
    }
    for k in &table.primary_key {
        if !fields.contains(&IndexField::Column(k.clone())) {
            fields.push(IndexField::Column(k.clone()));
        }
    }

    let fits = |idx: &IndexDef| {
        idx.fields.len() == fields.len()
            && idx.fields[lead..] == fields[lead..]
            && idx.fields[..lead].iter().collect::<BTreeSet<_>>()
                == fields[..lead].iter().collect::<BTreeSet<_>>()
    };
    let primary = schema.primary_index(&table.name);
    let chosen = primary
        .filter(|i| fits(i))
        .or_else(|| schema.indexes_on(&table.name).find(|i| fits(i)))
        .cloned()
        .unwrap_or(IndexDef {
            table: table.name.clone(),
            fields: fields.clone(),
            covering: false,
        });

    let mut key_prefix = Vec::with_capacity(lead);
    for f in &chosen.fields[..lead] {
        key_prefix.push(match f {
            IndexField::Token(_) => {
                KeyPart::Token(cls.token.as_ref().expect("token field").1.clone())
            }
            IndexField::Column(c) => cls
                .eq
                .iter()
                .find(|(a, _)| a == c)
                .expect("eq field")
                .1
                .clone(),
        });
    }
    let is_primary = chosen.is_primary(table);
    let point = is_primary
        && cls.token.is_none()
        && cls.range.is_none()
        && table
            .primary_key
            .iter()
            .all(|k| eq_attrs.contains(k.as_str()));
    Ok(IndexAccess {
        covering: is_primary,
        index: chosen,
        key_prefix,
        range: cls.range.clone(),
        direction,
        point,
    })
}

/// Ascending primary-key order: the order a stop without a sort follows.
fn pk_order(table: &TableDef) -> Vec<OrderKey> {
    table
        .primary_key
        .iter()
        .map(|k| OrderKey {
            column: ColumnRef::new(&table.name, k),
            descending: false,
        })
        .collect()
}

/// Splits an optional `DataStop` off a relation section.
fn right_section(plan: &LogicalPlan) -> Option<(Option<(u64, &[String])>, &str, Vec<&Predicate>)> {
    match plan {
        LogicalPlan::DataStop {
            count,
            attributes,
            input,
            ..
        } => {
            let (t, p) = section_parts(input)?;
            Some((Some((*count, attributes.as_slice())), t, p))
        }
        other => {
            let (t, p) = section_parts(other)?;
            Some((None, t, p))
        }
    }
}

struct Gen<'a> {
    schema: &'a Schema,
    opts: CompileOptions,
    near_misses: Vec<String>,
    constraint_bound: bool,
    unbounded: bool,
}

impl Gen<'_> {
    fn reject(
        &self,
        section: &LogicalPlan,
        relation: Option<String>,
        reason: String,
    ) -> NotScaleIndependent {
        NotScaleIndependent {
            section: section.clone(),
            relation,
            reason,
            near_misses: self.near_misses.clone(),
        }
    }

    fn note_data_stop(&mut self, table: &str, attributes: &[String]) {
        let pk = &self.schema.table(table).expect("resolved").primary_key;
        let a: BTreeSet<&String> = attributes.iter().collect();
        if a != pk.iter().collect() {
            self.constraint_bound = true;
        }
    }

    fn generate(&mut self, node: &LogicalPlan) -> Result<PhysicalPlan, NotScaleIndependent> {
        if let Some(p) = self.match_remote(node)? {
            return Ok(p);
        }
        Ok(match node {
            LogicalPlan::Stop { count, kind, input } => {
                PhysicalPlan::LocalStop { id: 0, count: *count, kind: *kind, input: Box::new(self.generate(input)?) }
            }
            LogicalPlan::Sort { keys, input } => {
                PhysicalPlan::LocalSort { id: 0, keys: keys.clone(), input: Box::new(self.generate(input)?) }
            }
            LogicalPlan::DataStop { input, .. } => self.generate(input)?,
            LogicalPlan::Aggregate { group_by, outputs, input } => PhysicalPlan::LocalAggregate {
                id: 0,
                group_by: group_by.clone(),
                outputs: outputs.clone(),
                input: Box::new(self.generate(input)?),
            },
            LogicalPlan::Selection { .. } | LogicalPlan::Scan { .. } if self.opts.allow_unbounded && section_parts(node).is_some() => {
                self.unbounded_section(node)
            }
            LogicalPlan::Selection { predicate, input } => {
                PhysicalPlan::LocalSelection { id: 0, predicate: predicate.clone(), input: Box::new(self.generate(input)?) }
            }
            LogicalPlan::Scan { table } => {
                return Err(self.reject(
                    node,
                    Some(table.clone()),
                    format!(
                        "unbounded scan of {table}: no LIMIT/PAGINATE stop and no primary-key or CARDINALITY LIMIT equality bounds it"
                    ),
                ))
            }
            LogicalPlan::Join { right, .. } => {
                let rel = right.relations().pop();
                return Err(self.reject(
                    node,
                    rel.clone(),
                    format!(
                        "join with {}: the join keys do not cover its primary key and no stop above the join bounds the tuples per key",
                        rel.unwrap_or_default()
                    ),
                ));
            }
        })
    }

    fn match_remote(
        &mut self,
        node: &LogicalPlan,
    ) -> Result<Option<PhysicalPlan>, NotScaleIndependent> {
        match node {
            LogicalPlan::Stop { .. } => {
                if let Some(p) = self.sorted_join(node)? {
                    return Ok(Some(p));
                }
                Ok(self.index_scan(node))
            }
            LogicalPlan::Sort { .. } | LogicalPlan::DataStop { .. } => Ok(self.index_scan(node)),
            LogicalPlan::Join { .. } => self.fk_join(node),
            _ => Ok(None),
        }
    }

    /// `[Stop] [Sort] [DataStop] Selection* Scan`, bounded by a stop.
    fn index_scan(&mut self, node: &LogicalPlan) -> Option<PhysicalPlan> {
        let mut n = node;
        let mut stop = None;
        let mut sort: &[OrderKey] = &[];
        let mut dstop = None;
        if let LogicalPlan::Stop { count, kind, input } = n {
            stop = Some((*count, *kind));
            n = input;
        }
        if let LogicalPlan::Sort { keys, input } = n {
            sort = keys;
            n = input;
        }
        let n_sorted = sort.len();
        if let LogicalPlan::DataStop {
            count,
            attributes,
            input,
            ..
        } = n
        {
            dstop = Some((*count, attributes.clone()));
            n = input;
        }
        let (table, preds) = section_parts(n)?;
        let td = self.schema.table(table).expect("resolved");
        // A data stop caused by an unprobed IN-list bounds nothing.
        if let Some((_, attrs)) = &dstop {
            let unprobed = |p: &&Predicate| matches!(p, Predicate::In { column, .. } if attrs.contains(&column.column));
            if !self.opts.probe_in_lists && preds.iter().any(unprobed) {
                dstop = None;
            }
        }
        if stop.is_none() && dstop.is_none() {
            return None;
        }
        let mut cls = Classified::default();
        for p in &preds {
            if let Err(why) = cls.add(p, self.opts.probe_in_lists) {
                self.near_misses.push(format!("{table}: {why}"));
                return None;
            }
        }
        let implied;
        if sort.is_empty() && stop.is_some() {
            implied = pk_order(td);
            sort = &implied;
        }
        let mut access = build_access(self.schema, td, &cls, sort);
        let mut ordered = stop.is_some();
        if access.is_err() && n_sorted == 0 && matches!(stop, Some((_, LimitKind::Limit))) {
            access = build_access(self.schema, td, &cls, &[]);
            ordered = false;
        }
        let access = match access {
            Ok(a) => a,
            Err(why) => {
                self.near_misses.push(format!("{table}: {why}"));
                return None;
            }
        };
        let limit_hint = match (&stop, &dstop) {
            (Some((s, _)), Some((d, _))) => (*s).min(*d),
            (Some((s, _)), None) => *s,
            (None, Some((d, _))) => *d,
            (None, None) => unreachable!(),
        };
        if let Some((_, attrs)) = &dstop {
            self.note_data_stop(table, attrs);
        }
        let output_bound = access.probes().saturating_mul(limit_hint);
        let scan = PhysicalPlan::IndexScan(IndexScan {
            id: 0,
            table: table.to_string(),
            access,
            limit_hint,
            output_bound,
            unbounded: false,
            ordered,
        });
        Some(match stop {
            Some((count, kind)) => PhysicalPlan::LocalStop {
                id: 0,
                count,
                kind,
                input: Box::new(scan),
            },
            None => scan,
        })
    }

    /// Primary-key source for each key column of the right relation.
    fn fk_key(
        &self,
        join_preds: &[Predicate],
        table: &TableDef,
        right_preds: &[&Predicate],
    ) -> Option<Vec<(KeyPart, Option<Predicate>)>> {
        table
            .primary_key
            .iter()
            .map(|k| {
                join_preds
                    .iter()
                    .find_map(|p| match p {
                        Predicate::Compare {
                            left,
                            op: CmpOp::Eq,
                            right: Operand::Column(c),
                        } if left.column == *k => {
                            Some((KeyPart::LeftColumn(c.clone()), Some(p.clone())))
                        }
                        _ => None,
                    })
                    .or_else(|| {
                        right_preds.iter().find_map(|p| match p {
                            Predicate::Compare {
                                left,
                                op: CmpOp::Eq,
                                right: r @ (Operand::Literal(_) | Operand::Param(_)),
                            } if left.column == *k => {
                                Some((KeyPart::Value(r.clone()), Some((*p).clone())))
                            }
                            _ => None,
                        })
                    })
            })
            .collect()
    }

    fn fk_join(&mut self, node: &LogicalPlan) -> Result<Option<PhysicalPlan>, NotScaleIndependent> {
        let LogicalPlan::Join {
            predicates,
            left,
            right,
        } = node
        else {
            return Ok(None);
        };
        let Some((dstop, table, rpreds)) = right_section(right) else {
            return Ok(None);
        };
        let td = self.schema.table(table).expect("resolved");
        let Some(key) = self.fk_key(predicates, td, &rpreds) else {
            self.near_misses.push(format!(
                "{table}: join keys do not cover its primary key ({}), so it is not a foreign-key lookup",
                td.primary_key.join(", ")
            ));
            return Ok(None);
        };
        if let Some((_, attrs)) = dstop {
            self.note_data_stop(table, attrs);
        }
        let used: Vec<Predicate> = key.iter().filter_map(|(_, p)| p.clone()).collect();
        let child = self.generate(left)?;
        let output_bound = child.output_bound();
        let mut plan = PhysicalPlan::IndexFkJoin(IndexFkJoin {
            id: 0,
            table: table.to_string(),
            key: key.into_iter().map(|(k, _)| k).collect(),
            input: Box::new(child),
            output_bound,
        });
        let residual = predicates
            .iter()
            .chain(rpreds.iter().copied())
            .filter(|p| !used.contains(p));
        for p in residual {
            plan = PhysicalPlan::LocalSelection {
                id: 0,
                predicate: p.clone(),
                input: Box::new(plan),
            };
        }
        Ok(Some(plan))
    }

    /// `Stop [Sort] Join` where each left tuple's matches come presorted
    /// from one index range truncated at the stop count.
    fn sorted_join(
        &mut self,
        node: &LogicalPlan,
    ) -> Result<Option<PhysicalPlan>, NotScaleIndependent> {
        let LogicalPlan::Stop { count, kind, input } = node else {
            return Ok(None);
        };
        let (sort, n): (&[OrderKey], &LogicalPlan) = match input.as_ref() {
            LogicalPlan::Sort { keys, input } => (keys, input),
            other => (&[], other),
        };
        let LogicalPlan::Join {
            predicates,
            left,
            right,
        } = n
        else {
            return Ok(None);
        };
        let Some((dstop, table, rpreds)) = right_section(right) else {
            return Ok(None);
        };
        let td = self.schema.table(table).expect("resolved");
        if self.fk_key(predicates, td, &rpreds).is_some() {
            return Ok(None);
        }
        let mut cls = Classified::default();
        for p in predicates {
            if let Predicate::Compare {
                left: l,
                op: CmpOp::Eq,
                right: Operand::Column(c),
            } = p
            {
                if let Err(why) = cls.add_eq(&l.column, KeyPart::LeftColumn(c.clone())) {
                    self.near_misses.push(format!("{table}: {why}"));
                    return Ok(None);
                }
            }
        }
        for p in &rpreds {
            if let Err(why) = cls.add(p, false) {
                self.near_misses.push(format!("{table}: {why}"));
                return Ok(None);
            }
        }
        let implied = pk_order(td);
        let mut access = build_access(
            self.schema,
            td,
            &cls,
            if sort.is_empty() { &implied } else { sort },
        );
        let mut ordered = true;
        if access.is_err() && sort.is_empty() && *kind == LimitKind::Limit {
            access = build_access(self.schema, td, &cls, &[]);
            ordered = false;
        }
        let access = match access {
            Ok(a) => a,
            Err(why) => {
                self.near_misses
                    .push(format!("{table}: sorted join not possible: {why}"));
                return Ok(None);
            }
        };
        let per_key_limit = match dstop {
            Some((d, attrs)) => {
                self.note_data_stop(table, attrs);
                (*count).min(d)
            }
            None => *count,
        };
        let child = self.generate(left)?;
        let output_bound = child.output_bound().saturating_mul(per_key_limit);
        let join = PhysicalPlan::SortedIndexJoin(SortedIndexJoin {
            id: 0,
            table: table.to_string(),
            access,
            per_key_limit,
            ordered,
            sort: sort.to_vec(),
            input: Box::new(child),
            output_bound,
        });
        Ok(Some(PhysicalPlan::LocalStop {
            id: 0,
            count: *count,
            kind: *kind,
            input: Box::new(join),
        }))
    }

    /// Unsafe fallback: scan every match of the indexable predicates page by
    /// page and filter the rest locally.
    fn unbounded_section(&mut self, node: &LogicalPlan) -> PhysicalPlan {
        let (table, preds) = section_parts(node).expect("section");
        let td = self.schema.table(table).expect("resolved");
        let mut cls = Classified::default();
        let mut residual = Vec::new();
        for p in &preds {
            let mut trial = Classified {
                eq: cls.eq.clone(),
                token: cls.token.clone(),
                range: cls.range.clone(),
            };
            let ok = !matches!(p, Predicate::In { .. })
                && trial.add(p, false).is_ok()
                && build_access(self.schema, td, &trial, &[]).is_ok();
            if ok {
                cls = trial;
            } else {
                residual.push((*p).clone());
            }
        }
        let access = build_access(self.schema, td, &cls, &[]).expect("checked above");
        self.unbounded = true;
        let mut plan = PhysicalPlan::IndexScan(IndexScan {
            id: 0,
            table: table.to_string(),
            access,
            limit_hint: self.opts.unsafe_page_size,
            output_bound: u64::MAX,
            unbounded: true,
            ordered: false,
        });
        for p in residual {
            plan = PhysicalPlan::LocalSelection {
                id: 0,
                predicate: p,
                input: Box::new(plan),
            };
        }
        plan
    }
}

/// Algorithm-2 style plan generation over a Phase-I logical plan.
pub fn plan_generate(
    plan: &LogicalPlan,
    schema: &Schema,
) -> Result<PhysicalPlan, NotScaleIndependent> {
    let mut g = Gen {
        schema,
        opts: CompileOptions::default(),
        near_misses: Vec::new(),
        constraint_bound: false,
        unbounded: false,
    };
    let mut p = g.generate(plan)?;
    p.renumber();
    Ok(p)
}

/// Parses nothing; runs resolution, join ordering, pushdown, Phase I,
/// Phase II, bound computation and index selection.
pub fn compile(ast: &QueryAst, schema: &Schema) -> Result<Compiled, CompileError> {
    compile_with(ast, schema, CompileOptions::default())
}

pub fn compile_with(
    ast: &QueryAst,
    schema: &Schema,
    opts: CompileOptions,
) -> Result<Compiled, CompileError> {
    let (query, pushed) = build_logical_plan(ast, schema)?;
    let logical = phase_one(pushed, schema);
    let mut g = Gen {
        schema,
        opts,
        near_misses: Vec::new(),
        constraint_bound: false,
        unbounded: false,
    };
    let mut plan = g.generate(&logical)?;
    if let Some(l) = ast.limit {
        let root_ok = matches!(&plan, PhysicalPlan::LocalStop { kind, .. } if *kind == l.kind);
        if l.kind == LimitKind::Paginate && !root_ok {
            plan = PhysicalPlan::LocalStop {
                id: 0,
                count: l.count,
                kind: l.kind,
                input: Box::new(plan),
            };
        }
    }
    plan.renumber();
    let bound = compute_operation_bound(&plan, Strategy::Parallel);
    let lazy_bound = compute_operation_bound(&plan, Strategy::Lazy);
    let report = if g.unbounded {
        ScalingClassReport {
            class: ScalingClass::Rejected,
            reason: "compiled in unsafe mode with an unbounded index scan".into(),
            suggestions: Vec::new(),
        }
    } else if g.constraint_bound {
        ScalingClassReport {
            class: ScalingClass::II,
            reason: "bounded by cardinality constraints in the schema".into(),
            suggestions: Vec::new(),
        }
    } else {
        ScalingClassReport {
            class: ScalingClass::I,
            reason: "bounded by the query's own stops and primary keys".into(),
            suggestions: Vec::new(),
        }
    };
    let indexes = select_indexes(&plan, schema);
    let new_indexes = indexes
        .iter()
        .filter(|i| {
            !schema
                .indexes
                .iter()
                .any(|s| s.table == i.table && s.fields == i.fields)
        })
        .cloned()
        .collect();
    Ok(Compiled {
        query,
        logical,
        plan,
        bound,
        lazy_bound,
        report,
        indexes,
        new_indexes,
    })
}
