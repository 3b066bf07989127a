//! Name resolution, linear join ordering and predicate pushdown.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::Schema;
use crate::query::{
    AggFunc, CmpOp, ColumnRef, LimitKind, Operand, OrderKey, Param, Predicate, Projection, QueryAst,
};
use crate::value::{ColumnType, Value};

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum PlanError {
    #[error("unknown table {0}")]
    UnknownTable(String),
    #[error("relation {0} appears twice in FROM")]
    DuplicateRelation(String),
    #[error("unknown column {0}")]
    UnknownColumn(String),
    #[error("column {0} is ambiguous; qualify it with its table")]
    AmbiguousColumn(String),
    #[error("type mismatch in `{context}`: {detail}")]
    TypeMismatch { context: String, detail: String },
    #[error("relations {0} are not connected to the rest of the query by join equalities (cross products are not supported)")]
    CrossProduct(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
}

/// Declared type of a query parameter. `list_max` is set for `IN`-lists.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub ordinal: u32,
    pub name: String,
    #[serde(rename = "type")]
    pub ty: ColumnType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub list_max: Option<u32>,
}

/// A query whose column references are all qualified and type-checked.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResolvedQuery {
    pub ast: QueryAst,
    pub params: Vec<ParamSpec>,
}

struct Resolver<'a> {
    schema: &'a Schema,
    relations: &'a [String],
    params: BTreeMap<String, ParamSpec>,
}

impl Resolver<'_> {
    fn column(&self, c: &ColumnRef) -> Result<(ColumnRef, ColumnType), PlanError> {
        match &c.table {
            Some(t) => {
                if !self.relations.contains(t) {
                    return Err(PlanError::UnknownColumn(c.to_string()));
                }
                let col = self.schema.table(t).and_then(|td| td.column(&c.column));
                col.map(|cd| (c.clone(), cd.ty))
                    .ok_or_else(|| PlanError::UnknownColumn(c.to_string()))
            }
            None => {
                let hits: Vec<_> = self
                    .relations
                    .iter()
                    .filter_map(|r| self.schema.table(r)?.column(&c.column).map(|cd| (r, cd.ty)))
                    .collect();
                match hits.as_slice() {
                    [] => Err(PlanError::UnknownColumn(c.column.clone())),
                    [(r, ty)] => Ok((ColumnRef::new(r, &c.column), *ty)),
                    _ => Err(PlanError::AmbiguousColumn(c.column.clone())),
                }
            }
        }
    }

    fn param(
        &mut self,
        p: &Param,
        ty: ColumnType,
        list_max: Option<u32>,
        ctx: &str,
    ) -> Result<(), PlanError> {
        let spec = ParamSpec {
            ordinal: p.ordinal,
            name: p.name.clone(),
            ty,
            list_max,
        };
        match self.params.get(&p.name) {
            Some(prev) if prev.ty != ty || prev.list_max != list_max => {
                Err(PlanError::TypeMismatch {
                    context: ctx.to_string(),
                    detail: format!("parameter {} is used with two different types", p.name),
                })
            }
            Some(_) => Ok(()),
            None => {
                self.params.insert(p.name.clone(), spec);
                Ok(())
            }
        }
    }

    fn operand(&mut self, op: &Operand, want: ColumnType, ctx: &str) -> Result<Operand, PlanError> {
        match op {
            Operand::Column(c) => {
                let (c, ty) = self.column(c)?;
                if !compatible(ty, want) {
                    return Err(PlanError::TypeMismatch {
                        context: ctx.to_string(),
                        detail: format!("{c} is {ty}, expected {want}"),
                    });
                }
                Ok(Operand::Column(c))
            }
            Operand::Literal(v) => v.clone().coerce(want).map(Operand::Literal).ok_or_else(|| {
                PlanError::TypeMismatch {
                    context: ctx.to_string(),
                    detail: format!("literal {} is not a {want}", v.to_literal()),
                }
            }),
            Operand::Param(p) => {
                self.param(p, want, None, ctx)?;
                Ok(Operand::Param(p.clone()))
            }
        }
    }

    fn predicate(&mut self, p: &Predicate) -> Result<Predicate, PlanError> {
        let ctx = p.to_string();
        match p {
            Predicate::Compare { left, op, right } => {
                let (left, ty) = self.column(left)?;
                let right = self.operand(right, ty, &ctx)?;
                Ok(Predicate::Compare {
                    left,
                    op: *op,
                    right,
                })
            }
            Predicate::TokenMatch { column, word } => {
                let (column, ty) = self.column(column)?;
                if ty != ColumnType::String {
                    return Err(PlanError::TypeMismatch {
                        context: ctx,
                        detail: format!("{column} is not a string"),
                    });
                }
                let word = match word {
                    Operand::Column(_) => {
                        return Err(PlanError::Unsupported("LIKE against a column".into()));
                    }
                    Operand::Literal(Value::Str(w)) => {
                        Operand::Literal(Value::Str(w.to_lowercase()))
                    }
                    other => self.operand(other, ColumnType::String, &ctx)?,
                };
                Ok(Predicate::TokenMatch { column, word })
            }
            Predicate::In { column, list, max } => {
                let (column, ty) = self.column(column)?;
                self.param(list, ty, Some(*max), &ctx)?;
                Ok(Predicate::In {
                    column,
                    list: list.clone(),
                    max: *max,
                })
            }
        }
    }
}

fn compatible(a: ColumnType, b: ColumnType) -> bool {
    let norm = |t| {
        if t == ColumnType::Timestamp {
            ColumnType::Int
        } else {
            t
        }
    };
    norm(a) == norm(b)
}

/// Qualifies every column, checks literal and parameter types, and collects
/// parameter declarations.
pub fn resolve(ast: &QueryAst, schema: &Schema) -> Result<ResolvedQuery, PlanError> {
    let mut seen = BTreeSet::new();
    for r in &ast.relations {
        schema
            .table(r)
            .ok_or_else(|| PlanError::UnknownTable(r.clone()))?;
        if !seen.insert(r) {
            return Err(PlanError::DuplicateRelation(r.clone()));
        }
    }
    let mut rs = Resolver {
        schema,
        relations: &ast.relations,
        params: BTreeMap::new(),
    };
    let predicates = ast
        .predicates
        .iter()
        .map(|p| rs.predicate(p))
        .collect::<Result<Vec<_>, _>>()?;
    let group_by = ast
        .group_by
        .iter()
        .map(|c| rs.column(c).map(|x| x.0))
        .collect::<Result<Vec<_>, _>>()?;
    let order_by = ast
        .order_by
        .iter()
        .map(|k| {
            Ok(OrderKey {
                column: rs.column(&k.column)?.0,
                descending: k.descending,
            })
        })
        .collect::<Result<Vec<_>, PlanError>>()?;
    let mut projections = Vec::new();
    for p in &ast.projections {
        projections.push(match p {
            Projection::Star => Projection::Star,
            Projection::Column { column } => Projection::Column {
                column: rs.column(column)?.0,
            },
            Projection::Aggregate { func, arg } => {
                let arg = match arg {
                    None => None,
                    Some(c) => {
                        let (c, ty) = rs.column(c)?;
                        if *func == AggFunc::Sum && !compatible(ty, ColumnType::Int) {
                            return Err(PlanError::TypeMismatch {
                                context: p.to_string(),
                                detail: format!("SUM over {ty}"),
                            });
                        }
                        Some(c)
                    }
                };
                Projection::Aggregate { func: *func, arg }
            }
        });
    }
    let aggregated = ast.has_aggregates() || !group_by.is_empty();
    if aggregated {
        for p in &projections {
            match p {
                Projection::Star => {
                    return Err(PlanError::Unsupported(
                        "SELECT * together with aggregation".into(),
                    ))
                }
                Projection::Column { column } if !group_by.contains(column) => {
                    return Err(PlanError::Unsupported(format!(
                        "{column} is neither grouped nor aggregated"
                    )))
                }
                _ => {}
            }
        }
        if let Some(k) = order_by.iter().find(|k| !group_by.contains(&k.column)) {
            return Err(PlanError::Unsupported(format!(
                "ORDER BY {} must name a GROUP BY column",
                k.column
            )));
        }
    }
    let mut params: Vec<ParamSpec> = rs.params.into_values().collect();
    params.sort_by_key(|p| (p.ordinal, p.name.clone()));
    Ok(ResolvedQuery {
        ast: QueryAst {
            projections,
            relations: ast.relations.clone(),
            predicates,
            group_by,
            order_by,
            limit: ast.limit,
        },
        params,
    })
}

/// Logical operator tree. Joins are left-deep; every `Join`'s right input is
/// a relation section.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op")]
pub enum LogicalPlan {
    Scan {
        table: String,
    },
    Selection {
        predicate: Predicate,
        input: Box<LogicalPlan>,
    },
    Join {
        predicates: Vec<Predicate>,
        left: Box<LogicalPlan>,
        right: Box<LogicalPlan>,
    },
    Sort {
        keys: Vec<OrderKey>,
        input: Box<LogicalPlan>,
    },
    Stop {
        count: u64,
        kind: LimitKind,
        input: Box<LogicalPlan>,
    },
    /// At most `count` tuples per value combination of `attributes`, as
    /// guaranteed by the primary key (`count == 1`) or a cardinality limit.
    DataStop {
        count: u64,
        table: String,
        attributes: Vec<String>,
        input: Box<LogicalPlan>,
    },
    Aggregate {
        group_by: Vec<ColumnRef>,
        outputs: Vec<Projection>,
        input: Box<LogicalPlan>,
    },
}

impl LogicalPlan {
    pub fn input(&self) -> Option<&LogicalPlan> {
        match self {
            LogicalPlan::Scan { .. } | LogicalPlan::Join { .. } => None,
            LogicalPlan::Selection { input, .. }
            | LogicalPlan::Sort { input, .. }
            | LogicalPlan::Stop { input, .. }
            | LogicalPlan::DataStop { input, .. }
            | LogicalPlan::Aggregate { input, .. } => Some(input),
        }
    }

    /// Relations under this node, in join order.
    pub fn relations(&self) -> Vec<String> {
        match self {
            LogicalPlan::Scan { table } => vec![table.clone()],
            LogicalPlan::Join { left, right, .. } => {
                let mut r = left.relations();
                r.extend(right.relations());
                r
            }
            other => other
                .input()
                .map(LogicalPlan::relations)
                .unwrap_or_default(),
        }
    }

    /// One-line description of this node without its inputs.
    pub fn label(&self) -> String {
        match self {
            LogicalPlan::Scan { table } => format!("Scan({table})"),
            LogicalPlan::Selection { predicate, .. } => format!("Selection({predicate})"),
            LogicalPlan::Join { predicates, .. } => {
                let p: Vec<String> = predicates.iter().map(ToString::to_string).collect();
                format!("Join({})", p.join(" AND "))
            }
            LogicalPlan::Sort { keys, .. } => format!("Sort({})", fmt_keys(keys)),
            LogicalPlan::Stop { count, kind, .. } => {
                format!(
                    "Stop({count}, {})",
                    if *kind == LimitKind::Paginate {
                        "paginate"
                    } else {
                        "limit"
                    }
                )
            }
            LogicalPlan::DataStop {
                count,
                table,
                attributes,
                ..
            } => {
                format!("DataStop({count}, {table}({}))", attributes.join(", "))
            }
            LogicalPlan::Aggregate {
                group_by, outputs, ..
            } => {
                let o: Vec<String> = outputs.iter().map(ToString::to_string).collect();
                let g: Vec<String> = group_by.iter().map(ToString::to_string).collect();
                format!("Aggregate([{}] by [{}])", o.join(", "), g.join(", "))
            }
        }
    }

    /// Indented tree text, one node per line, children indented by two.
    pub fn pretty(&self) -> String {
        let mut out = String::new();
        self.pretty_into(&mut out, 0, &mut |_, _| false);
        out
    }

    /// Like [`pretty`](Self::pretty) but prefixes lines for which `mark`
    /// returns true with `>> `.
    pub fn pretty_marked(&self, mark: &mut dyn FnMut(&LogicalPlan, usize) -> bool) -> String {
        let mut out = String::new();
        self.pretty_into(&mut out, 0, mark);
        out
    }

    fn pretty_into(
        &self,
        out: &mut String,
        depth: usize,
        mark: &mut dyn FnMut(&LogicalPlan, usize) -> bool,
    ) {
        let line = out.lines().count();
        let prefix = if mark(self, line) { ">> " } else { "   " };
        let _ = writeln!(out, "{prefix}{}{}", "  ".repeat(depth), self.label());
        match self {
            LogicalPlan::Join { left, right, .. } => {
                left.pretty_into(out, depth + 1, mark);
                right.pretty_into(out, depth + 1, mark);
            }
            other => {
                if let Some(i) = other.input() {
                    i.pretty_into(out, depth + 1, mark);
                }
            }
        }
    }

    fn boxed(self) -> Box<LogicalPlan> {
        Box::new(self)
    }
}

impl fmt::Display for LogicalPlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for line in self.pretty().lines() {
            writeln!(f, "{}", &line[3..])?;
        }
        Ok(())
    }
}

pub(crate) fn fmt_keys(keys: &[OrderKey]) -> String {
    let k: Vec<String> = keys
        .iter()
        .map(|k| format!("{}{}", k.column, if k.descending { " DESC" } else { "" }))
        .collect();
    k.join(", ")
}

/// Tables a predicate mentions.
pub fn predicate_tables(p: &Predicate) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    out.extend(p.column().table.clone());
    if let Predicate::Compare {
        right: Operand::Column(c),
        ..
    } = p
    {
        out.extend(c.table.clone());
    }
    out
}

pub fn is_join_predicate(p: &Predicate) -> bool {
    matches!(
        p,
        Predicate::Compare {
            op: CmpOp::Eq,
            right: Operand::Column(_),
            ..
        }
    ) && predicate_tables(p).len() == 2
}

/// Attribute equal to a literal or parameter, if `p` is such a predicate.
pub fn bound_equality(p: &Predicate) -> Option<&str> {
    match p {
        Predicate::Compare {
            left,
            op: CmpOp::Eq,
            right: Operand::Literal(_) | Operand::Param(_),
        } => Some(&left.column),
        Predicate::In { column, .. } => Some(&column.column),
        _ => None,
    }
}

fn access_score(schema: &Schema, table: &str, preds: &[&Predicate]) -> u8 {
    let mine: Vec<&&Predicate> = preds
        .iter()
        .filter(|p| predicate_tables(p).len() == 1 && p.column().table.as_deref() == Some(table))
        .collect();
    let eq: BTreeSet<&str> = mine.iter().filter_map(|p| bound_equality(p)).collect();
    let t = schema.table(table).expect("resolved");
    let pk_bound = t.primary_key.iter().all(|k| eq.contains(k.as_str()));
    let constraint_bound = schema
        .constraints_on(table)
        .any(|c| c.attributes.iter().all(|a| eq.contains(a.as_str())));
    let token = mine
        .iter()
        .any(|p| matches!(p, Predicate::TokenMatch { .. }));
    if pk_bound || constraint_bound || token {
        2
    } else if mine.iter().any(|p| {
        !matches!(
            p,
            Predicate::Compare {
                right: Operand::Column(_),
                ..
            }
        )
    }) {
        1
    } else {
        0
    }
}

/// Builds the left-deep join tree with every non-join predicate stacked
/// above it (not yet pushed down), then aggregation, sort and stop.
pub fn find_linear_join_ordering(
    query: &ResolvedQuery,
    schema: &Schema,
) -> Result<LogicalPlan, PlanError> {
    let ast = &query.ast;
    let preds: Vec<&Predicate> = ast.predicates.iter().collect();
    let joins: Vec<&Predicate> = preds
        .iter()
        .copied()
        .filter(|p| is_join_predicate(p))
        .collect();

    let mut first = 0;
    let mut best = 0;
    for (i, r) in ast.relations.iter().enumerate() {
        let s = access_score(schema, r, &preds);
        if s > best {
            best = s;
            first = i;
        }
    }
    let mut order = vec![ast.relations[first].clone()];
    let mut plan = LogicalPlan::Scan {
        table: order[0].clone(),
    };
    let mut used_joins = BTreeSet::new();
    while order.len() < ast.relations.len() {
        let next = ast.relations.iter().find(|r| {
            !order.contains(r)
                && joins.iter().any(|p| {
                    let ts = predicate_tables(p);
                    ts.contains(*r) && ts.iter().any(|t| order.contains(t))
                })
        });
        let Some(next) = next else {
            let rest: Vec<&str> = ast
                .relations
                .iter()
                .filter(|r| !order.contains(r))
                .map(String::as_str)
                .collect();
            return Err(PlanError::CrossProduct(rest.join(", ")));
        };
        let mut jp = Vec::new();
        for (i, p) in joins.iter().enumerate() {
            let ts = predicate_tables(p);
            if ts.contains(next) && ts.iter().all(|t| t == next || order.contains(t)) {
                jp.push(orient_join(p, next));
                used_joins.insert(i);
            }
        }
        order.push(next.clone());
        plan = LogicalPlan::Join {
            predicates: jp,
            left: plan.boxed(),
            right: LogicalPlan::Scan {
                table: next.clone(),
            }
            .boxed(),
        };
    }
    for p in preds.iter().filter(|p| !is_join_predicate(p)) {
        plan = LogicalPlan::Selection {
            predicate: (*p).clone(),
            input: plan.boxed(),
        };
    }
    if ast.has_aggregates() || !ast.group_by.is_empty() {
        plan = LogicalPlan::Aggregate {
            group_by: ast.group_by.clone(),
            outputs: ast.projections.clone(),
            input: plan.boxed(),
        };
    }
    if !ast.order_by.is_empty() {
        plan = LogicalPlan::Sort {
            keys: ast.order_by.clone(),
            input: plan.boxed(),
        };
    }
    if let Some(l) = ast.limit {
        plan = LogicalPlan::Stop {
            count: l.count,
            kind: l.kind,
            input: plan.boxed(),
        };
    }
    Ok(plan)
}

/// Rewrites a join equality so its left column belongs to `right_table`.
fn orient_join(p: &Predicate, right_table: &str) -> Predicate {
    match p {
        Predicate::Compare {
            left,
            op,
            right: Operand::Column(c),
        } if left.table.as_deref() != Some(right_table) => Predicate::Compare {
            left: c.clone(),
            op: *op,
            right: Operand::Column(left.clone()),
        },
        other => other.clone(),
    }
}

/// Bottom-to-top placement order within one relation's selection stack.
fn selection_rank(p: &Predicate) -> u8 {
    match p {
        _ if bound_equality(p).is_some() => 0,
        Predicate::TokenMatch { .. } => 1,
        Predicate::Compare {
            right: Operand::Literal(_) | Operand::Param(_),
            ..
        } => 2,
        _ => 3,
    }
}

/// Moves every single-relation predicate directly above its scan and every
/// multi-relation predicate directly above the lowest join that sees all of
/// its relations.
pub fn predicate_push_down(plan: LogicalPlan) -> LogicalPlan {
    let mut preds = Vec::new();
    let stripped = strip_selections(plan, &mut preds);
    place(stripped, &mut preds)
}

fn strip_selections(plan: LogicalPlan, out: &mut Vec<Predicate>) -> LogicalPlan {
    match plan {
        LogicalPlan::Selection { predicate, input } => {
            out.push(predicate);
            strip_selections(*input, out)
        }
        LogicalPlan::Join {
            predicates,
            left,
            right,
        } => LogicalPlan::Join {
            predicates,
            left: strip_selections(*left, out).boxed(),
            right: strip_selections(*right, out).boxed(),
        },
        LogicalPlan::Scan { .. } => plan,
        LogicalPlan::Sort { keys, input } => LogicalPlan::Sort {
            keys,
            input: strip_selections(*input, out).boxed(),
        },
        LogicalPlan::Stop { count, kind, input } => LogicalPlan::Stop {
            count,
            kind,
            input: strip_selections(*input, out).boxed(),
        },
        LogicalPlan::DataStop {
            count,
            table,
            attributes,
            input,
        } => LogicalPlan::DataStop {
            count,
            table,
            attributes,
            input: strip_selections(*input, out).boxed(),
        },
        LogicalPlan::Aggregate {
            group_by,
            outputs,
            input,
        } => LogicalPlan::Aggregate {
            group_by,
            outputs,
            input: strip_selections(*input, out).boxed(),
        },
    }
}

fn place(plan: LogicalPlan, preds: &mut Vec<Predicate>) -> LogicalPlan {
    match plan {
        LogicalPlan::Scan { table } => {
            let mut mine: Vec<Predicate> = Vec::new();
            preds.retain(|p| {
                let ts = predicate_tables(p);
                if ts.len() == 1 && ts.contains(&table) {
                    mine.push(p.clone());
                    false
                } else {
                    true
                }
            });
            mine.sort_by_key(selection_rank);
            let mut node = LogicalPlan::Scan { table };
            for p in mine {
                node = LogicalPlan::Selection {
                    predicate: p,
                    input: node.boxed(),
                };
            }
            node
        }
        LogicalPlan::Join {
            predicates,
            left,
            right,
        } => {
            let left = place(*left, preds);
            let right = place(*right, preds);
            let mut node = LogicalPlan::Join {
                predicates,
                left: left.boxed(),
                right: right.boxed(),
            };
            let visible: BTreeSet<String> = node.relations().into_iter().collect();
            let mut here = Vec::new();
            preds.retain(|p| {
                if predicate_tables(p).is_subset(&visible) {
                    here.push(p.clone());
                    false
                } else {
                    true
                }
            });
            for p in here {
                node = LogicalPlan::Selection {
                    predicate: p,
                    input: node.boxed(),
                };
            }
            node
        }
        LogicalPlan::Selection { .. } => unreachable!("selections were stripped"),
        LogicalPlan::Sort { keys, input } => LogicalPlan::Sort {
            keys,
            input: place(*input, preds).boxed(),
        },
        LogicalPlan::Stop { count, kind, input } => LogicalPlan::Stop {
            count,
            kind,
            input: place(*input, preds).boxed(),
        },
        LogicalPlan::DataStop {
            count,
            table,
            attributes,
            input,
        } => LogicalPlan::DataStop {
            count,
            table,
            attributes,
            input: place(*input, preds).boxed(),
        },
        LogicalPlan::Aggregate {
            group_by,
            outputs,
            input,
        } => LogicalPlan::Aggregate {
            group_by,
            outputs,
            input: place(*input, preds).boxed(),
        },
    }
}

/// Runs name resolution, join ordering and predicate pushdown.
pub fn build_logical_plan(
    ast: &QueryAst,
    schema: &Schema,
) -> Result<(ResolvedQuery, LogicalPlan), PlanError> {
    let resolved = resolve(ast, schema)?;
    let ordered = find_linear_join_ordering(&resolved, schema)?;
    Ok((resolved, predicate_push_down(ordered)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::parse_ddl;
    use crate::query::parse_query;

    fn schema() -> Schema {
        parse_ddl(
            "CREATE TABLE Subscriptions (ownerUserId VARCHAR(255), targetUserId VARCHAR(255), approved BOOLEAN,
               PRIMARY KEY (ownerUserId, targetUserId), CARDINALITY LIMIT 100 (ownerUserId))
             CREATE TABLE Thoughts (username VARCHAR(255), timestamp TIMESTAMP, text VARCHAR(140),
               PRIMARY KEY (username, timestamp))",
        )
        .unwrap()
    }

    const THOUGHTSTREAM: &str = "SELECT * FROM Thoughts, Subscriptions
        WHERE Thoughts.username = Subscriptions.targetUserId
          AND Subscriptions.approved = true AND Subscriptions.ownerUserId = [1: username]
        ORDER BY Thoughts.timestamp DESC PAGINATE 10";

    #[test]
    fn bound_relation_goes_first_and_predicates_sink() {
        let (_, plan) =
            build_logical_plan(&parse_query(THOUGHTSTREAM).unwrap(), &schema()).unwrap();
        let text = plan.to_string();
        let expected = "\
Stop(10, paginate)
  Sort(Thoughts.timestamp DESC)
    Join(Thoughts.username = Subscriptions.targetUserId)
      Selection(Subscriptions.approved = TRUE)
        Selection(Subscriptions.ownerUserId = [1: username])
          Scan(Subscriptions)
      Scan(Thoughts)
";
        assert_eq!(text, expected);
    }

    #[test]
    fn single_relation_is_trivial() {
        let (_, plan) = build_logical_plan(
            &parse_query("SELECT * FROM Thoughts WHERE username = 'a'").unwrap(),
            &schema(),
        )
        .unwrap();
        assert_eq!(
            plan.to_string(),
            "Selection(Thoughts.username = 'a')\n  Scan(Thoughts)\n"
        );
    }

    #[test]
    fn resolution_errors() {
        let s = schema();
        let err = |q: &str| build_logical_plan(&parse_query(q).unwrap(), &s).unwrap_err();
        assert!(matches!(
            err("SELECT * FROM Nope"),
            PlanError::UnknownTable(_)
        ));
        assert!(matches!(
            err("SELECT * FROM Thoughts WHERE zz = 1"),
            PlanError::UnknownColumn(_)
        ));
        assert!(matches!(
            err("SELECT * FROM Thoughts WHERE username = 3"),
            PlanError::TypeMismatch { .. }
        ));
        assert!(matches!(
            err("SELECT * FROM Thoughts, Subscriptions"),
            PlanError::CrossProduct(_)
        ));
        assert!(matches!(
            err("SELECT * FROM Thoughts, Thoughts"),
            PlanError::DuplicateRelation(_)
        ));
    }

    #[test]
    fn params_are_typed() {
        let (r, _) = build_logical_plan(&parse_query(THOUGHTSTREAM).unwrap(), &schema()).unwrap();
        assert_eq!(
            r.params,
            vec![ParamSpec {
                ordinal: 1,
                name: "username".into(),
                ty: ColumnType::String,
                list_max: None
            }]
        );
    }
}
