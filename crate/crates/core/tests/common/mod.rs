//! Brute-force reference implementations. Nothing here calls into the
//! engine's evaluation code; only the data types are shared.

#![allow(dead_code)]

use std::cmp::Ordering;
use std::collections::BTreeMap;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution as _;
use rand::rngs::StdRng;
use rand::SeedableRng;
use scaleql::query::{AggFunc, CmpOp, ColumnRef, Operand, Predicate, Projection};
use scaleql::{Distribution64, QueryAst, Schema, Value};

/// Table name to rows, each row in declared column order.
pub type Database = BTreeMap<String, Vec<Vec<Value>>>;
/// Parameter name to value; scalars are one-element lists.
pub type Params = BTreeMap<String, Vec<Value>>;

/// Whether `word` occurs in `text` as a whole word, ignoring case. Scans
/// every position instead of splitting into tokens.
pub fn contains_word(text: &str, word: &str) -> bool {
    let text: Vec<char> = text.to_lowercase().chars().collect();
    let word: Vec<char> = word.to_lowercase().chars().collect();
    if word.is_empty() || word.len() > text.len() {
        return false;
    }
    (0..=text.len() - word.len()).any(|i| {
        text[i..i + word.len()] == word[..]
            && (i == 0 || !text[i - 1].is_alphanumeric())
            && text
                .get(i + word.len())
                .is_none_or(|c| !c.is_alphanumeric())
    })
}

struct Joined<'a> {
    /// `(table, column)` per position.
    names: Vec<(String, String)>,
    rows: Vec<Vec<&'a Value>>,
}

fn position(names: &[(String, String)], c: &ColumnRef) -> usize {
    let hits: Vec<usize> = names
        .iter()
        .enumerate()
        .filter(|(_, (t, col))| *col == c.column && c.table.as_ref().is_none_or(|want| want == t))
        .map(|(i, _)| i)
        .collect();
    assert_eq!(hits.len(), 1, "column {c} is missing or ambiguous");
    hits[0]
}

fn operand<'a>(
    row: &[&'a Value],
    names: &[(String, String)],
    o: &'a Operand,
    params: &'a Params,
) -> Vec<&'a Value> {
    match o {
        Operand::Column(c) => vec![row[position(names, c)]],
        Operand::Literal(v) => vec![v],
        Operand::Param(p) => params
            .get(&p.name)
            .map(|v| v.iter().collect())
            .unwrap_or_default(),
    }
}

fn holds(row: &[&Value], names: &[(String, String)], p: &Predicate, params: &Params) -> bool {
    match p {
        Predicate::Compare { left, op, right } => {
            let l = row[position(names, left)];
            operand(row, names, right, params)
                .iter()
                .any(|r| compare(*op, l.cmp(r)))
        }
        Predicate::TokenMatch { column, word } => match (
            row[position(names, column)],
            operand(row, names, word, params).first(),
        ) {
            (Value::Str(text), Some(Value::Str(w))) => contains_word(text, w),
            _ => false,
        },
        Predicate::In { column, list, .. } => {
            let v = row[position(names, column)];
            params.get(&list.name).is_some_and(|l| l.contains(v))
        }
    }
}

fn compare(op: CmpOp, ord: Ordering) -> bool {
    match op {
        CmpOp::Eq => ord.is_eq(),
        CmpOp::Lt => ord.is_lt(),
        CmpOp::Le => ord.is_le(),
        CmpOp::Gt => ord.is_gt(),
        CmpOp::Ge => ord.is_ge(),
    }
}

/// Evaluates `ast` by cross product, filter, sort and limit. Ties left by
/// `ORDER BY` are broken by the primary keys of `relation_order`, in the
/// direction of the first sort key. `SELECT *` lists the relations in
/// `relation_order`. `PAGINATE n` yields the first page.
pub fn naive_evaluate(
    ast: &QueryAst,
    schema: &Schema,
    db: &Database,
    params: &Params,
    relation_order: &[String],
) -> (Vec<String>, Vec<Vec<Value>>) {
    let mut joined = Joined {
        names: Vec::new(),
        rows: vec![Vec::new()],
    };
    for r in relation_order {
        let table = schema.table(r).expect("known table");
        let tuples = db.get(r).map(Vec::as_slice).unwrap_or(&[]);
        let mut next = Vec::new();
        for prefix in &joined.rows {
            for t in tuples {
                let mut row = prefix.clone();
                row.extend(t.iter());
                next.push(row);
            }
        }
        joined.rows = next;
        joined
            .names
            .extend(table.columns.iter().map(|c| (r.clone(), c.name.clone())));
    }
    let names = joined.names;
    let mut rows: Vec<Vec<&Value>> = joined
        .rows
        .into_iter()
        .filter(|row| ast.predicates.iter().all(|p| holds(row, &names, p, params)))
        .collect();

    let aggregated = !ast.group_by.is_empty()
        || ast
            .projections
            .iter()
            .any(|p| matches!(p, Projection::Aggregate { .. }));
    if aggregated {
        return aggregate(ast, &names, &rows);
    }

    let descending = ast.order_by.first().is_some_and(|k| k.descending);
    let mut keys: Vec<(usize, bool)> = ast
        .order_by
        .iter()
        .map(|k| (position(&names, &k.column), k.descending))
        .collect();
    for r in relation_order {
        for pk in &schema.table(r).unwrap().primary_key {
            keys.push((position(&names, &ColumnRef::new(r, pk)), descending));
        }
    }
    rows.sort_by(|a, b| {
        keys.iter()
            .map(|&(i, desc)| if desc { b[i].cmp(a[i]) } else { a[i].cmp(b[i]) })
            .find(|o| o.is_ne())
            .unwrap_or(Ordering::Equal)
    });
    if let Some(l) = ast.limit {
        rows.truncate(l.count as usize);
    }

    let mut columns = Vec::new();
    let mut picks = Vec::new();
    for p in &ast.projections {
        match p {
            Projection::Star => {
                for (i, (t, c)) in names.iter().enumerate() {
                    columns.push(format!("{t}.{c}"));
                    picks.push(i);
                }
            }
            Projection::Column { column } => {
                let i = position(&names, column);
                columns.push(format!("{}.{}", names[i].0, names[i].1));
                picks.push(i);
            }
            Projection::Aggregate { .. } => unreachable!(),
        }
    }
    let out = rows
        .iter()
        .map(|r| picks.iter().map(|&i| r[i].clone()).collect())
        .collect();
    (columns, out)
}

/// Grouped or global aggregation. A global aggregate over no rows yields a
/// row of zeros when every output is `COUNT` or `SUM`, and no row otherwise.
fn aggregate(
    ast: &QueryAst,
    names: &[(String, String)],
    rows: &[Vec<&Value>],
) -> (Vec<String>, Vec<Vec<Value>>) {
    let group_pos: Vec<usize> = ast.group_by.iter().map(|c| position(names, c)).collect();
    let mut groups: BTreeMap<Vec<Value>, Vec<&Vec<&Value>>> = BTreeMap::new();
    for r in rows {
        groups
            .entry(group_pos.iter().map(|&i| r[i].clone()).collect())
            .or_default()
            .push(r);
    }
    let columns = ast.projections.iter().map(ToString::to_string).collect();
    if groups.is_empty() && ast.group_by.is_empty() {
        let zeros = ast.projections.iter().all(|p| {
            matches!(
                p,
                Projection::Aggregate {
                    func: AggFunc::Count | AggFunc::Sum,
                    ..
                }
            )
        });
        let out = if zeros {
            vec![vec![Value::Int(0); ast.projections.len()]]
        } else {
            Vec::new()
        };
        return (columns, out);
    }
    let mut out = Vec::new();
    for members in groups.values() {
        let mut row = Vec::new();
        for p in &ast.projections {
            row.push(match p {
                Projection::Column { column } => members[0][position(names, column)].clone(),
                Projection::Aggregate {
                    func: AggFunc::Count,
                    ..
                } => Value::Int(members.len() as i64),
                Projection::Aggregate { func, arg: Some(c) } => {
                    let i = position(names, c);
                    let vals = members.iter().map(|m| m[i]);
                    match func {
                        AggFunc::Sum => Value::Int(
                            vals.map(|v| match v {
                                Value::Int(x) | Value::Timestamp(x) => *x,
                                other => panic!("SUM over {other:?}"),
                            })
                            .sum(),
                        ),
                        AggFunc::Min => vals.min().unwrap().clone(),
                        AggFunc::Max => vals.max().unwrap().clone(),
                        AggFunc::Count => unreachable!(),
                    }
                }
                other => panic!("unsupported projection {other}"),
            });
        }
        out.push(row);
    }
    (columns, out)
}

/// How operator latencies combine.
#[derive(Debug, Clone)]
pub enum Shape {
    /// Index into the sample sources.
    Leaf(usize),
    Serial(Vec<Shape>),
    Parallel(Vec<Shape>),
}

fn draw(shape: &Shape, sources: &[WeightedIndex<f64>], rng: &mut StdRng) -> usize {
    match shape {
        Shape::Leaf(i) => sources[*i].sample(rng),
        Shape::Serial(parts) => parts.iter().map(|p| draw(p, sources, rng)).sum(),
        Shape::Parallel(parts) => parts
            .iter()
            .map(|p| draw(p, sources, rng))
            .max()
            .unwrap_or(0),
    }
}

/// Empirical distribution of `shape` from `draws` independent samples of
/// the per-operator histograms `sources` (masses per 1 ms bin).
pub fn monte_carlo_compose(
    shape: &Shape,
    sources: &[Vec<f64>],
    draws: usize,
    seed: u64,
) -> Distribution64 {
    let samplers: Vec<WeightedIndex<f64>> = sources
        .iter()
        .map(|m| WeightedIndex::new(m).expect("valid histogram"))
        .collect();
    let mut rng = StdRng::seed_from_u64(seed);
    let mut counts: Vec<u64> = Vec::new();
    for _ in 0..draws {
        let b = draw(shape, &samplers, &mut rng);
        if counts.len() <= b {
            counts.resize(b + 1, 0);
        }
        counts[b] += 1;
    }
    Distribution64::from_counts(&counts).expect("at least one draw")
}

/// Half the L1 distance between two mass vectors.
pub fn total_variation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().max(b.len());
    (0..n)
        .map(|i| (a.get(i).unwrap_or(&0.0) - b.get(i).unwrap_or(&0.0)).abs())
        .sum::<f64>()
        / 2.0
}

pub mod gen;

/// Outcome of running one generated case through both evaluators.
#[derive(Debug)]
pub struct Comparison {
    pub sql: String,
    pub plan: String,
    pub oracle: (Vec<String>, Vec<Vec<Value>>),
    pub engine: (Vec<String>, Vec<Vec<Value>>),
    pub stats: Option<scaleql::executor::ExecutionStats>,
    /// Static `(max_requests, max_tuples)` for the strategy used.
    pub bound: (u64, u64),
}

impl Comparison {
    /// Same columns and the same bag of rows.
    pub fn agrees(&self) -> bool {
        let sorted = |rows: &[Vec<Value>]| {
            let mut r = rows.to_vec();
            r.sort();
            r
        };
        self.oracle.0 == self.engine.0 && sorted(&self.oracle.1) == sorted(&self.engine.1)
    }
}

/// Loads `db` into a fresh in-memory engine and runs `case` with `strategy`
/// and through the oracle. `None` if the query does not compile.
pub fn compare_case(
    case: &gen::Case,
    db: &Database,
    strategy: scaleql::physical::Strategy,
) -> Option<Comparison> {
    use scaleql::executor::{BoundParams, Engine, ParamValue};
    use scaleql::kvstore::MemStore;
    use std::sync::Arc;

    let schema = gen::schema();
    let ast = scaleql::parse_query(&case.sql).unwrap_or_else(|e| panic!("{}: {e}", case.sql));
    let compiled = scaleql::physical::compile(&ast, &schema).ok()?;
    let mut engine = Engine::new(Arc::new(MemStore::new()), schema.clone());
    engine.prepare(&compiled).expect("indexes");
    for (table, rows) in db {
        for r in rows {
            engine
                .insert(table, r.clone())
                .expect("generated rows satisfy the schema");
        }
    }
    let raw = compiled
        .query
        .params
        .iter()
        .map(|spec| {
            let v = &case.params[&spec.name];
            let pv = if spec.list_max.is_some() {
                ParamValue::List(v.clone())
            } else {
                ParamValue::One(v[0].clone())
            };
            (spec.name.clone(), pv)
        })
        .collect();
    let params = BoundParams::bind(&compiled.query.params, raw).expect("bindable params");
    let page = engine
        .execute(&compiled, &params, strategy)
        .unwrap_or_else(|e| panic!("{}: {e}", case.sql));
    let relations = compiled.plan.relations();
    Some(Comparison {
        sql: case.sql.clone(),
        plan: compiled.plan.label(),
        oracle: naive_evaluate(&compiled.query.ast, &schema, db, &case.params, &relations),
        engine: (page.columns, page.rows),
        stats: Some(page.stats),
        bound: {
            let b = compiled.bound_for(strategy);
            (b.max_requests, b.max_tuples)
        },
    })
}
