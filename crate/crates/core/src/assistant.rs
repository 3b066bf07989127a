//! Compile-time advice: why a query was rejected, which cardinality limits
//! would make it bounded, and which limit values meet a latency objective.

use std::collections::BTreeSet;
use std::fmt;

use serde::Serialize;
use thiserror::Error;

use crate::catalog::{CardinalityConstraint, Schema};
use crate::logical::build_logical_plan;
use crate::physical::{compile, NotScaleIndependent, ScalingClass};
use crate::query::{CmpOp, Operand, Predicate, QueryAst};
use crate::slo::{heatmap, Axis, Heatmap, ModelSet, PredictError, SloSpec};
use crate::stops::phase_one;

/// Limit used when testing whether a constraint would make a query bounded.
const PROBE_LIMIT: u64 = 100;
/// Largest attribute set tried as a suggestion.
const MAX_SUGGESTION_WIDTH: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Suggestion {
    pub table: String,
    pub attributes: Vec<String>,
}

impl fmt::Display for Suggestion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "CARDINALITY LIMIT <n> ({}) on {}",
            self.attributes.join(", "),
            self.table
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagnosis {
    pub class: ScalingClass,
    pub relation: Option<String>,
    pub reason: String,
    pub near_misses: Vec<String>,
    /// The logical plan after stop placement; lines of the unmatched
    /// section start with `>> `.
    pub plan: String,
    /// Half-open line ranges of `plan` that are highlighted.
    pub highlighted: Vec<(usize, usize)>,
    pub suggestions: Vec<Suggestion>,
    pub advice: Vec<String>,
}

impl Diagnosis {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("diagnosis serializes")
    }
}

impl fmt::Display for Diagnosis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "error: Not scale-independent: {}", self.reason)?;
        if let Some(r) = &self.relation {
            writeln!(f, "  relation: {r}")?;
        }
        writeln!(f, "  scaling class: {}", self.class)?;
        writeln!(f, "  plan:")?;
        for line in self.plan.lines() {
            writeln!(f, "    {line}")?;
        }
        for m in &self.near_misses {
            writeln!(f, "  note: {m}")?;
        }
        if self.suggestions.is_empty() {
            writeln!(
                f,
                "  help: no candidate attributes; add a selective equality predicate or LIMIT"
            )?;
        }
        for s in &self.suggestions {
            writeln!(f, "  help: add {s}")?;
        }
        for a in &self.advice {
            writeln!(f, "  help: {a}")?;
        }
        Ok(())
    }
}

/// Columns of `table` that the query fixes with an equality or `IN`-list,
/// and the subset fixed by something other than a literal. A limit keyed
/// only on literal-bound columns caps the whole table, so suggestions must
/// include at least one of the latter.
fn bindable_attributes(ast: &QueryAst, table: &str) -> (Vec<String>, BTreeSet<String>) {
    let mut out = BTreeSet::new();
    let mut varying = BTreeSet::new();
    let on = |c: &crate::query::ColumnRef| c.table.as_deref() == Some(table);
    for p in &ast.predicates {
        match p {
            Predicate::Compare {
                left,
                op: CmpOp::Eq,
                right,
            } => {
                if on(left) {
                    out.insert(left.column.clone());
                    if !matches!(right, Operand::Literal(_)) {
                        varying.insert(left.column.clone());
                    }
                }
                if let Operand::Column(r) = right {
                    if on(r) {
                        out.insert(r.column.clone());
                        varying.insert(r.column.clone());
                    }
                }
            }
            Predicate::In { column, .. } if on(column) => {
                out.insert(column.column.clone());
                varying.insert(column.column.clone());
            }
            _ => {}
        }
    }
    (out.into_iter().collect(), varying)
}

fn subsets(items: &[String], max: usize) -> Vec<Vec<String>> {
    let mut out: Vec<Vec<String>> = vec![Vec::new()];
    for it in items {
        let more: Vec<Vec<String>> = out
            .iter()
            .filter(|s| s.len() < max)
            .map(|s| s.iter().cloned().chain([it.clone()]).collect())
            .collect();
        out.extend(more);
    }
    out.retain(|s| !s.is_empty());
    out.sort_by_key(Vec::len);
    out
}

/// Minimal attribute sets of `table` whose constraint lets `ast` compile.
fn sufficient_sets(ast: &QueryAst, schema: &Schema, table: &str) -> Vec<Suggestion> {
    let Some(t) = schema.table(table) else {
        return Vec::new();
    };
    let mut found: Vec<Suggestion> = Vec::new();
    let (attributes, varying) = bindable_attributes(ast, table);
    for attrs in subsets(&attributes, MAX_SUGGESTION_WIDTH) {
        if !attrs.iter().any(|a| varying.contains(a)) {
            continue;
        }
        if found
            .iter()
            .any(|f| f.attributes.iter().all(|a| attrs.contains(a)))
        {
            continue;
        }
        let pk: BTreeSet<&String> = t.primary_key.iter().collect();
        if attrs.iter().collect::<BTreeSet<_>>() == pk {
            continue;
        }
        let mut s = schema.clone();
        let constraint = CardinalityConstraint {
            table: table.to_string(),
            attributes: attrs.clone(),
            limit: PROBE_LIMIT,
        };
        if s.set_constraint(constraint).is_ok() && compile(ast, &s).is_ok() {
            found.push(Suggestion {
                table: table.to_string(),
                attributes: attrs,
            });
        }
    }
    found
}

/// Explains a rejection and lists constraints that would fix it.
pub fn diagnose(ast: &QueryAst, error: &NotScaleIndependent, schema: &Schema) -> Diagnosis {
    let (plan, highlighted) = match build_logical_plan(ast, schema) {
        Ok((_, logical)) => highlight(&phase_one(logical, schema), &error.section),
        Err(_) => (error.section.pretty(), Vec::new()),
    };
    let mut suggestions = Vec::new();
    if let Some(r) = &error.relation {
        suggestions = sufficient_sets(ast, schema, r);
    }
    if suggestions.is_empty() {
        for r in &ast.relations {
            if Some(r) != error.relation.as_ref() {
                suggestions.extend(sufficient_sets(ast, schema, r));
            }
        }
    }
    let mut advice = Vec::new();
    let two_ranges = error
        .near_misses
        .iter()
        .any(|m| m.contains("at most one attribute"));
    if two_ranges {
        advice.push(
            "index ranges must be contiguous, so inequalities may constrain only one attribute; \
             keep one range condition and split the others into a separate query or client-side filter"
                .into(),
        );
    }
    Diagnosis {
        class: ScalingClass::Rejected,
        relation: error.relation.clone(),
        reason: error.reason.clone(),
        near_misses: error.near_misses.clone(),
        plan,
        highlighted,
        suggestions,
        advice,
    }
}

/// Renders `plan` with the lines of `section` marked.
fn highlight(
    plan: &crate::logical::LogicalPlan,
    section: &crate::logical::LogicalPlan,
) -> (String, Vec<(usize, usize)>) {
    let mut start = None;
    let _ = plan.pretty_marked(&mut |node, line| {
        if start.is_none() && node == section {
            start = Some(line);
        }
        false
    });
    let Some(start) = start else {
        return (plan.pretty(), Vec::new());
    };
    let end = start + section.pretty().lines().count();
    let text = plan.pretty_marked(&mut |_, line| (start..end).contains(&line));
    (text, vec![(start, end)])
}

#[derive(Debug, Error)]
pub enum RecommendError {
    #[error("no grid cell meets the objective; nearest miss {row}={row_value}, {col}={col_value} at {quantile_ms} ms")]
    Infeasible {
        row: String,
        row_value: u64,
        col: String,
        col_value: u64,
        quantile_ms: usize,
        heatmap: Box<Heatmap>,
    },
    #[error(transparent)]
    Predict(#[from] PredictError),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Recommendation {
    /// Pareto-maximal feasible `(row value, column value)` pairs.
    pub frontier: Vec<(u64, u64)>,
    /// Threshold minus the predicted quantile, per frontier cell.
    pub margins_ms: Vec<f64>,
    pub heatmap: Heatmap,
}

/// Feasible cells of a grid that no other feasible cell dominates in both
/// coordinates.
pub fn pareto_frontier(heatmap: &Heatmap, threshold_ms: f64) -> Vec<(usize, usize)> {
    let feasible: Vec<(usize, usize)> = (0..heatmap.rows.values.len())
        .flat_map(|r| (0..heatmap.cols.values.len()).map(move |c| (r, c)))
        .filter(|&(r, c)| heatmap.cells[r][c] as f64 <= threshold_ms)
        .collect();
    let (rv, cv) = (&heatmap.rows.values, &heatmap.cols.values);
    feasible
        .iter()
        .copied()
        .filter(|&(r, c)| {
            !feasible.iter().any(|&(r2, c2)| {
                rv[r2] >= rv[r] && cv[c2] >= cv[c] && (rv[r2] > rv[r] || cv[c2] > cv[c])
            })
        })
        .collect()
}

/// Grid search for the largest limits whose predicted quantile meets `slo`.
pub fn recommend_limits(
    ast: &QueryAst,
    schema: &Schema,
    slo: &SloSpec,
    models: &ModelSet,
    rows: Axis,
    cols: Axis,
) -> Result<Recommendation, RecommendError> {
    let map = heatmap(ast, schema, rows, cols, models, slo.quantile)?;
    let frontier = pareto_frontier(&map, slo.threshold_ms);
    if frontier.is_empty() {
        let (r, c) = (0..map.rows.values.len())
            .flat_map(|r| (0..map.cols.values.len()).map(move |c| (r, c)))
            .min_by_key(|&(r, c)| map.cells[r][c])
            .expect("non-empty grid");
        return Err(RecommendError::Infeasible {
            row: map.rows.param.to_string(),
            row_value: map.rows.values[r],
            col: map.cols.param.to_string(),
            col_value: map.cols.values[c],
            quantile_ms: map.cells[r][c],
            heatmap: Box::new(map),
        });
    }
    let margins_ms = frontier
        .iter()
        .map(|&(r, c)| slo.threshold_ms - map.cells[r][c] as f64)
        .collect();
    Ok(Recommendation {
        frontier: frontier
            .iter()
            .map(|&(r, c)| (map.rows.values[r], map.cols.values[c]))
            .collect(),
        margins_ms,
        heatmap: map,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{query, scadr_schema, THOUGHTSTREAM};
    use crate::physical::CompileError;
    use crate::slo::GridParam;

    fn rejection(q: &str, schema: &Schema) -> NotScaleIndependent {
        match compile(&query(q), schema) {
            Err(CompileError::NotScaleIndependent(e)) => e,
            other => panic!("expected rejection, got {other:?}"),
        }
    }

    #[test]
    fn thoughtstream_needs_a_subscription_limit() {
        let mut s = scadr_schema();
        s.remove_constraint("Subscriptions", &["ownerUserId"]);
        let d = diagnose(&query(THOUGHTSTREAM), &rejection(THOUGHTSTREAM, &s), &s);
        assert_eq!(
            d.suggestions,
            vec![Suggestion {
                table: "Subscriptions".into(),
                attributes: vec!["ownerUserId".into()]
            }]
        );
        assert!(d.plan.lines().any(|l| l.starts_with(">> ")), "{}", d.plan);
        assert!(d
            .to_string()
            .contains("CARDINALITY LIMIT <n> (ownerUserId) on Subscriptions"));
    }

    #[test]
    fn full_scan_has_no_candidates() {
        let s = scadr_schema();
        let q = "SELECT * FROM Users";
        let d = diagnose(&query(q), &rejection(q, &s), &s);
        assert!(d.suggestions.is_empty());
        assert_eq!(d.class, ScalingClass::Rejected);
        assert!(d
            .to_string()
            .contains("no candidate attributes; add a selective equality predicate or LIMIT"));
    }

    #[test]
    fn double_inequality_cites_contiguity() {
        let s = scadr_schema();
        let q =
            "SELECT * FROM Thoughts WHERE username = 'a' AND timestamp > 5 AND text < 'm' LIMIT 5";
        let d = diagnose(&query(q), &rejection(q, &s), &s);
        assert!(d.advice.iter().any(|a| a.contains("contiguous")), "{d}");
    }

    #[test]
    fn frontier_of_a_staircase() {
        let map = Heatmap {
            quantile: 0.99,
            rows: Axis {
                param: GridParam::PageSize,
                values: vec![1, 2, 3],
            },
            cols: Axis {
                param: GridParam::PageSize,
                values: vec![10, 20, 30],
            },
            cells: vec![vec![1, 2, 3], vec![2, 3, 9], vec![3, 9, 9]],
        };
        assert_eq!(pareto_frontier(&map, 3.0), vec![(0, 2), (1, 1), (2, 0)]);
        assert_eq!(pareto_frontier(&map, 100.0), vec![(2, 2)]);
        assert!(pareto_frontier(&map, 0.0).is_empty());
    }
}
