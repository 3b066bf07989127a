//! Query latency prediction, SLO checks and cardinality heatmaps.

use std::fmt;
use std::str::FromStr;

use serde::Serialize;
use thiserror::Error;

use super::model::{IntervalModels, ModelError, ModelSet};
use super::Distribution;
use crate::catalog::{CardinalityConstraint, Schema};
use crate::physical::{compile, CompileError, PhysicalPlan};
use crate::query::QueryAst;

#[derive(Debug, Error)]
pub enum PredictError {
    #[error("operator {id} ({label}): {source}")]
    Model {
        id: u32,
        label: String,
        source: ModelError,
    },
    #[error("grid cell {row}={row_value}, {col}={col_value}: {source}")]
    Compile {
        row: String,
        row_value: u64,
        col: String,
        col_value: u64,
        source: Box<CompileError>,
    },
    #[error("grid cell {row}={row_value}, {col}={col_value}: {source}")]
    Cell {
        row: String,
        row_value: u64,
        col: String,
        col_value: u64,
        source: Box<PredictError>,
    },
    #[error("{0}")]
    Grid(String),
}

/// Latency of a plan shape: operators run one after another or side by
/// side.
#[derive(Debug, Clone)]
pub enum Composition {
    Operator(Distribution<f64>),
    Serial(Vec<Composition>),
    Parallel(Vec<Composition>),
}

impl Composition {
    pub fn evaluate(&self) -> Distribution<f64> {
        match self {
            Composition::Operator(d) => d.clone(),
            Composition::Serial(parts) => fold(parts, |a, b| a.convolve(b)),
            Composition::Parallel(parts) => fold(parts, |a, b| a.max_combine(b)),
        }
    }
}

fn fold(
    parts: &[Composition],
    f: impl Fn(&Distribution<f64>, &Distribution<f64>) -> Distribution<f64>,
) -> Distribution<f64> {
    parts
        .iter()
        .map(Composition::evaluate)
        .reduce(|a, b| f(&a, &b))
        .unwrap_or_else(|| Distribution::delta(0))
}

/// The remote operators of `plan`, leaf first, each with its model. Local
/// operators cost nothing.
pub fn plan_composition(
    plan: &PhysicalPlan,
    schema: &Schema,
    models: &ModelSet,
) -> Result<Composition, PredictError> {
    let mut parts = Vec::new();
    for node in plan.nodes().into_iter().rev() {
        let Some((kind, alpha, beta)) = node.model_key(schema) else {
            continue;
        };
        let model = models
            .lookup(kind, alpha, beta)
            .map_err(|source| PredictError::Model {
                id: node.id(),
                label: node.label(),
                source,
            })?;
        parts.push(Composition::Operator(model.distribution()));
    }
    Ok(Composition::Serial(parts))
}

pub fn predict_query(
    plan: &PhysicalPlan,
    schema: &Schema,
    models: &ModelSet,
) -> Result<Distribution<f64>, PredictError> {
    Ok(plan_composition(plan, schema, models)?.evaluate())
}

/// Per-interval quantile predictions. Intervals whose models cannot serve
/// the plan are listed in `skipped`.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct PercentileSeries {
    pub quantile: f64,
    pub values: Vec<(i64, usize)>,
    pub skipped: Vec<(i64, String)>,
}

impl PercentileSeries {
    /// The conservative headline figure.
    pub fn max(&self) -> Option<usize> {
        self.values.iter().map(|v| v.1).max()
    }

    /// Empirical distribution of the per-interval quantiles.
    pub fn distribution(&self) -> Option<Distribution<f64>> {
        let samples: Vec<f64> = self.values.iter().map(|v| v.1 as f64).collect();
        Distribution::from_samples(&samples, super::DEFAULT_CEILING_MS)
    }
}

pub fn percentile_series(
    plan: &PhysicalPlan,
    schema: &Schema,
    models: &IntervalModels,
    quantile: f64,
) -> PercentileSeries {
    let mut out = PercentileSeries {
        quantile,
        ..Default::default()
    };
    for interval in &models.intervals {
        match predict_query(plan, schema, &interval.models) {
            Ok(d) => out.values.push((interval.index, d.quantile(quantile))),
            Err(e) => {
                log::warn!("interval {} skipped: {e}", interval.index);
                out.skipped.push((interval.index, e.to_string()));
            }
        }
    }
    out
}

/// `quantile` of the latencies in each interval must stay at or below
/// `threshold_ms` in at least `compliance` of the intervals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SloSpec {
    pub quantile: f64,
    pub threshold_ms: f64,
    pub interval_ms: f64,
    pub compliance: f64,
}

impl Default for SloSpec {
    fn default() -> Self {
        SloSpec {
            quantile: 0.99,
            threshold_ms: 500.0,
            interval_ms: 600_000.0,
            compliance: 1.0,
        }
    }
}

/// `250ms`, `2s`, `10m`, `1h`, or a bare number of milliseconds.
pub fn parse_duration_ms(s: &str) -> Option<f64> {
    let s = s.trim();
    let (num, scale) = if let Some(n) = s.strip_suffix("ms") {
        (n, 1.0)
    } else if let Some(n) = s.strip_suffix('s') {
        (n, 1000.0)
    } else if let Some(n) = s.strip_suffix('m') {
        (n, 60_000.0)
    } else if let Some(n) = s.strip_suffix('h') {
        (n, 3_600_000.0)
    } else {
        (s, 1.0)
    };
    num.trim()
        .parse::<f64>()
        .ok()
        .filter(|v| *v >= 0.0)
        .map(|v| v * scale)
}

/// `q=0.99,t=500ms,interval=10m[,fraction=0.9]`.
impl FromStr for SloSpec {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        let mut spec = SloSpec::default();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| format!("expected key=value, got {part:?}"))?;
            let bad = || format!("bad value for {k}: {v:?}");
            match k.trim() {
                "q" | "quantile" => spec.quantile = v.parse().map_err(|_| bad())?,
                "t" | "threshold" => spec.threshold_ms = parse_duration_ms(v).ok_or_else(bad)?,
                "interval" => spec.interval_ms = parse_duration_ms(v).ok_or_else(bad)?,
                "fraction" | "compliance" => spec.compliance = v.parse().map_err(|_| bad())?,
                other => return Err(format!("unknown SLO field {other:?}")),
            }
        }
        if !(0.0..=1.0).contains(&spec.quantile)
            || !(0.0..=1.0).contains(&spec.compliance)
            || spec.interval_ms <= 0.0
        {
            return Err(
                "quantile and fraction must lie in [0, 1] and the interval must be positive".into(),
            );
        }
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SloVerdict {
    pub pass: bool,
    /// Threshold minus the largest interval quantile.
    pub margin_ms: f64,
    pub compliant: usize,
    pub intervals: usize,
}

impl fmt::Display for SloVerdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} margin={}ms compliant={}/{}",
            if self.pass { "PASS" } else { "FAIL" },
            self.margin_ms,
            self.compliant,
            self.intervals
        )
    }
}

/// Verdict over a series computed at the SLO's quantile.
pub fn verdict(series: &PercentileSeries, slo: &SloSpec) -> SloVerdict {
    let intervals = series.values.len();
    let compliant = series
        .values
        .iter()
        .filter(|v| v.1 as f64 <= slo.threshold_ms)
        .count();
    let worst = series.max().map_or(0.0, |m| m as f64);
    let pass = intervals > 0 && compliant as f64 >= slo.compliance * intervals as f64 - 1e-9;
    SloVerdict {
        pass,
        margin_ms: slo.threshold_ms - worst,
        compliant,
        intervals,
    }
}

pub fn check_slo(
    plan: &PhysicalPlan,
    schema: &Schema,
    models: &IntervalModels,
    slo: &SloSpec,
) -> SloVerdict {
    verdict(&percentile_series(plan, schema, models, slo.quantile), slo)
}

/// A heatmap dimension.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum GridParam {
    /// The limit of a cardinality constraint.
    Constraint {
        table: String,
        attributes: Vec<String>,
    },
    /// The query's LIMIT or PAGINATE count.
    PageSize,
}

impl GridParam {
    /// `limit`/`page` for the page size; `Table.attr[+attr...]` for a
    /// constraint.
    pub fn parse(name: &str) -> Result<Self, String> {
        if matches!(name, "limit" | "page" | "page_size") {
            return Ok(GridParam::PageSize);
        }
        let (table, attrs) = name
            .split_once('.')
            .ok_or_else(|| format!("grid axis {name:?}: expected limit or Table.attr"))?;
        Ok(GridParam::Constraint {
            table: table.into(),
            attributes: attrs.split('+').map(str::to_string).collect(),
        })
    }
}

impl fmt::Display for GridParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GridParam::PageSize => f.write_str("limit"),
            GridParam::Constraint { table, attributes } => {
                write!(f, "{table}.{}", attributes.join("+"))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Axis {
    pub param: GridParam,
    pub values: Vec<u64>,
}

/// Predicted quantile (ms) per cell; `cells[r][c]` pairs `rows.values[r]`
/// with `cols.values[c]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Heatmap {
    pub quantile: f64,
    pub rows: Axis,
    pub cols: Axis,
    pub cells: Vec<Vec<usize>>,
}

impl Heatmap {
    pub fn to_csv(&self) -> String {
        let mut out = format!("{}\\{}", self.rows.param, self.cols.param);
        for c in &self.cols.values {
            out.push_str(&format!(",{c}"));
        }
        out.push('\n');
        for (r, row) in self.rows.values.iter().zip(&self.cells) {
            out.push_str(&r.to_string());
            for v in row {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }
}

/// `ast` and `schema` with the grid parameters set.
pub fn with_settings(
    ast: &QueryAst,
    schema: &Schema,
    settings: &[(&GridParam, u64)],
) -> Result<(QueryAst, Schema), String> {
    let mut ast = ast.clone();
    let mut schema = schema.clone();
    for (param, value) in settings {
        match param {
            GridParam::PageSize => match ast.limit.as_mut() {
                Some(l) => l.count = *value,
                None => return Err("the query has no LIMIT or PAGINATE to vary".into()),
            },
            GridParam::Constraint { table, attributes } => schema
                .set_constraint(CardinalityConstraint {
                    table: table.clone(),
                    attributes: attributes.clone(),
                    limit: *value,
                })
                .map_err(|e| e.to_string())?,
        }
    }
    Ok((ast, schema))
}

/// Recompiles the query for every cell and predicts its quantile.
pub fn heatmap(
    ast: &QueryAst,
    schema: &Schema,
    rows: Axis,
    cols: Axis,
    models: &ModelSet,
    quantile: f64,
) -> Result<Heatmap, PredictError> {
    let mut cells = Vec::with_capacity(rows.values.len());
    for &r in &rows.values {
        let mut line = Vec::with_capacity(cols.values.len());
        for &c in &cols.values {
            let (a, s) = with_settings(ast, schema, &[(&rows.param, r), (&cols.param, c)])
                .map_err(PredictError::Grid)?;
            let (row, col) = (rows.param.to_string(), cols.param.to_string());
            let compiled = match compile(&a, &s) {
                Ok(c) => c,
                Err(e) => {
                    return Err(PredictError::Compile {
                        row,
                        row_value: r,
                        col,
                        col_value: c,
                        source: Box::new(e),
                    })
                }
            };
            let d = predict_query(&compiled.plan, &s, models).map_err(|e| PredictError::Cell {
                row,
                row_value: r,
                col,
                col_value: c,
                source: Box::new(e),
            })?;
            line.push(d.quantile(quantile));
        }
        cells.push(line);
    }
    Ok(Heatmap {
        quantile,
        rows,
        cols,
        cells,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kvstore::latency::Alpha;
    use crate::slo::model::{ModelKey, OperatorModel};

    fn delta_model(kind: &str, alpha: Alpha, beta: u64, ms: usize) -> OperatorModel {
        let mut bins = vec![0; ms + 1];
        bins[ms] = 10;
        OperatorModel {
            key: ModelKey::new(kind, alpha, beta),
            bins,
        }
    }

    #[test]
    fn serial_sums_and_parallel_maxes() {
        let a = Composition::Operator(Distribution::delta(5));
        let b = Composition::Operator(Distribution::delta(7));
        assert_eq!(
            Composition::Serial(vec![a.clone(), b.clone()]).evaluate(),
            Distribution::delta(12)
        );
        assert_eq!(
            Composition::Parallel(vec![a, b]).evaluate(),
            Distribution::delta(7)
        );
    }

    #[test]
    fn slo_spec_parses() {
        let s: SloSpec = "q=0.99,t=500ms,interval=10m".parse().unwrap();
        assert_eq!(
            s,
            SloSpec {
                quantile: 0.99,
                threshold_ms: 500.0,
                interval_ms: 600_000.0,
                compliance: 1.0
            }
        );
        let s: SloSpec = "q=0.9, t=1s, interval=30s, fraction=0.5".parse().unwrap();
        assert_eq!(
            (s.threshold_ms, s.interval_ms, s.compliance),
            (1000.0, 30_000.0, 0.5)
        );
        assert!("q=2".parse::<SloSpec>().is_err());
        assert!("x=1".parse::<SloSpec>().is_err());
    }

    #[test]
    fn verdict_margins() {
        let slo = SloSpec::default();
        let pass = verdict(
            &PercentileSeries {
                quantile: 0.99,
                values: vec![(0, 100)],
                skipped: vec![],
            },
            &slo,
        );
        assert!(pass.pass);
        assert_eq!(pass.margin_ms, 400.0);
        let fail = verdict(
            &PercentileSeries {
                quantile: 0.99,
                values: vec![(0, 600)],
                skipped: vec![],
            },
            &slo,
        );
        assert!(!fail.pass);
    }

    #[test]
    fn single_scan_plan_predicts_its_model() {
        let schema = crate::fixtures::scadr_schema();
        let c = compile(
            &crate::fixtures::query(crate::fixtures::RECENT_THOUGHTS),
            &schema,
        )
        .unwrap();
        let (kind, alpha, beta) = c
            .plan
            .nodes()
            .iter()
            .find_map(|n| n.model_key(&schema))
            .unwrap();
        let mut set = ModelSet::default();
        set.insert(delta_model(kind, alpha, beta, 9));
        assert_eq!(
            predict_query(&c.plan, &schema, &set).unwrap(),
            Distribution::delta(9)
        );
    }

    #[test]
    fn thoughtstream_convolves_two_models() {
        let schema = crate::fixtures::scadr_schema();
        let c = compile(
            &crate::fixtures::query(crate::fixtures::THOUGHTSTREAM),
            &schema,
        )
        .unwrap();
        let keys: Vec<_> = c
            .plan
            .nodes()
            .iter()
            .filter_map(|n| n.model_key(&schema))
            .collect();
        assert_eq!(keys.len(), 2);
        let mut set = ModelSet::default();
        for (i, (kind, alpha, beta)) in keys.iter().enumerate() {
            set.insert(delta_model(kind, *alpha, *beta, 3 + 10 * i));
        }
        let Composition::Serial(parts) = plan_composition(&c.plan, &schema, &set).unwrap() else {
            panic!()
        };
        assert_eq!(parts.len(), 2);
        assert_eq!(
            predict_query(&c.plan, &schema, &set).unwrap(),
            Distribution::delta(16)
        );
        let err = predict_query(&c.plan, &schema, &ModelSet::default()).unwrap_err();
        assert!(err.to_string().contains("IndexScan"), "{err}");
    }
}
