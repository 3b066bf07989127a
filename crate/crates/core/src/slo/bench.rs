//! Operator benchmarks: run each remote operator at a chosen cardinality and
//! tuple size against a latency-injecting store, and record its latency.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::parse_ddl;
use crate::executor::{BoundParams, Engine, ExecError, ParamValue, WriteError};
use crate::kvstore::latency::{Alpha, LatencyProfile, LatencyStore, SimClock, TraceRow};
use crate::kvstore::MemStore;
use crate::physical::{compile, PhysicalPlan, Strategy};
use crate::query::parse_query;
use crate::value::Value;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("benchmark setup: {0}")]
    Setup(String),
    #[error(transparent)]
    Exec(#[from] ExecError),
    #[error(transparent)]
    Write(#[from] WriteError),
}

/// One operator configuration to measure. `beta` is a lower bound on the
/// declared tuple size; the recorded size may be slightly larger.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum BenchSetting {
    IndexScan { alpha: u64, beta: u64 },
    IndexFKJoin { alpha: u64, beta: u64 },
    SortedIndexJoin { child: u64, per_key: u64, beta: u64 },
}

impl BenchSetting {
    pub fn kind(&self) -> &'static str {
        match self {
            BenchSetting::IndexScan { .. } => "IndexScan",
            BenchSetting::IndexFKJoin { .. } => "IndexFKJoin",
            BenchSetting::SortedIndexJoin { .. } => "SortedIndexJoin",
        }
    }

    /// The setting that measures a remote operator's model key.
    pub fn for_key(kind: &str, alpha: Alpha, beta: u64) -> Option<Self> {
        match (kind, alpha.per_key) {
            ("IndexScan", None) => Some(BenchSetting::IndexScan {
                alpha: alpha.count,
                beta,
            }),
            ("IndexFKJoin", None) => Some(BenchSetting::IndexFKJoin {
                alpha: alpha.count,
                beta,
            }),
            ("SortedIndexJoin", Some(j)) => Some(BenchSetting::SortedIndexJoin {
                child: alpha.count,
                per_key: j,
                beta,
            }),
            _ => None,
        }
    }

    /// Settings covering every remote operator of `plan`.
    pub fn for_plan(plan: &PhysicalPlan, schema: &crate::catalog::Schema) -> Vec<Self> {
        plan.nodes()
            .iter()
            .filter_map(|n| n.model_key(schema))
            .filter_map(|(k, a, b)| Self::for_key(k, a, b))
            .collect()
    }

    fn beta(&self) -> u64 {
        match *self {
            BenchSetting::IndexScan { beta, .. }
            | BenchSetting::IndexFKJoin { beta, .. }
            | BenchSetting::SortedIndexJoin { beta, .. } => beta,
        }
    }
}

impl fmt::Display for BenchSetting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BenchSetting::IndexScan { alpha, beta } => write!(f, "IndexScan({alpha}, {beta} B)"),
            BenchSetting::IndexFKJoin { alpha, beta } => {
                write!(f, "IndexFKJoin({alpha}, {beta} B)")
            }
            BenchSetting::SortedIndexJoin {
                child,
                per_key,
                beta,
            } => {
                write!(f, "SortedIndexJoin({child}x{per_key}, {beta} B)")
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub profile: LatencyProfile,
    /// Simulated span covered by the runs.
    pub minutes: f64,
    pub interval_ms: f64,
    /// Executions of each setting per interval.
    pub runs_per_interval: usize,
    pub strategy: Strategy,
}

/// Length of a padding column that brings the declared tuple size of a
/// table with `fixed` other bytes to at least `beta`.
fn pad_len(beta: u64, fixed: u64) -> u64 {
    // A VARCHAR(n) column declares 4 + 2n + 2 bytes.
    beta.saturating_sub(fixed + 6).div_ceil(2).max(1)
}

struct Fixture {
    engine: Engine,
    clock: Arc<SimClock>,
    plan: crate::physical::Compiled,
    params: BoundParams,
}

fn fixture(
    setting: BenchSetting,
    profile: &LatencyProfile,
    seed: u64,
) -> Result<Fixture, BenchError> {
    let setup = |e: &dyn fmt::Display| BenchError::Setup(format!("{setting}: {e}"));
    // Two 12-byte key columns precede the padding in R; one in P.
    let p_r = pad_len(setting.beta(), 24);
    let p_p = pad_len(setting.beta(), 12);
    let (ddl, sql) = match setting {
        BenchSetting::IndexScan { alpha, .. } => (
            format!("CREATE TABLE R (u INT, ts TIMESTAMP, pad VARCHAR({p_r}), PRIMARY KEY (u, ts))"),
            format!("SELECT * FROM R WHERE R.u = [1: k] ORDER BY R.ts DESC LIMIT {alpha}"),
        ),
        BenchSetting::IndexFKJoin { alpha, .. } => (
            format!(
                "CREATE TABLE L (k INT, t INT, PRIMARY KEY (k, t))
                 CREATE TABLE P (id INT, pad VARCHAR({p_p}), PRIMARY KEY (id))"
            ),
            format!("SELECT * FROM L, P WHERE L.k = [1: k] AND P.id = L.t LIMIT {alpha}"),
        ),
        BenchSetting::SortedIndexJoin { child, per_key, .. } => (
            format!(
                "CREATE TABLE L (k INT, t INT, PRIMARY KEY (k, t), CARDINALITY LIMIT {child} (k))
                 CREATE TABLE R (u INT, ts TIMESTAMP, pad VARCHAR({p_r}), PRIMARY KEY (u, ts))"
            ),
            format!("SELECT * FROM L, R WHERE L.k = [1: k] AND R.u = L.t ORDER BY R.ts DESC LIMIT {per_key}"),
        ),
    };
    let schema = parse_ddl(&ddl).map_err(|e| setup(&e))?;
    let compiled =
        compile(&parse_query(&sql).map_err(|e| setup(&e))?, &schema).map_err(|e| setup(&e))?;
    let kinds: Vec<&str> = compiled
        .plan
        .nodes()
        .iter()
        .map(|n| n.kind_name())
        .collect();
    if !kinds.contains(&setting.kind()) {
        return Err(setup(&format!(
            "plan has no {} ({kinds:?})",
            setting.kind()
        )));
    }
    let clock = SimClock::new();
    let mut profile = profile.clone();
    profile.seed = seed;
    let store =
        Arc::new(LatencyStore::simulated(MemStore::new(), profile, clock.clone()).without_trace());
    // Loading through the decorator only accrues simulated time that no
    // measurement picks up.
    let mut engine = Engine::new(store, schema);
    engine.prepare(&compiled)?;
    let pad = |n: u64| Value::Str("x".repeat(n as usize));
    let int = |i: u64| Value::Int(i as i64);
    match setting {
        BenchSetting::IndexScan { alpha, .. } => {
            for i in 0..alpha {
                engine.insert("R", vec![int(1), Value::Timestamp(i as i64), pad(p_r)])?;
            }
        }
        BenchSetting::IndexFKJoin { alpha, .. } => {
            for i in 0..alpha {
                engine.insert("L", vec![int(1), int(i)])?;
                engine.insert("P", vec![int(i), pad(p_p)])?;
            }
        }
        BenchSetting::SortedIndexJoin { child, per_key, .. } => {
            for t in 0..child {
                engine.insert("L", vec![int(1), int(t)])?;
                for i in 0..per_key {
                    engine.insert("R", vec![int(t), Value::Timestamp(i as i64), pad(p_r)])?;
                }
            }
        }
    }
    let params = BoundParams::bind(
        &compiled.query.params,
        BTreeMap::from([("k".to_string(), ParamValue::One(Value::Int(1)))]),
    )?;
    Ok(Fixture {
        engine,
        clock,
        plan: compiled,
        params,
    })
}

/// Runs every setting `runs_per_interval` times in each interval of the
/// simulated span and records one trace row per execution.
pub fn bench_operators(
    settings: &[BenchSetting],
    config: &BenchConfig,
) -> Result<Vec<TraceRow>, BenchError> {
    let span_ms = config.minutes * 60_000.0;
    let intervals = (span_ms / config.interval_ms).ceil().max(1.0) as usize;
    let mut rows = Vec::new();
    for (n, setting) in settings.iter().enumerate() {
        let f = fixture(
            *setting,
            &config.profile,
            config.profile.seed.wrapping_add(n as u64 * 7919),
        )?;
        let node = f
            .plan
            .plan
            .nodes()
            .into_iter()
            .find(|node| node.kind_name() == setting.kind())
            .expect("checked in fixture");
        let (kind, alpha, beta) = node.model_key(f.engine.schema()).expect("remote operator");
        let id = node.id();
        for i in 0..intervals {
            for r in 0..config.runs_per_interval {
                let t = (i as f64 + (r as f64 + 0.5) / config.runs_per_interval as f64)
                    * config.interval_ms;
                if t >= span_ms {
                    break;
                }
                f.clock.set_ms(t);
                let page = f.engine.execute(&f.plan, &f.params, config.strategy)?;
                let stats = page
                    .stats
                    .per_operator
                    .iter()
                    .find(|s| s.id == id)
                    .expect("operator stats");
                rows.push(TraceRow {
                    timestamp_ms: t,
                    op_kind: kind.to_string(),
                    alpha,
                    beta_bytes: beta,
                    latency_ms: stats.latency_ms,
                });
            }
        }
    }
    Ok(rows)
}
