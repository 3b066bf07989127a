//! The SCADr microblog workload: a seeded data generator and a benchmark
//! that runs the read queries and thought posting from concurrent workers.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Instant;

use rand::rngs::StdRng;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use serde::Serialize;
use thiserror::Error;

use crate::executor::{BoundParams, Engine, ExecError, ParamValue, WriteError};
use crate::fixtures::{query, scadr_schema, SCADR_QUERIES};
use crate::kvstore::latency::{LatencyProfile, LatencyStore};
use crate::kvstore::{CountingStore, KvStore, MemStore};
use crate::physical::{compile, CompileError, Compiled, Strategy};
use crate::value::Value;

pub const BASE_USERS: usize = 1_000;
pub const DEFAULT_SEED: u64 = 0x5CAD;
/// Name of the write in reports.
pub const POST_THOUGHT: &str = "post_thought";

#[derive(Debug, Error)]
pub enum WorkloadError {
    #[error(transparent)]
    Compile(#[from] CompileError),
    #[error(transparent)]
    Exec(#[from] ExecError),
    #[error(transparent)]
    Write(#[from] WriteError),
    #[error("benchmark configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScadrData {
    pub users: usize,
    pub thoughts_per_user: usize,
    pub subscriptions_per_user: usize,
    pub seed: u64,
}

impl ScadrData {
    pub fn at_scale(scale: usize) -> Self {
        ScadrData {
            users: BASE_USERS * scale,
            thoughts_per_user: 100,
            subscriptions_per_user: 10,
            seed: DEFAULT_SEED,
        }
    }
}

pub fn username(i: usize) -> String {
    format!("user{i:07}")
}

/// Fills the three SCADr tables. Every subscription is approved, so each
/// user's thoughtstream reads the same number of followed users.
pub fn seed_scadr(engine: &Engine, data: &ScadrData) -> Result<(), WorkloadError> {
    if data.subscriptions_per_user >= data.users.max(1) {
        return Err(WorkloadError::Config(format!(
            "{} subscriptions per user need more than {} users",
            data.subscriptions_per_user, data.users
        )));
    }
    let mut rng = StdRng::seed_from_u64(data.seed);
    let s = |x: String| Value::Str(x);
    for u in 0..data.users {
        let name = username(u);
        engine.insert(
            "Users",
            vec![
                s(name.clone()),
                s(format!("pw{:08x}", rng.random::<u32>())),
                s(format!("town{}", u % 97)),
            ],
        )?;
        for k in 0..data.thoughts_per_user {
            let ts = (k as i64) * 1000 + rng.random_range(0..1000);
            engine.insert(
                "Thoughts",
                vec![
                    s(name.clone()),
                    Value::Timestamp(ts),
                    s(format!("thought {k} from {name}")),
                ],
            )?;
        }
        // Sample among the other users.
        for t in sample(&mut rng, data.users - 1, data.subscriptions_per_user) {
            let target = if t >= u { t + 1 } else { t };
            engine.insert(
                "Subscriptions",
                vec![s(name.clone()), s(username(target)), Value::Bool(true)],
            )?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct BenchScadr {
    pub data: ScadrData,
    pub strategy: Strategy,
    pub workers: usize,
    /// Executions of each of the five operations per worker.
    pub rounds: usize,
    /// Real-time latency injected per request, if any.
    pub profile: Option<LatencyProfile>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OpReport {
    pub name: String,
    pub executions: usize,
    pub min_requests: u64,
    pub max_requests: u64,
    pub min_tuples: u64,
    pub max_tuples: u64,
    /// Static bound for reads; `None` for the write.
    pub bound_requests: Option<u64>,
    pub bound_tuples: Option<u64>,
    pub p99_ms: f64,
    pub mean_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub users: usize,
    pub strategy: Strategy,
    pub workers: usize,
    pub elapsed_s: f64,
    pub ops_per_s: f64,
    pub operations: Vec<OpReport>,
}

impl BenchReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("operation\texecutions\trequests\ttuples\tbound_requests\tbound_tuples\tp99_ms\tmean_ms\n");
        let range = |a: u64, b: u64| {
            if a == b {
                a.to_string()
            } else {
                format!("{a}..{b}")
            }
        };
        let opt = |o: Option<u64>| o.map_or("-".into(), |v| v.to_string());
        for o in &self.operations {
            out += &format!(
                "{}\t{}\t{}\t{}\t{}\t{}\t{:.3}\t{:.3}\n",
                o.name,
                o.executions,
                range(o.min_requests, o.max_requests),
                range(o.min_tuples, o.max_tuples),
                opt(o.bound_requests),
                opt(o.bound_tuples),
                o.p99_ms,
                o.mean_ms
            );
        }
        out
    }
}

struct Sample {
    requests: u64,
    tuples: u64,
    ms: f64,
}

fn worker(
    shared: &Arc<dyn KvStore>,
    engine: &Engine,
    queries: &[(&str, Compiled)],
    cfg: &BenchScadr,
    id: usize,
) -> Result<BTreeMap<String, Vec<Sample>>, WorkloadError> {
    let below: Arc<dyn KvStore> = match &cfg.profile {
        Some(p) => {
            let mut p = p.clone();
            p.seed = p.seed.wrapping_add(id as u64);
            Arc::new(LatencyStore::new(shared.clone(), p).without_trace())
        }
        None => shared.clone(),
    };
    let counting = Arc::new(CountingStore::new(below));
    let local = Engine::new(counting.clone(), engine.schema().clone());
    let mut rng = StdRng::seed_from_u64(cfg.data.seed ^ (id as u64 + 1).wrapping_mul(0x9E37_79B9));
    let mut out: BTreeMap<String, Vec<Sample>> = BTreeMap::new();
    let mut posted = 0i64;
    for _ in 0..cfg.rounds {
        let user = username(rng.random_range(0..cfg.data.users));
        for (name, compiled) in queries {
            let raw = compiled
                .query
                .params
                .iter()
                .map(|p| (p.name.clone(), ParamValue::One(Value::Str(user.clone()))))
                .collect();
            let params = BoundParams::bind(&compiled.query.params, raw)?;
            counting.reset();
            let start = Instant::now();
            let page = local.execute(compiled, &params, cfg.strategy)?;
            let ms = start.elapsed().as_secs_f64() * 1000.0;
            out.entry(name.to_string()).or_default().push(Sample {
                requests: counting.total(),
                tuples: page.stats.tuples,
                ms,
            });
        }
        // Timestamps far above the seeded ones, unique per worker.
        let ts = 1_000_000_000_000 + id as i64 * 1_000_000_000 + posted;
        posted += 1;
        counting.reset();
        let start = Instant::now();
        local.insert(
            "Thoughts",
            vec![
                Value::Str(user.clone()),
                Value::Timestamp(ts),
                Value::Str("hello".into()),
            ],
        )?;
        let ms = start.elapsed().as_secs_f64() * 1000.0;
        out.entry(POST_THOUGHT.to_string())
            .or_default()
            .push(Sample {
                requests: counting.total(),
                tuples: counting.records_returned(),
                ms,
            });
    }
    Ok(out)
}

/// Nearest-rank percentile of unsorted values.
fn percentile(values: &mut [f64], q: f64) -> f64 {
    values.sort_by(f64::total_cmp);
    let rank = ((q * values.len() as f64).ceil() as usize).clamp(1, values.len());
    values[rank - 1]
}

/// Seeds a fresh in-memory SCADr database and runs the workload on it.
pub fn bench_scadr(cfg: &BenchScadr) -> Result<BenchReport, WorkloadError> {
    if cfg.workers == 0 || cfg.rounds == 0 {
        return Err(WorkloadError::Config(
            "workers and rounds must be positive".into(),
        ));
    }
    let schema = scadr_schema();
    let queries: Vec<(&str, Compiled)> = SCADR_QUERIES
        .iter()
        .map(|(name, text)| Ok((*name, compile(&query(text), &schema)?)))
        .collect::<Result<_, CompileError>>()?;
    let shared: Arc<dyn KvStore> = Arc::new(MemStore::new());
    let mut engine = Engine::new(shared.clone(), schema);
    for (_, c) in &queries {
        engine.prepare(c)?;
    }
    seed_scadr(&engine, &cfg.data)?;

    let start = Instant::now();
    let results: Vec<Result<_, WorkloadError>> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..cfg.workers)
            .map(|id| {
                s.spawn({
                    let (shared, engine, queries) = (&shared, &engine, &queries);
                    move || worker(shared, engine, queries, cfg, id)
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("worker panicked"))
            .collect()
    });
    let elapsed_s = start.elapsed().as_secs_f64();
    let mut merged: BTreeMap<String, Vec<Sample>> = BTreeMap::new();
    for r in results {
        for (k, v) in r? {
            merged.entry(k).or_default().extend(v);
        }
    }

    let names = queries
        .iter()
        .map(|(n, _)| n.to_string())
        .chain([POST_THOUGHT.to_string()]);
    let mut operations = Vec::new();
    let mut total = 0;
    for name in names {
        let samples = &merged[&name];
        total += samples.len();
        let bound = queries
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, c)| c.bound_for(cfg.strategy));
        let mut ms: Vec<f64> = samples.iter().map(|s| s.ms).collect();
        operations.push(OpReport {
            name,
            executions: samples.len(),
            min_requests: samples.iter().map(|s| s.requests).min().unwrap_or(0),
            max_requests: samples.iter().map(|s| s.requests).max().unwrap_or(0),
            min_tuples: samples.iter().map(|s| s.tuples).min().unwrap_or(0),
            max_tuples: samples.iter().map(|s| s.tuples).max().unwrap_or(0),
            bound_requests: bound.map(|b| b.max_requests),
            bound_tuples: bound.map(|b| b.max_tuples),
            mean_ms: ms.iter().sum::<f64>() / ms.len() as f64,
            p99_ms: percentile(&mut ms, 0.99),
        });
    }
    Ok(BenchReport {
        users: cfg.data.users,
        strategy: cfg.strategy,
        workers: cfg.workers,
        elapsed_s,
        ops_per_s: total as f64 / elapsed_s.max(1e-9),
        operations,
    })
}
