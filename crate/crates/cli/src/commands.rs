use std::collections::BTreeSet;
use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use scaleql::assistant::{diagnose, recommend_limits, RecommendError};
use scaleql::executor::{BoundParams, Engine, ExecError};
use scaleql::fixtures::{scadr_schema, THOUGHTSTREAM};
use scaleql::kvstore::latency::write_trace_csv;
use scaleql::kvstore::{LatencyProfile, MemStore};
use scaleql::physical::{
    compile, compile_with, explain as explain_plan, CompileError, CompileOptions, Compiled,
    Strategy,
};
use scaleql::slo::{
    bench_operators, heatmap as build_heatmap, parse_duration_ms, percentile_series, train_models,
    verdict, with_settings, Axis, BenchConfig, BenchSetting, GridParam, IntervalModels, SloSpec,
};
use scaleql::workload::{bench_scadr as run_bench, BenchScadr, ScadrData};
use scaleql::{dbfile, parse_ddl, parse_query, QueryAst, Schema, Value};

use crate::{Common, Failure};

type Out = Result<(), Failure>;

fn usage(e: impl Display) -> Failure {
    Failure::Usage(e.to_string())
}

fn runtime(e: impl Display) -> Failure {
    Failure::Runtime(e.to_string())
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn read_query(path: &Path) -> Result<QueryAst, Failure> {
    parse_query(&read(path)?).map_err(|e| usage(format!("{}: {e}", path.display())))
}

/// Schema of the database file if there is one, else `--schema`, else SCADr.
fn schema(c: &Common) -> Result<Schema, Failure> {
    if let Some(db) = c.db.as_deref().filter(|p| p.exists()) {
        return dbfile::load(db).map(|(s, _)| s).map_err(usage);
    }
    match &c.schema {
        Some(p) => parse_ddl(&read(p)?).map_err(|e| usage(format!("{}: {e}", p.display()))),
        None => Ok(scadr_schema()),
    }
}

fn open(c: &Common) -> Result<(Engine, Arc<MemStore>), Failure> {
    let (schema, store) = match c.db.as_deref().filter(|p| p.exists()) {
        Some(db) => dbfile::load(db).map_err(usage)?,
        None => (schema(c)?, MemStore::new()),
    };
    let store = Arc::new(store);
    Ok((Engine::new(store.clone(), schema), store))
}

fn save(c: &Common, engine: &Engine, store: &MemStore) -> Out {
    match &c.db {
        Some(path) => dbfile::save(path, engine.schema(), store).map_err(runtime),
        None => Ok(()),
    }
}

/// Prints the diagnosis for a rejected query; other compile errors are
/// input errors.
fn compiled(ast: &QueryAst, schema: &Schema, json: bool) -> Result<Compiled, Failure> {
    match compile(ast, schema) {
        Ok(c) => Ok(c),
        Err(CompileError::NotScaleIndependent(e)) => {
            let d = diagnose(ast, &e, schema);
            eprint!("{d}");
            if json {
                println!("{}", d.to_json());
            }
            Err(Failure::Rejected)
        }
        Err(e) => Err(usage(e)),
    }
}

pub fn load_schema(c: &Common, ddl: &Path) -> Out {
    let schema = parse_ddl(&read(ddl)?).map_err(|e| usage(format!("{}: {e}", ddl.display())))?;
    print!("{}", schema.render_ddl());
    if let Some(db) = &c.db {
        dbfile::save(db, &schema, &MemStore::new()).map_err(runtime)?;
        eprintln!("created {}", db.display());
    }
    Ok(())
}

pub fn explain(c: &Common, query: &Path, allow_unbounded: bool) -> Out {
    let ast = read_query(query)?;
    let schema = schema(c)?;
    let compiled = if allow_unbounded {
        let opts = CompileOptions {
            allow_unbounded: true,
            ..CompileOptions::default()
        };
        compile_with(&ast, &schema, opts).map_err(usage)?
    } else {
        compiled(&ast, &schema, false)?
    };
    println!("query: {ast}");
    println!("logical plan:");
    for line in compiled.logical.pretty().lines() {
        println!("  {line}");
    }
    println!("physical plan:");
    print!("{}", explain_plan(&compiled.plan, &compiled.bound));
    println!(
        "lazy strategy: requests <= {}, tuples <= {}",
        compiled.lazy_bound.max_requests, compiled.lazy_bound.max_tuples
    );
    println!(
        "scaling class: {} ({})",
        compiled.report.class, compiled.report.reason
    );
    for index in &compiled.new_indexes {
        println!("new index: {}", index.name());
    }
    Ok(())
}

pub fn check(c: &Common, query: &Path, json: bool) -> Out {
    let ast = read_query(query)?;
    let compiled = compiled(&ast, &schema(c)?, json)?;
    let b = &compiled.bound;
    println!(
        "ok: scale-independent, class {} ({}); requests <= {}, tuples <= {}",
        compiled.report.class, compiled.report.reason, b.max_requests, b.max_tuples
    );
    Ok(())
}

fn exec_error(e: ExecError) -> Failure {
    match e {
        ExecError::MissingParam(_)
        | ExecError::ParamType { .. }
        | ExecError::ListTooLong { .. }
        | ExecError::Unsupported(_)
        | ExecError::Cursor(_) => usage(e),
        e => runtime(e),
    }
}

pub fn run(
    c: &Common,
    query: &Path,
    params: &[(String, String)],
    strategy: Strategy,
    cursor: Option<&str>,
) -> Out {
    let ast = read_query(query)?;
    let (mut engine, store) = open(c)?;
    let compiled = compiled(&ast, engine.schema(), false)?;
    let created = engine.prepare(&compiled).map_err(exec_error)?;
    let bound = BoundParams::parse(&compiled.query.params, params).map_err(exec_error)?;
    let page = engine
        .execute_page(&compiled, &bound, strategy, cursor)
        .map_err(exec_error)?;
    print!("{}", page.to_tsv());
    eprintln!("{}", page.stats.line());
    if let Some(next) = &page.cursor {
        eprintln!("cursor={next}");
    }
    if !created.is_empty() {
        save(c, &engine, &store)?;
    }
    Ok(())
}

pub fn write(c: &Common, table: &str, values: &[String]) -> Out {
    let (engine, store) = open(c)?;
    let def = engine.schema().require_table(table).map_err(usage)?;
    if values.len() != def.columns.len() {
        return Err(usage(format!(
            "{table} has {} columns, got {} values",
            def.columns.len(),
            values.len()
        )));
    }
    let row = def
        .columns
        .iter()
        .zip(values)
        .map(|(col, text)| {
            Value::parse_as(text, col.ty)
                .ok_or_else(|| usage(format!("{}: cannot read {text:?} as {}", col.name, col.ty)))
        })
        .collect::<Result<Vec<_>, _>>()?;
    engine.insert(table, row).map_err(runtime)?;
    save(c, &engine, &store)
}

/// `name=lo..hi[:step]` or `name=v1,v2,...`.
fn parse_axis(text: &str) -> Result<Axis, Failure> {
    let (name, spec) = text
        .split_once('=')
        .ok_or_else(|| usage(format!("grid axis {text:?}: expected name=values")))?;
    let param = GridParam::parse(name.trim()).map_err(usage)?;
    let num = |s: &str| {
        s.trim()
            .parse::<u64>()
            .map_err(|_| usage(format!("grid axis {text:?}: bad number {s:?}")))
    };
    let values = match spec.split_once("..") {
        Some((lo, rest)) => {
            let (hi, step) = match rest.split_once(':') {
                Some((hi, step)) => (num(hi)?, num(step)?),
                None => (num(rest)?, 1),
            };
            let lo = num(lo)?;
            if step == 0 || lo > hi {
                return Err(usage(format!("grid axis {text:?}: empty range")));
            }
            let mut v: Vec<u64> = (lo..=hi).step_by(step as usize).collect();
            if v.last() != Some(&hi) {
                v.push(hi);
            }
            v
        }
        None => spec.split(',').map(num).collect::<Result<_, _>>()?,
    };
    if values.is_empty() || values.contains(&0) {
        return Err(usage(format!(
            "grid axis {text:?}: values must be positive"
        )));
    }
    Ok(Axis { param, values })
}

pub struct TrainArgs {
    pub queries: Vec<PathBuf>,
    pub profile: Option<PathBuf>,
    pub minutes: f64,
    pub interval: String,
    pub runs: usize,
    pub grid: Vec<String>,
    pub out: PathBuf,
    pub trace: Option<PathBuf>,
}

fn load_models(path: &Path) -> Result<IntervalModels, Failure> {
    IntervalModels::from_json(&read(path)?).map_err(|e| usage(format!("{}: {e}", path.display())))
}

pub fn train_model(c: &Common, a: &TrainArgs) -> Out {
    let schema = schema(c)?;
    let interval_ms = parse_duration_ms(&a.interval)
        .filter(|ms| *ms > 0.0)
        .ok_or_else(|| usage(format!("bad interval {:?}", a.interval)))?;
    let profile = match &a.profile {
        Some(p) => LatencyProfile::load(p).map_err(|e| usage(format!("{}: {e}", p.display())))?,
        None => LatencyProfile::lognormal(4.0, 0.4, 1),
    };
    let asts = if a.queries.is_empty() {
        vec![parse_query(THOUGHTSTREAM).map_err(runtime)?]
    } else {
        a.queries
            .iter()
            .map(|q| read_query(q))
            .collect::<Result<_, _>>()?
    };
    let axes = a
        .grid
        .iter()
        .map(|g| parse_axis(g))
        .collect::<Result<Vec<_>, _>>()?;
    let mut cells: Vec<Vec<(&GridParam, u64)>> = vec![Vec::new()];
    for axis in &axes {
        cells = cells
            .into_iter()
            .flat_map(|cell| {
                axis.values.iter().map(move |&v| {
                    let mut next = cell.clone();
                    next.push((&axis.param, v));
                    next
                })
            })
            .collect();
    }
    let mut settings = BTreeSet::new();
    for ast in &asts {
        for cell in &cells {
            let (ast, schema) = with_settings(ast, &schema, cell).map_err(usage)?;
            let compiled = compiled(&ast, &schema, false)?;
            settings.extend(BenchSetting::for_plan(&compiled.plan, &schema));
        }
    }
    let settings: Vec<BenchSetting> = settings.into_iter().collect();
    eprintln!("benchmarking {} operator settings", settings.len());
    let config = BenchConfig {
        profile,
        minutes: a.minutes,
        interval_ms,
        runs_per_interval: a.runs,
        strategy: Strategy::Parallel,
    };
    let trace = bench_operators(&settings, &config).map_err(runtime)?;
    if let Some(path) = &a.trace {
        let file = fs::File::create(path).map_err(runtime)?;
        write_trace_csv(file, &trace).map_err(runtime)?;
    }
    let models = train_models(&trace, interval_ms).map_err(runtime)?;
    fs::write(&a.out, models.to_json()).map_err(runtime)?;
    eprintln!(
        "wrote {} intervals to {}",
        models.intervals.len(),
        a.out.display()
    );
    Ok(())
}

pub fn predict(c: &Common, query: &Path, model: &Path, slo: &str) -> Out {
    let slo: SloSpec = slo.parse().map_err(usage)?;
    let schema = schema(c)?;
    let compiled = compiled(&read_query(query)?, &schema, false)?;
    let models = load_models(model)?;
    let series = percentile_series(&compiled.plan, &schema, &models, slo.quantile);
    println!("interval\tp{}_ms", slo.quantile * 100.0);
    for (i, ms) in &series.values {
        println!("{i}\t{ms}");
    }
    for (i, why) in &series.skipped {
        eprintln!("warning: interval {i} skipped: {why}");
    }
    if let Some(max) = series.max() {
        println!("max\t{max}");
    }
    println!("{}", verdict(&series, &slo));
    Ok(())
}

pub fn heatmap(
    c: &Common,
    query: &Path,
    grid: &[String],
    model: &Path,
    quantile: f64,
    slo: Option<&str>,
) -> Out {
    let ast = read_query(query)?;
    let schema = schema(c)?;
    let (rows, cols) = (parse_axis(&grid[0])?, parse_axis(&grid[1])?);
    let models = load_models(model)?.pooled();
    let Some(slo) = slo else {
        let map = build_heatmap(&ast, &schema, rows, cols, &models, quantile).map_err(runtime)?;
        print!("{}", map.to_csv());
        return Ok(());
    };
    let slo: SloSpec = slo.parse().map_err(usage)?;
    match recommend_limits(&ast, &schema, &slo, &models, rows, cols) {
        Ok(rec) => {
            print!("{}", rec.heatmap.to_csv());
            let (r, col) = (&rec.heatmap.rows.param, &rec.heatmap.cols.param);
            for ((rv, cv), margin) in rec.frontier.iter().zip(&rec.margins_ms) {
                eprintln!("recommend: {r}={rv} {col}={cv} (margin {margin} ms)");
            }
            Ok(())
        }
        Err(RecommendError::Infeasible { heatmap, .. }) => {
            print!("{}", heatmap.to_csv());
            Err(runtime("no grid cell meets the objective"))
        }
        Err(e) => Err(runtime(e)),
    }
}

pub fn bench_scadr(
    users: usize,
    strategy: Strategy,
    workers: usize,
    rounds: usize,
    profile: Option<&Path>,
    json: bool,
) -> Out {
    if users == 0 || workers == 0 {
        return Err(usage("users and workers must be positive"));
    }
    let profile = match profile {
        Some(p) => {
            Some(LatencyProfile::load(p).map_err(|e| usage(format!("{}: {e}", p.display())))?)
        }
        None => None,
    };
    let cfg = BenchScadr {
        data: ScadrData {
            users,
            ..ScadrData::at_scale(1)
        },
        strategy,
        workers,
        rounds,
        profile,
    };
    let report = run_bench(&cfg).map_err(runtime)?;
    if json {
        println!("{}", report.to_json());
    } else {
        print!("{}", report.to_tsv());
        eprintln!(
            "users={} strategy={:?} workers={} elapsed_s={:.3} ops_per_s={:.1}",
            report.users, report.strategy, report.workers, report.elapsed_s, report.ops_per_s
        );
    }
    Ok(())
}
