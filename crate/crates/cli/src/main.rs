use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use scaleql::physical::Strategy;

mod commands;

/// Scale-independent query compiler, executor and SLO modeler.
#[derive(Parser)]
#[command(name = "scaleql", version)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
pub struct Common {
    /// DDL file with the schema (the bundled SCADr schema if omitted).
    #[arg(long, global = true)]
    schema: Option<PathBuf>,
    /// Database file; holds the schema, indexes and records between runs.
    #[arg(long, global = true)]
    db: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Parse a DDL file and print it back in canonical form.
    LoadSchema { ddl: PathBuf },
    /// Print the plans, operation bounds and scaling class of a query.
    Explain {
        query: PathBuf,
        /// Allow unbounded scans instead of rejecting the query.
        #[arg(long = "unsafe")]
        allow_unbounded: bool,
    },
    /// Exit 0 if the query is scale-independent, 1 with a diagnosis if not.
    Check {
        query: PathBuf,
        /// Print the diagnosis as JSON on stdout.
        #[arg(long)]
        json: bool,
    },
    /// Execute a query against the database file.
    Run {
        query: PathBuf,
        /// Parameter value, `name=value`; list elements are comma separated.
        #[arg(long = "param", value_parser = parse_pair)]
        params: Vec<(String, String)>,
        #[arg(long, default_value = "parallel")]
        strategy: Strategy,
        /// Continue a paginated query after this page.
        #[arg(long)]
        cursor: Option<String>,
    },
    /// Insert one tuple, maintaining indexes and cardinality limits.
    Write {
        table: String,
        /// Column values in declaration order.
        #[arg(long, num_args = 1.., required = true)]
        values: Vec<String>,
    },
    /// Benchmark the operators the queries use and write a model file.
    TrainModel {
        /// Queries whose operators to benchmark (thoughtstream if none).
        queries: Vec<PathBuf>,
        /// Latency profile (TOML).
        #[arg(long)]
        profile: Option<PathBuf>,
        #[arg(long, default_value_t = 60.0)]
        minutes: f64,
        /// Interval length, e.g. `10m`.
        #[arg(long, default_value = "10m")]
        interval: String,
        /// Executions of each operator setting per interval.
        #[arg(long, default_value_t = 200)]
        runs: usize,
        /// Also cover every cell of this grid (same syntax as `heatmap`).
        #[arg(long, num_args = 1..)]
        grid: Vec<String>,
        #[arg(long, short)]
        out: PathBuf,
        /// Also write the raw trace as CSV.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Predict per-interval quantiles and check them against an SLO.
    Predict {
        query: PathBuf,
        #[arg(long)]
        model: PathBuf,
        /// `q=0.99,t=500ms,interval=10m[,fraction=0.9]`.
        #[arg(long, default_value = "q=0.99,t=500ms,interval=10m")]
        slo: String,
    },
    /// Predicted quantile over a grid of limits, as CSV.
    Heatmap {
        query: PathBuf,
        /// Two axes, `name=lo..hi[:step]` or `name=v1,v2,...`, where name is
        /// `limit` or `Table.attr`.
        #[arg(long, num_args = 2, required = true)]
        grid: Vec<String>,
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 0.99)]
        quantile: f64,
        /// Also recommend the largest limits that meet this SLO.
        #[arg(long)]
        slo: Option<String>,
    },
    /// Desk-scale benchmarks.
    Bench {
        #[command(subcommand)]
        which: Bench,
    },
}

#[derive(Subcommand)]
enum Bench {
    /// Seed SCADr data and run its five operations.
    Scadr {
        /// Base user count, multiplied by `--scale`.
        #[arg(long, default_value_t = scaleql::workload::BASE_USERS)]
        users: usize,
        #[arg(long, default_value_t = 1)]
        scale: usize,
        #[arg(long, default_value = "parallel")]
        strategy: Strategy,
        #[arg(long, default_value_t = 10)]
        workers: usize,
        /// Executions of each operation per worker.
        #[arg(long, default_value_t = 50)]
        rounds: usize,
        /// Real-time latency profile (TOML) injected into every request.
        #[arg(long)]
        profile: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
}

fn parse_pair(s: &str) -> Result<(String, String), String> {
    s.split_once('=')
        .map(|(k, v)| (k.trim().to_string(), v.to_string()))
        .ok_or_else(|| format!("expected name=value, got {s:?}"))
}

/// Failure classes, each with its own exit status.
#[derive(Debug)]
pub enum Failure {
    /// Scale-independence rejection (1).
    Rejected,
    /// Bad input (2).
    Usage(String),
    /// Store or runtime error (3).
    Runtime(String),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let c = &cli.common;
    let result = match cli.command {
        Command::LoadSchema { ddl } => commands::load_schema(c, &ddl),
        Command::Explain {
            query,
            allow_unbounded,
        } => commands::explain(c, &query, allow_unbounded),
        Command::Check { query, json } => commands::check(c, &query, json),
        Command::Run {
            query,
            params,
            strategy,
            cursor,
        } => commands::run(c, &query, &params, strategy, cursor.as_deref()),
        Command::Write { table, values } => commands::write(c, &table, &values),
        Command::TrainModel {
            queries,
            profile,
            minutes,
            interval,
            runs,
            grid,
            out,
            trace,
        } => commands::train_model(
            c,
            &commands::TrainArgs {
                queries,
                profile,
                minutes,
                interval,
                runs,
                grid,
                out,
                trace,
            },
        ),
        Command::Predict { query, model, slo } => commands::predict(c, &query, &model, &slo),
        Command::Heatmap {
            query,
            grid,
            model,
            quantile,
            slo,
        } => commands::heatmap(c, &query, &grid, &model, quantile, slo.as_deref()),
        Command::Bench {
            which:
                Bench::Scadr {
                    users,
                    scale,
                    strategy,
                    workers,
                    rounds,
                    profile,
                    json,
                },
        } => commands::bench_scadr(
            users * scale,
            strategy,
            workers,
            rounds,
            profile.as_deref(),
            json,
        ),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Rejected) => ExitCode::from(1),
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(3)
        }
    }
}
