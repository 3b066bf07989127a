//! Random constraint-satisfying databases and queries over a fixed
//! three-table schema, for differential testing against the oracle.

use std::collections::{BTreeMap, BTreeSet};

use rand::rngs::StdRng;
use rand::seq::IndexedRandom;
use rand::Rng;
use scaleql::{parse_ddl, Schema, Value};

use super::{Database, Params};

pub const DDL: &str = "
CREATE TABLE A (a INT, b INT, c VARCHAR(8), PRIMARY KEY (a));
CREATE TABLE B (x INT, y INT, z INT, PRIMARY KEY (x, y), CARDINALITY LIMIT 5 (x));
CREATE TABLE C (k INT, t VARCHAR(40), PRIMARY KEY (k));
";

pub const WORDS: [&str; 6] = ["red", "blue", "green", "fast", "slow", "tiny"];
const NAMES: [&str; 5] = ["ann", "bob", "cy", "dee", "eve"];
/// Per-`x` limit declared on `B`.
pub const B_LIMIT: usize = 5;

pub fn schema() -> Schema {
    parse_ddl(DDL).expect("generator schema")
}

/// At most `max_rows` tuples per table; `B` respects its constraint.
pub fn database(rng: &mut StdRng, max_rows: usize) -> Database {
    let mut db = Database::new();
    let n = rng.random_range(0..=max_rows);
    let keys: BTreeSet<i64> = (0..n).map(|_| rng.random_range(0..40)).collect();
    db.insert(
        "A".into(),
        keys.iter()
            .map(|&a| {
                vec![
                    Value::Int(a),
                    Value::Int(rng.random_range(0..6)),
                    Value::Str(NAMES.choose(rng).unwrap().to_string()),
                ]
            })
            .collect(),
    );
    let mut per_x: BTreeMap<i64, BTreeSet<i64>> = BTreeMap::new();
    for _ in 0..rng.random_range(0..=max_rows) {
        let x = rng.random_range(0..8);
        let ys = per_x.entry(x).or_default();
        if ys.len() < B_LIMIT {
            ys.insert(rng.random_range(0..20));
        }
    }
    db.insert(
        "B".into(),
        per_x
            .iter()
            .flat_map(|(&x, ys)| ys.iter().map(move |&y| (x, y)))
            .map(|(x, y)| {
                vec![
                    Value::Int(x),
                    Value::Int(y),
                    Value::Int(rng.random_range(0..40)),
                ]
            })
            .collect(),
    );
    let n = rng.random_range(0..=max_rows.min(40));
    db.insert(
        "C".into(),
        (0..n as i64)
            .map(|k| {
                let words: Vec<&str> = (0..rng.random_range(1..5))
                    .map(|_| *WORDS.choose(rng).unwrap())
                    .collect();
                vec![
                    Value::Int(k),
                    Value::Str(words.join(if rng.random_bool(0.5) { " " } else { ", " })),
                ]
            })
            .collect(),
    );
    db
}

/// A query template with values for its parameters.
#[derive(Debug, Clone)]
pub struct Case {
    pub sql: String,
    pub params: Params,
}

fn limit(rng: &mut StdRng) -> String {
    let n = rng.random_range(1..12);
    if rng.random_bool(0.3) {
        format!("PAGINATE {n}")
    } else {
        format!("LIMIT {n}")
    }
}

fn dir(rng: &mut StdRng) -> &'static str {
    if rng.random_bool(0.5) {
        "DESC"
    } else {
        "ASC"
    }
}

fn ints(rng: &mut StdRng, hi: i64, max: usize) -> Vec<Value> {
    let n = rng.random_range(1..=max);
    let set: BTreeSet<i64> = (0..n).map(|_| rng.random_range(0..hi)).collect();
    set.into_iter().map(Value::Int).collect()
}

/// One query from a family of shapes the planner accepts or rejects in
/// interesting ways. Callers skip queries that fail to compile.
pub fn case(rng: &mut StdRng) -> Case {
    let mut params = Params::new();
    let mut p = |name: &str, v: Vec<Value>| {
        params.insert(name.to_string(), v);
    };
    let sql = match rng.random_range(0..10) {
        0 => {
            p("a", vec![Value::Int(rng.random_range(0..40))]);
            "SELECT * FROM A WHERE A.a = [1: a]".to_string()
        }
        1 => {
            let filter = if rng.random_bool(0.5) {
                format!(" AND A.b = {}", rng.random_range(0..6))
            } else {
                String::new()
            };
            format!(
                "SELECT A.a, A.c FROM A WHERE A.c = '{}'{filter} ORDER BY A.b {} {}",
                NAMES.choose(rng).unwrap(),
                dir(rng),
                limit(rng)
            )
        }
        2 => {
            p("x", vec![Value::Int(rng.random_range(0..8))]);
            let range = match rng.random_range(0..3) {
                0 => format!(" AND B.y > {}", rng.random_range(0..20)),
                1 => format!(" AND B.y <= {}", rng.random_range(0..20)),
                _ => String::new(),
            };
            let tail = if rng.random_bool(0.5) {
                format!(" ORDER BY B.y {} {}", dir(rng), limit(rng))
            } else {
                String::new()
            };
            format!("SELECT * FROM B WHERE B.x = [1: x]{range}{tail}")
        }
        3 => {
            p("x", vec![Value::Int(rng.random_range(0..8))]);
            let filter = if rng.random_bool(0.4) {
                format!(" AND A.b = {}", rng.random_range(0..6))
            } else {
                String::new()
            };
            format!("SELECT * FROM B, A WHERE B.x = [1: x] AND A.a = B.z{filter}")
        }
        4 => {
            p("a", vec![Value::Int(rng.random_range(0..40))]);
            format!(
                "SELECT * FROM A, B WHERE A.a = [1: a] AND B.x = A.b ORDER BY B.y {} {}",
                dir(rng),
                limit(rng)
            )
        }
        5 => {
            let w = WORDS.choose(rng).unwrap();
            let order = if rng.random_bool(0.5) {
                format!(" ORDER BY C.t {}", dir(rng))
            } else {
                String::new()
            };
            format!(
                "SELECT * FROM C WHERE C.t LIKE '%{w}%'{order} {}",
                limit(rng)
            )
        }
        6 => {
            p("xs", ints(rng, 8, 4));
            let tail = if rng.random_bool(0.5) {
                format!(" ORDER BY B.z {} {}", dir(rng), limit(rng))
            } else {
                String::new()
            };
            format!("SELECT * FROM B WHERE B.x IN [1: xs] MAX 4{tail}")
        }
        7 => {
            p("x", vec![Value::Int(rng.random_range(0..8))]);
            "SELECT COUNT(*), SUM(B.z), MAX(B.y) FROM B WHERE B.x = [1: x]".to_string()
        }
        8 => {
            p("xs", ints(rng, 8, 3));
            "SELECT B.x, COUNT(*), MIN(B.z) FROM B WHERE B.x IN [1: xs] MAX 3 GROUP BY B.x"
                .to_string()
        }
        _ => {
            p("x", vec![Value::Int(rng.random_range(0..8))]);
            p("ys", ints(rng, 20, 4));
            format!("SELECT * FROM B, A WHERE B.x = [1: x] AND B.y IN [2: ys] MAX 4 AND A.a = B.z ORDER BY A.c {} {}", dir(rng), limit(rng))
        }
    };
    Case { sql, params }
}
