use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../core/fixtures/scadr")
        .join(name)
}

fn scaleql(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_scaleql"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Fresh scratch directory per test.
fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("scaleql-cli-{}-{name}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn check_accepts_thoughtstream_as_class_two() {
    let o = scaleql(&["check", path(&fixture("thoughtstream.sql"))]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("class II"));
    assert!(stdout(&o).contains("requests <= 101, tuples <= 1100"));
}

#[test]
fn check_without_constraint_fails_with_suggestion() {
    let dir = scratch("noconstraint");
    let ddl = std::fs::read_to_string(fixture("schema.ddl")).unwrap();
    let stripped = ddl.replace(",\n  CARDINALITY LIMIT 100 (ownerUserId)", "");
    assert_ne!(ddl, stripped);
    let schema = dir.join("schema.ddl");
    std::fs::write(&schema, stripped).unwrap();
    let query = fixture("thoughtstream.sql");
    let o = scaleql(&["--schema", path(&schema), "check", path(&query)]);
    assert_eq!(code(&o), 1);
    let err = stderr(&o);
    assert!(err.contains("Not scale-independent"), "{err}");
    assert!(
        err.contains("CARDINALITY LIMIT <n> (ownerUserId) on Subscriptions"),
        "{err}"
    );

    let o = scaleql(&["--schema", path(&schema), "check", "--json", path(&query)]);
    assert_eq!(code(&o), 1);
    assert!(stdout(&o).starts_with("{\"class\":\"Rejected\""));
}

#[test]
fn explain_prints_plan_and_bound() {
    let o = scaleql(&["explain", path(&fixture("thoughtstream.sql"))]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = stdout(&o);
    for op in [
        "IndexScan",
        "SortedIndexJoin",
        "LocalStop",
        "OperationBound: requests <= 101, tuples <= 1100",
    ] {
        assert!(out.contains(op), "{op} missing from\n{out}");
    }
}

#[test]
fn database_file_round_trip_with_pagination() {
    let dir = scratch("db");
    let db = dir.join("scadr.db");
    let db = path(&db);
    let o = scaleql(&["--db", db, "load-schema", path(&fixture("schema.ddl"))]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for args in [
        ["Users", "me", "pw", "x"],
        ["Users", "a", "pw", "x"],
        ["Subscriptions", "me", "a", "true"],
    ] {
        let mut v = vec!["--db", db, "write", args[0], "--values"];
        v.extend(&args[1..]);
        assert_eq!(code(&scaleql(&v)), 0);
    }
    for ts in 1..=12 {
        let ts = ts.to_string();
        assert_eq!(
            code(&scaleql(&[
                "--db", db, "write", "Thoughts", "--values", "a", &ts, "text"
            ])),
            0
        );
    }
    let dup = scaleql(&["--db", db, "write", "Users", "--values", "me", "pw", "y"]);
    assert_eq!(code(&dup), 3);

    let q = fixture("thoughtstream.sql");
    let first = scaleql(&["--db", db, "run", path(&q), "--param", "username=me"]);
    assert_eq!(code(&first), 0, "{}", stderr(&first));
    assert_eq!(stdout(&first).lines().count(), 11);
    assert!(stdout(&first)
        .lines()
        .nth(1)
        .unwrap()
        .ends_with("\t12\ttext"));
    let err = stderr(&first);
    assert!(err.contains("requests="));
    let cursor = err
        .lines()
        .find_map(|l| l.strip_prefix("cursor="))
        .expect("cursor printed");
    let second = scaleql(&[
        "--db",
        db,
        "run",
        path(&q),
        "--param",
        "username=me",
        "--cursor",
        cursor,
    ]);
    assert_eq!(code(&second), 0, "{}", stderr(&second));
    let rows: Vec<String> = stdout(&second)
        .lines()
        .skip(1)
        .map(str::to_string)
        .collect();
    assert_eq!(rows.len(), 2);
    assert!(rows[1].ends_with("\t1\ttext"));
    assert!(!stderr(&second).contains("cursor="));
}

#[test]
fn bad_input_exits_two() {
    let q = fixture("thoughtstream.sql");
    assert_eq!(code(&scaleql(&["run", path(&q)])), 2);
    assert_eq!(code(&scaleql(&["check", "/nonexistent/query.sql"])), 2);
    assert_eq!(
        code(&scaleql(&[
            "run",
            path(&q),
            "--param",
            "username=me",
            "--strategy",
            "eager"
        ])),
        2
    );
    assert_eq!(
        code(&scaleql(&[
            "run",
            path(&q),
            "--param",
            "username=me",
            "--cursor",
            "garbage"
        ])),
        2
    );
    assert_eq!(
        code(&scaleql(&[
            "heatmap",
            path(&q),
            "--grid",
            "limit=5..1",
            "limit=1",
            "--model",
            "m.json"
        ])),
        2
    );
}

fn bench_counts(scale: &str) -> Vec<(String, String, String)> {
    let o = scaleql(&[
        "bench",
        "scadr",
        "--scale",
        scale,
        "--rounds",
        "10",
        "--workers",
        "2",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    stdout(&o)
        .lines()
        .skip(1)
        .map(|l| {
            let f: Vec<&str> = l.split('\t').collect();
            (f[0].to_string(), f[2].to_string(), f[3].to_string())
        })
        .collect()
}

#[test]
fn bench_request_counts_do_not_change_with_scale() {
    let one = bench_counts("1");
    assert_eq!(one.len(), 5);
    assert!(one.iter().all(|(_, requests, _)| !requests.contains("..")));
    assert_eq!(one, bench_counts("10"));
}

#[test]
fn train_predict_and_heatmap() {
    let dir = scratch("model");
    let model = dir.join("model.json");
    let grid = ["Subscriptions.ownerUserId=50,100", "limit=5,10"];
    let mut args = vec![
        "train-model",
        "--minutes",
        "20",
        "--runs",
        "30",
        "-o",
        path(&model),
        "--grid",
    ];
    args.extend(grid);
    let o = scaleql(&args);
    assert_eq!(code(&o), 0, "{}", stderr(&o));

    let q = fixture("thoughtstream.sql");
    let o = scaleql(&[
        "predict",
        path(&q),
        "--model",
        path(&model),
        "--slo",
        "q=0.99,t=10s,interval=10m",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.starts_with("interval\tp99_ms\n0\t"), "{out}");
    assert!(
        out.contains("PASS") && out.contains("compliant=2/2"),
        "{out}"
    );

    let mut args = vec![
        "heatmap",
        path(&q),
        "--model",
        path(&model),
        "--slo",
        "q=0.99,t=10s,interval=10m",
        "--grid",
    ];
    args.extend(grid);
    let o = scaleql(&args);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(
        stdout(&o).lines().next(),
        Some("Subscriptions.ownerUserId\\limit,5,10")
    );
    assert_eq!(stdout(&o).lines().count(), 3);
    assert!(stderr(&o).contains("recommend: Subscriptions.ownerUserId=100 limit=10"));
}
