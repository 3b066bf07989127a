use super::*;
use crate::fixtures::{
    query, scadr_schema, FIND_USER, INTERSECTION, RECENT_THOUGHTS, THOUGHTSTREAM,
};
use crate::kvstore::{CountingStore, MemStore};
use crate::physical::compile;

fn s(x: &str) -> Value {
    Value::Str(x.to_string())
}

/// Ten users; user `i` follows the next four users (the fourth unapproved)
/// and posts 15 thoughts.
fn loaded() -> (Engine, Arc<CountingStore<MemStore>>) {
    let store = Arc::new(CountingStore::new(MemStore::new()));
    let mut engine = Engine::new(store.clone(), scadr_schema());
    for q in [FIND_USER, RECENT_THOUGHTS, THOUGHTSTREAM, INTERSECTION] {
        let c = compile(&query(q), engine.schema()).unwrap();
        engine.prepare(&c).unwrap();
    }
    for i in 0..10 {
        engine
            .insert(
                "Users",
                vec![s(&format!("u{i}")), s("pw"), s(&format!("town{}", i % 3))],
            )
            .unwrap();
        for d in 1..=4 {
            let t = format!("u{}", (i + d) % 10);
            engine
                .insert(
                    "Subscriptions",
                    vec![s(&format!("u{i}")), s(&t), Value::Bool(d < 4)],
                )
                .unwrap();
        }
        for k in 0..15 {
            let text = format!("thought {k} of user {i}");
            engine
                .insert(
                    "Thoughts",
                    vec![
                        s(&format!("u{i}")),
                        Value::Timestamp(k * 1000 + i),
                        s(&text),
                    ],
                )
                .unwrap();
        }
    }
    store.reset();
    (engine, store)
}

fn params(c: &Compiled, pairs: &[(&str, &str)]) -> BoundParams {
    let pairs: Vec<(String, String)> = pairs
        .iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect();
    BoundParams::parse(&c.query.params, &pairs).unwrap()
}

#[test]
fn find_user_is_one_get() {
    let (engine, store) = loaded();
    let c = compile(&query(FIND_USER), engine.schema()).unwrap();
    let page = engine
        .execute(&c, &params(&c, &[("username", "u3")]), Strategy::Parallel)
        .unwrap();
    assert_eq!(page.rows, vec![vec![s("u3"), s("pw"), s("town0")]]);
    assert_eq!(page.stats.requests, 1);
    assert_eq!(store.total(), 1);
}

#[test]
fn recent_thoughts_newest_first() {
    let (engine, _) = loaded();
    let c = compile(&query(RECENT_THOUGHTS), engine.schema()).unwrap();
    for strategy in [Strategy::Lazy, Strategy::Simple, Strategy::Parallel] {
        let page = engine
            .execute(&c, &params(&c, &[("username", "u2")]), strategy)
            .unwrap();
        let ts: Vec<Value> = page.rows.iter().map(|r| r[1].clone()).collect();
        let want: Vec<Value> = (5..15)
            .rev()
            .map(|k| Value::Timestamp(k * 1000 + 2))
            .collect();
        assert_eq!(ts, want, "{strategy:?}");
        assert!(page.stats.requests <= c.bound_for(strategy).max_requests);
    }
}

#[test]
fn thoughtstream_pages_cover_followed_thoughts_in_order() {
    let (engine, _) = loaded();
    let c = compile(&query(THOUGHTSTREAM), engine.schema()).unwrap();
    let p = params(&c, &[("username", "u0")]);
    for strategy in [Strategy::Lazy, Strategy::Simple, Strategy::Parallel] {
        let mut seen = Vec::new();
        let mut cursor: Option<String> = None;
        loop {
            let page = engine
                .execute_page(&c, &p, strategy, cursor.as_deref())
                .unwrap();
            assert!(page.stats.requests <= c.bound_for(strategy).max_requests);
            seen.extend(page.rows.iter().map(|r| (r[4].clone(), r[3].clone())));
            cursor = page.cursor;
            if cursor.is_none() {
                break;
            }
        }
        // Followed and approved: u1, u2, u3; 45 thoughts, newest first.
        let mut want: Vec<(Value, Value)> = (1..=3)
            .flat_map(|u| {
                (0..15).map(move |k| (Value::Timestamp(k * 1000 + u), s(&format!("u{u}"))))
            })
            .collect();
        want.sort_by(|a, b| b.cmp(a));
        assert_eq!(seen, want, "{strategy:?}");
    }
}

#[test]
fn intersection_probes_each_friend() {
    let (engine, _) = loaded();
    let c = compile(&query(INTERSECTION), engine.schema()).unwrap();
    let p = params(&c, &[("target", "u5"), ("friends", "u1,u2,u3,u9,u2")]);
    let page = engine.execute(&c, &p, Strategy::Parallel).unwrap();
    let owners: Vec<Value> = page.rows.iter().map(|r| r[0].clone()).collect();
    assert_eq!(owners, vec![s("u1"), s("u2"), s("u3")]);
}

#[test]
fn list_longer_than_max_is_rejected() {
    let (engine, _) = loaded();
    let c = compile(&query(INTERSECTION), engine.schema()).unwrap();
    let friends: Vec<String> = (0..51).map(|i| format!("x{i}")).collect();
    let pairs = vec![
        ("target".to_string(), "u1".to_string()),
        ("friends".to_string(), friends.join(",")),
    ];
    assert!(matches!(
        BoundParams::parse(&c.query.params, &pairs),
        Err(ExecError::ListTooLong { max: 50, .. })
    ));
    drop(engine);
}

#[test]
fn cardinality_limit_holds_at_the_hundred_and_first_insert() {
    let (engine, _) = loaded();
    for t in 0..96 {
        engine
            .insert(
                "Subscriptions",
                vec![s("u0"), s(&format!("x{t}")), Value::Bool(true)],
            )
            .unwrap();
    }
    let err = engine
        .insert(
            "Subscriptions",
            vec![s("u0"), s("x-last"), Value::Bool(true)],
        )
        .unwrap_err();
    assert!(
        matches!(err, WriteError::CardinalityViolation { limit: 100, .. }),
        "{err}"
    );
    // The rejected tuple left nothing behind.
    let c = compile(&query(crate::fixtures::USERS_FOLLOWED), engine.schema()).unwrap();
    let page = engine
        .execute(&c, &params(&c, &[("username", "u0")]), Strategy::Simple)
        .unwrap();
    assert!(page.rows.iter().all(|r| r[1] != s("x-last")));
}

#[test]
fn cursor_from_another_query_is_rejected() {
    let (engine, _) = loaded();
    let c = compile(&query(THOUGHTSTREAM), engine.schema()).unwrap();
    let first = engine
        .execute(&c, &params(&c, &[("username", "u0")]), Strategy::Simple)
        .unwrap();
    let token = first.cursor.unwrap();
    let other = engine.execute_page(
        &c,
        &params(&c, &[("username", "u1")]),
        Strategy::Simple,
        Some(&token),
    );
    assert!(matches!(
        other,
        Err(ExecError::Cursor(CursorError::Mismatch))
    ));
}

#[test]
fn dangling_entries_are_skipped_and_swept() {
    let (engine, _) = loaded();
    let c = compile(&query(THOUGHTSTREAM), engine.schema()).unwrap();
    engine
        .update("Subscriptions", vec![s("u0"), s("u1"), Value::Bool(false)])
        .unwrap();
    let page = engine
        .execute(&c, &params(&c, &[("username", "u0")]), Strategy::Parallel)
        .unwrap();
    assert!(page.rows.iter().all(|r| r[3] != s("u1")));

    let mut engine = engine;
    let followers = query("SELECT * FROM Subscriptions WHERE targetUserId = [1: t] LIMIT 10");
    let c = compile(&followers, engine.schema()).unwrap();
    assert_eq!(c.new_indexes.len(), 1);
    engine.prepare(&c).unwrap();
    let fault = engine.insert_with_fault(
        "Subscriptions",
        vec![s("u5"), s("u0"), Value::Bool(true)],
        FaultPoint::AfterIndexPuts,
    );
    assert!(matches!(fault, Err(WriteError::Aborted(_))));
    let owners: Vec<Value> = engine
        .execute(&c, &params(&c, &[("t", "u0")]), Strategy::Simple)
        .unwrap()
        .rows
        .into_iter()
        .map(|r| r[0].clone())
        .collect();
    assert_eq!(owners, vec![s("u6"), s("u7"), s("u8"), s("u9")]);
    assert!(engine.gc().unwrap() >= 1);
    assert_eq!(engine.gc().unwrap(), 0);
}
