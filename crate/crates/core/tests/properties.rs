//! Invariants checked over generated inputs.

mod common;

use std::sync::Arc;

use common::gen;
use proptest::prelude::*;
use rand::rngs::StdRng;
use rand::SeedableRng;
use scaleql::assistant::diagnose;
use scaleql::executor::{BoundParams, Engine, ParamValue};
use scaleql::kvstore::latency::Alpha;
use scaleql::kvstore::{Direction, KvStore, MemStore};
use scaleql::logical::{build_logical_plan, LogicalPlan};
use scaleql::physical::{compile, CompileError, Strategy as Exec};
use scaleql::query::render_query;
use scaleql::slo::{ModelKey, ModelSet, OperatorModel};
use scaleql::stops::phase_one;
use scaleql::{parse_ddl, parse_query, Distribution64, Value};

fn ddl_strategy() -> impl Strategy<Value = String> {
    let ty = prop_oneof![
        Just("INT"),
        Just("BOOLEAN"),
        Just("TIMESTAMP"),
        (1u32..80).prop_map(|n| Box::leak(format!("VARCHAR({n})").into_boxed_str()) as &str)
    ];
    let table = (
        prop::collection::vec(ty, 1..6),
        any::<prop::sample::Index>(),
        any::<Option<(prop::sample::Index, u64)>>(),
    );
    prop::collection::vec(table, 1..4).prop_map(|tables| {
        let mut out = String::new();
        for (t, (cols, pk, constraint)) in tables.iter().enumerate() {
            let names: Vec<String> = (0..cols.len()).map(|c| format!("c{c}")).collect();
            let defs: Vec<String> = names
                .iter()
                .zip(cols)
                .map(|(n, ty)| format!("{n} {ty}"))
                .collect();
            let k = pk.index(cols.len()) + 1;
            let mut parts = defs;
            parts.push(format!("PRIMARY KEY ({})", names[..k].join(", ")));
            if let Some((i, limit)) = constraint {
                if k > 1 {
                    let n = i.index(k - 1) + 1;
                    parts.push(format!(
                        "CARDINALITY LIMIT {} ({})",
                        limit % 1000 + 1,
                        names[..n].join(", ")
                    ));
                }
            }
            out += &format!("CREATE TABLE T{t} ({});\n", parts.join(", "));
        }
        out
    })
}

fn contains_data_stop_counts(plan: &LogicalPlan, out: &mut Vec<(String, u64)>) {
    match plan {
        LogicalPlan::DataStop {
            count,
            table,
            input,
            ..
        } => {
            out.push((table.clone(), *count));
            contains_data_stop_counts(input, out);
        }
        LogicalPlan::Join { left, right, .. } => {
            contains_data_stop_counts(left, out);
            contains_data_stop_counts(right, out);
        }
        other => {
            if let Some(i) = other.input() {
                contains_data_stop_counts(i, out);
            }
        }
    }
}

fn is_section(plan: &LogicalPlan) -> bool {
    match plan {
        LogicalPlan::Scan { .. } => true,
        LogicalPlan::Selection { input, .. } | LogicalPlan::DataStop { input, .. } => {
            is_section(input)
        }
        _ => false,
    }
}

fn left_deep(plan: &LogicalPlan) -> bool {
    match plan {
        LogicalPlan::Join { left, right, .. } => is_section(right) && left_deep(left),
        other => other.input().is_none_or(left_deep),
    }
}

fn histogram() -> impl Strategy<Value = Distribution64> {
    prop::collection::vec(0u32..20, 1..25).prop_filter_map("non-empty", |c| {
        Distribution64::from_counts(&c.iter().map(|&x| x as u64).collect::<Vec<_>>())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ddl_round_trips(ddl in ddl_strategy()) {
        let schema = parse_ddl(&ddl).unwrap();
        let again = parse_ddl(&schema.render_ddl()).unwrap();
        prop_assert_eq!(&again, &schema);
        prop_assert_eq!(again.render_ddl(), schema.render_ddl());
    }

    #[test]
    fn query_text_is_a_fixpoint(seed in any::<u64>()) {
        let case = gen::case(&mut StdRng::seed_from_u64(seed));
        let ast = parse_query(&case.sql).unwrap();
        let text = render_query(&ast);
        let back = parse_query(&text).unwrap();
        prop_assert_eq!(&back, &ast);
        prop_assert_eq!(render_query(&back), text);
    }

    #[test]
    fn plans_are_left_deep_and_data_stops_are_declared(seed in any::<u64>()) {
        let schema = gen::schema();
        let case = gen::case(&mut StdRng::seed_from_u64(seed));
        let (_, plan) = build_logical_plan(&parse_query(&case.sql).unwrap(), &schema).unwrap();
        let plan = phase_one(plan, &schema);
        prop_assert!(left_deep(&plan), "{}", plan.pretty());
        let mut stops = Vec::new();
        contains_data_stop_counts(&plan, &mut stops);
        for (table, count) in stops {
            let declared = schema.constraints.iter().any(|c| c.table == table && c.limit == count);
            prop_assert!(count == 1 || declared, "{table}: {count}");
        }
    }

    #[test]
    fn counts_stay_within_the_bound_and_strategies_agree(seed in any::<u64>(), size in 5usize..100) {
        let mut rng = StdRng::seed_from_u64(seed);
        let case = gen::case(&mut rng);
        let db = gen::database(&mut rng, size);
        let mut first: Option<Vec<Vec<Value>>> = None;
        for strategy in [Exec::Lazy, Exec::Simple, Exec::Parallel] {
            let Some(c) = common::compare_case(&case, &db, strategy) else { return Ok(()) };
            prop_assert!(c.agrees(), "{:?}", c);
            let mut rows = c.engine.1.clone();
            rows.sort();
            if let Some(f) = &first {
                prop_assert_eq!(f, &rows);
            }
            first = Some(rows);
            let stats = c.stats.as_ref().unwrap();
            prop_assert!(stats.requests <= c.bound.0 && stats.tuples <= c.bound.1, "{}: {:?} vs {:?}", c.sql, stats, c.bound);
        }
    }

    #[test]
    fn removing_a_constraint_never_admits_a_query(seed in any::<u64>()) {
        let schema = gen::schema();
        let mut loose = schema.clone();
        loose.remove_constraint("B", &["x"]);
        let ast = parse_query(&gen::case(&mut StdRng::seed_from_u64(seed)).sql).unwrap();
        if compile(&ast, &schema).is_err() {
            prop_assert!(compile(&ast, &loose).is_err());
        }
    }

    #[test]
    fn ranges_are_sorted_and_agree_with_gets(keys in prop::collection::btree_set(prop::collection::vec(any::<u8>(), 0..4), 0..40),
                                             lo in prop::collection::vec(any::<u8>(), 0..3),
                                             limit in 1usize..50, desc in any::<bool>()) {
        let store = MemStore::new();
        for k in &keys {
            store.put(k, &[k.len() as u8]).unwrap();
        }
        let dir = if desc { Direction::Descending } else { Direction::Ascending };
        let got = store.get_range(&lo, None, limit, dir).unwrap();
        let want: Vec<&Vec<u8>> = if desc {
            keys.iter().rev().filter(|k| **k >= lo).take(limit).collect()
        } else {
            keys.iter().filter(|k| **k >= lo).take(limit).collect()
        };
        prop_assert_eq!(got.iter().map(|r| &r.key).collect::<Vec<_>>(), want);
        for r in &got {
            prop_assert_eq!(store.get(&r.key).unwrap(), Some(r.value.clone()));
        }
    }

    #[test]
    fn composition_conserves_mass_and_commutes(a in histogram(), b in histogram(), c in histogram()) {
        let ab = a.convolve(&b);
        prop_assert!((ab.total() - 1.0).abs() < 1e-9);
        prop_assert!((a.max_combine(&b).total() - 1.0).abs() < 1e-9);
        prop_assert!(ab.total_variation(&b.convolve(&a)) < 1e-12);
        prop_assert!(ab.convolve(&c).total_variation(&a.convolve(&b.convolve(&c))) < 1e-12);
    }

    #[test]
    fn max_dominates_both_inputs(a in histogram(), b in histogram(), q in 0.01f64..1.0) {
        let m = a.max_combine(&b);
        prop_assert!(m.quantile(q) >= a.quantile(q).max(b.quantile(q)));
    }

    #[test]
    fn lookup_never_returns_a_smaller_setting(trained in prop::collection::vec((1u64..200, 1u64..500), 1..10),
                                              alpha in 1u64..200, beta in 1u64..500) {
        let mut set = ModelSet::default();
        for (a, b) in trained {
            set.insert(OperatorModel { key: ModelKey::new("IndexScan", Alpha::scan(a), b), bins: vec![0, 1] });
        }
        if let Ok(m) = set.lookup("IndexScan", Alpha::scan(alpha), beta) {
            prop_assert!(m.key.alpha.count >= alpha && m.key.beta >= beta);
        }
    }

    #[test]
    fn suggestions_are_sufficient(limit in 1u64..10_000) {
        let mut schema = scaleql::fixtures::scadr_schema();
        schema.remove_constraint("Subscriptions", &["ownerUserId"]);
        let ast = parse_query(scaleql::fixtures::THOUGHTSTREAM).unwrap();
        let Err(CompileError::NotScaleIndependent(e)) = compile(&ast, &schema) else { panic!("accepted") };
        let d = diagnose(&ast, &e, &schema);
        prop_assert!(!d.suggestions.is_empty());
        for s in d.suggestions {
            let mut fixed = schema.clone();
            fixed.set_constraint(scaleql::catalog::CardinalityConstraint { table: s.table, attributes: s.attributes, limit }).unwrap();
            prop_assert!(compile(&ast, &fixed).is_ok());
        }
    }

    #[test]
    fn cursors_resume_on_another_engine(seed in any::<u64>(), page in 1u64..6) {
        let schema = gen::schema();
        let mut rng = StdRng::seed_from_u64(seed);
        let db = gen::database(&mut rng, 60);
        let store = Arc::new(MemStore::new());
        let sql = format!("SELECT * FROM B WHERE B.x = [1: x] ORDER BY B.y DESC PAGINATE {page}");
        let compiled = compile(&parse_query(&sql).unwrap(), &schema).unwrap();
        let mut engine = Engine::new(store.clone(), schema.clone());
        engine.prepare(&compiled).unwrap();
        for (t, rows) in &db {
            for r in rows {
                engine.insert(t, r.clone()).unwrap();
            }
        }
        let x = db["B"].first().map_or(Value::Int(0), |r| r[0].clone());
        let params = BoundParams::bind(&compiled.query.params, [("x".to_string(), ParamValue::One(x))].into()).unwrap();
        let other = Engine::new(Arc::new(MemStore::from_records(store.snapshot())), engine.schema().clone());
        let mut cursor: Option<String> = None;
        loop {
            let a = engine.execute_page(&compiled, &params, Exec::Parallel, cursor.as_deref()).unwrap();
            let b = other.execute_page(&compiled, &params, Exec::Parallel, cursor.as_deref()).unwrap();
            prop_assert_eq!(&a.rows, &b.rows);
            prop_assert_eq!(&a.cursor, &b.cursor);
            match a.cursor {
                Some(c) => cursor = Some(c),
                None => break,
            }
        }
    }
}
