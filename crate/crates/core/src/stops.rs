//! Phase I: data-stop insertion and stop pushdown.

use std::collections::BTreeSet;

use crate::catalog::Schema;
use crate::logical::{bound_equality, LogicalPlan};
use crate::query::{CmpOp, Operand, OrderKey, Predicate};

/// Peels a relation section (selections over a scan) into its table and its
/// predicates, bottom first. Returns `None` for anything else.
pub(crate) fn section_parts(plan: &LogicalPlan) -> Option<(&str, Vec<&Predicate>)> {
    let mut preds = Vec::new();
    let mut node = plan;
    loop {
        match node {
            LogicalPlan::Selection { predicate, input } => {
                preds.push(predicate);
                node = input;
            }
            LogicalPlan::Scan { table } => {
                preds.reverse();
                return Some((table, preds));
            }
            _ => return None,
        }
    }
}

/// The data stop justified by a set of bound equality attributes: the primary
/// key if covered (count 1), else the covered constraint with the smallest
/// limit. Returns `(count, causing attributes)`.
pub fn data_stop_for(
    schema: &Schema,
    table: &str,
    bound: &BTreeSet<&str>,
) -> Option<(u64, Vec<String>)> {
    let t = schema.table(table)?;
    if t.primary_key.iter().all(|k| bound.contains(k.as_str())) {
        return Some((1, t.primary_key.clone()));
    }
    schema
        .constraints_on(table)
        .filter(|c| c.attributes.iter().all(|a| bound.contains(a.as_str())))
        .min_by_key(|c| c.limit)
        .map(|c| (c.limit, c.attributes.clone()))
}

/// Inserts a `DataStop` at the top of every relation section whose bound
/// equality predicates cover the primary key or a cardinality constraint.
/// The causing predicates are moved to the bottom of the section so that
/// pushdown can bring the stop right above them.
pub fn insert_data_stops(plan: LogicalPlan, schema: &Schema) -> LogicalPlan {
    if let Some((table, preds)) = section_parts(&plan) {
        let bound: BTreeSet<&str> = preds.iter().filter_map(|p| bound_equality(p)).collect();
        let Some((count, attributes)) = data_stop_for(schema, table, &bound) else {
            return plan;
        };
        let causing =
            |p: &Predicate| bound_equality(p).is_some_and(|a| attributes.iter().any(|x| x == a));
        let (mut order, rest): (Vec<&Predicate>, Vec<&Predicate>) =
            preds.into_iter().partition(|p| causing(p));
        order.extend(rest);
        let table = table.to_string();
        let mut node = LogicalPlan::Scan {
            table: table.clone(),
        };
        for p in order {
            node = LogicalPlan::Selection {
                predicate: p.clone(),
                input: Box::new(node),
            };
        }
        return LogicalPlan::DataStop {
            count,
            table,
            attributes,
            input: Box::new(node),
        };
    }
    map_children(plan, &mut |p| insert_data_stops(p, schema))
}

fn map_children(plan: LogicalPlan, f: &mut dyn FnMut(LogicalPlan) -> LogicalPlan) -> LogicalPlan {
    match plan {
        LogicalPlan::Scan { .. } => plan,
        LogicalPlan::Selection { predicate, input } => LogicalPlan::Selection {
            predicate,
            input: Box::new(f(*input)),
        },
        LogicalPlan::Join {
            predicates,
            left,
            right,
        } => LogicalPlan::Join {
            predicates,
            left: Box::new(f(*left)),
            right: Box::new(f(*right)),
        },
        LogicalPlan::Sort { keys, input } => LogicalPlan::Sort {
            keys,
            input: Box::new(f(*input)),
        },
        LogicalPlan::Stop { count, kind, input } => LogicalPlan::Stop {
            count,
            kind,
            input: Box::new(f(*input)),
        },
        LogicalPlan::DataStop {
            count,
            table,
            attributes,
            input,
        } => LogicalPlan::DataStop {
            count,
            table,
            attributes,
            input: Box::new(f(*input)),
        },
        LogicalPlan::Aggregate {
            group_by,
            outputs,
            input,
        } => LogicalPlan::Aggregate {
            group_by,
            outputs,
            input: Box::new(f(*input)),
        },
    }
}

/// Whether a stop (with optional sort `keys`) may move from above `join` to
/// its left input: the join looks up exactly one right tuple per left tuple
/// (its equalities cover the right primary key and the right side carries no
/// selections), and the sort only reads left columns. Assumes every
/// referenced right tuple exists.
pub fn key_preserving(join: &LogicalPlan, keys: &[OrderKey], schema: &Schema) -> bool {
    let LogicalPlan::Join {
        predicates,
        left,
        right,
    } = join
    else {
        return false;
    };
    let LogicalPlan::Scan { table } = right.as_ref() else {
        return false;
    };
    let Some(t) = schema.table(table) else {
        return false;
    };
    let joined: BTreeSet<&str> = predicates
        .iter()
        .filter_map(|p| match p {
            Predicate::Compare {
                left,
                op: CmpOp::Eq,
                right: Operand::Column(_),
            } if left.table.as_deref() == Some(table.as_str()) => Some(left.column.as_str()),
            _ => None,
        })
        .collect();
    let left_rel = left.relations();
    t.primary_key.iter().all(|k| joined.contains(k.as_str()))
        && keys.iter().all(|k| {
            k.column
                .table
                .as_ref()
                .is_some_and(|x| left_rel.contains(x))
        })
}

/// Pushes stops toward the leaves. A `Stop` (with the `Sort` right below it)
/// only crosses key-preserving joins; a `DataStop` crosses every selection
/// that does not touch its causing attributes.
pub fn stop_push_down(plan: LogicalPlan, schema: &Schema) -> LogicalPlan {
    match plan {
        LogicalPlan::Stop { count, kind, input } => match *input {
            LogicalPlan::Sort { keys, input: inner } if key_preserving(&inner, &keys, schema) => {
                let LogicalPlan::Join {
                    predicates,
                    left,
                    right,
                } = *inner
                else {
                    unreachable!()
                };
                let pushed = LogicalPlan::Stop {
                    count,
                    kind,
                    input: Box::new(LogicalPlan::Sort { keys, input: left }),
                };
                LogicalPlan::Join {
                    predicates,
                    left: Box::new(stop_push_down(pushed, schema)),
                    right,
                }
            }
            join @ LogicalPlan::Join { .. } if key_preserving(&join, &[], schema) => {
                let LogicalPlan::Join {
                    predicates,
                    left,
                    right,
                } = join
                else {
                    unreachable!()
                };
                let pushed = LogicalPlan::Stop {
                    count,
                    kind,
                    input: left,
                };
                LogicalPlan::Join {
                    predicates,
                    left: Box::new(stop_push_down(pushed, schema)),
                    right,
                }
            }
            other => LogicalPlan::Stop {
                count,
                kind,
                input: Box::new(stop_push_down(other, schema)),
            },
        },
        LogicalPlan::DataStop {
            count,
            table,
            attributes,
            input,
        } => match *input {
            LogicalPlan::Selection {
                predicate,
                input: inner,
            } if !attributes.iter().any(|a| *a == predicate.column().column) => {
                let below = LogicalPlan::DataStop {
                    count,
                    table,
                    attributes,
                    input: inner,
                };
                LogicalPlan::Selection {
                    predicate,
                    input: Box::new(stop_push_down(below, schema)),
                }
            }
            other => LogicalPlan::DataStop {
                count,
                table,
                attributes,
                input: Box::new(stop_push_down(other, schema)),
            },
        },
        other => map_children(other, &mut |p| stop_push_down(p, schema)),
    }
}

/// Data-stop insertion followed by stop pushdown.
pub fn phase_one(plan: LogicalPlan, schema: &Schema) -> LogicalPlan {
    stop_push_down(insert_data_stops(plan, schema), schema)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::parse_ddl;
    use crate::logical::build_logical_plan;
    use crate::query::parse_query;

    fn schema() -> Schema {
        parse_ddl(
            "CREATE TABLE Users (username VARCHAR(255), hometown VARCHAR(64), PRIMARY KEY (username))
             CREATE TABLE Subscriptions (ownerUserId VARCHAR(255), targetUserId VARCHAR(255), approved BOOLEAN,
               PRIMARY KEY (ownerUserId, targetUserId), CARDINALITY LIMIT 100 (ownerUserId))
             CREATE TABLE Thoughts (username VARCHAR(255), timestamp TIMESTAMP, text VARCHAR(140),
               PRIMARY KEY (username, timestamp))",
        )
        .unwrap()
    }

    fn phase1(q: &str) -> String {
        let s = schema();
        let (_, plan) = build_logical_plan(&parse_query(q).unwrap(), &s).unwrap();
        phase_one(plan, &s).to_string()
    }

    #[test]
    fn thoughtstream_data_stop_sits_below_approved() {
        // approved listed first: the causing predicate still ends up lowest.
        let got = phase1(
            "SELECT * FROM Subscriptions, Thoughts WHERE Subscriptions.approved = true
               AND Subscriptions.ownerUserId = [1: username]
               AND Thoughts.username = Subscriptions.targetUserId
             ORDER BY Thoughts.timestamp DESC PAGINATE 10",
        );
        let expected = "\
Stop(10, paginate)
  Sort(Thoughts.timestamp DESC)
    Join(Thoughts.username = Subscriptions.targetUserId)
      Selection(Subscriptions.approved = TRUE)
        DataStop(100, Subscriptions(ownerUserId))
          Selection(Subscriptions.ownerUserId = [1: username])
            Scan(Subscriptions)
      Scan(Thoughts)
";
        assert_eq!(got, expected);
    }

    #[test]
    fn primary_key_gives_unit_data_stop() {
        assert_eq!(
            phase1("SELECT * FROM Users WHERE username = [1: u]"),
            "DataStop(1, Users(username))\n  Selection(Users.username = [1: u])\n    Scan(Users)\n"
        );
    }

    #[test]
    fn pk_beats_constraint() {
        let got =
            phase1("SELECT * FROM Subscriptions WHERE ownerUserId = 'a' AND targetUserId = 'b'");
        assert!(
            got.starts_with("DataStop(1, Subscriptions(ownerUserId, targetUserId))"),
            "{got}"
        );
    }

    #[test]
    fn no_qualifying_equality_is_unchanged() {
        let s = schema();
        let (_, plan) = build_logical_plan(
            &parse_query("SELECT * FROM Subscriptions WHERE approved = true").unwrap(),
            &s,
        )
        .unwrap();
        assert_eq!(phase_one(plan.clone(), &s), plan);
    }

    #[test]
    fn stop_stays_above_selection() {
        assert_eq!(
            phase1("SELECT * FROM Thoughts WHERE text = 'x' LIMIT 50"),
            "Stop(50, limit)\n  Selection(Thoughts.text = 'x')\n    Scan(Thoughts)\n"
        );
    }

    #[test]
    fn stop_crosses_key_preserving_join() {
        let got = phase1(
            "SELECT * FROM Thoughts, Users WHERE Thoughts.username = [1: u] AND Users.username = Thoughts.username
             ORDER BY Thoughts.timestamp DESC LIMIT 5",
        );
        let expected = "\
Join(Users.username = Thoughts.username)
  Stop(5, limit)
    Sort(Thoughts.timestamp DESC)
      Selection(Thoughts.username = [1: u])
        Scan(Thoughts)
  Scan(Users)
";
        assert_eq!(got, expected);
    }

    #[test]
    fn no_stops_is_identity() {
        let s = schema();
        let (_, plan) = build_logical_plan(
            &parse_query("SELECT * FROM Thoughts, Users WHERE Users.username = Thoughts.username")
                .unwrap(),
            &s,
        )
        .unwrap();
        assert_eq!(stop_push_down(plan.clone(), &s), plan);
    }
}
