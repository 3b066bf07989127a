//! Page cursors and the total output order they resume from.
//!
//! Results are ordered by the ORDER BY keys, then by the primary keys of
//! every relation in join order (in the direction of the first ORDER BY
//! key). A cursor records this key for the last row of a page; each
//! stop-limited index range repositions itself just past it.

use std::cmp::Ordering;

use base64::engine::general_purpose::URL_SAFE_NO_PAD;
use base64::Engine as _;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::catalog::Schema;
use crate::kvstore::keycodec::{encode_field, prefix_end, successor};
use crate::kvstore::Direction;
use crate::query::OrderKey;
use crate::value::{ColumnType, Value};

/// One field of the total order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TieField {
    pub table: String,
    pub column: String,
    pub descending: bool,
}

/// The total order of result rows.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TieOrder {
    pub fields: Vec<TieField>,
}

impl TieOrder {
    pub fn new(order_by: &[OrderKey], relations: &[String], schema: &Schema) -> Self {
        let desc = order_by.first().is_some_and(|k| k.descending);
        let mut fields: Vec<TieField> = Vec::new();
        let mut push = |table: &str, column: &str, descending: bool| {
            if !fields
                .iter()
                .any(|f| f.table == table && f.column == column)
            {
                fields.push(TieField {
                    table: table.to_string(),
                    column: column.to_string(),
                    descending,
                });
            }
        };
        for k in order_by {
            push(
                k.column.table.as_deref().unwrap_or(""),
                &k.column.column,
                k.descending,
            );
        }
        for r in relations {
            if let Some(t) = schema.table(r) {
                for c in &t.primary_key {
                    push(r, c, desc);
                }
            }
        }
        TieOrder { fields }
    }

    /// Positions (in `self.fields`) of the fields over `relations`.
    pub fn positions(&self, relations: &[String]) -> Vec<usize> {
        (0..self.fields.len())
            .filter(|&i| relations.contains(&self.fields[i].table))
            .collect()
    }

    /// Compares two key vectors laid out as `positions` of this order.
    pub fn compare(&self, positions: &[usize], a: &[Value], b: &[Value]) -> Ordering {
        for (j, &i) in positions.iter().enumerate() {
            let o = a[j].cmp(&b[j]);
            let o = if self.fields[i].descending {
                o.reverse()
            } else {
                o
            };
            if o != Ordering::Equal {
                return o;
            }
        }
        Ordering::Equal
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CursorError {
    #[error("corrupted cursor")]
    Corrupt,
    #[error("unsupported cursor version {0}")]
    Version(u8),
    #[error("cursor was produced by a different query or parameters")]
    Mismatch,
}

const VERSION: u8 = 1;
const CHECKSUM_LEN: usize = 8;

/// Client-held pagination state.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PageCursor {
    /// Hash of the canonical plan and parameter values.
    pub query_id: String,
    pub page_size: u64,
    /// Total-order key of the last row returned.
    pub last_key: Vec<Value>,
}

impl PageCursor {
    /// Version byte, JSON body and truncated SHA-256 checksum, base64.
    pub fn encode(&self) -> String {
        let body = serde_json::to_vec(self).expect("cursor serializes");
        let mut bytes = vec![VERSION];
        bytes.extend_from_slice(&body);
        let sum = Sha256::digest(&bytes);
        bytes.extend_from_slice(&sum[..CHECKSUM_LEN]);
        URL_SAFE_NO_PAD.encode(bytes)
    }

    pub fn decode(token: &str) -> Result<Self, CursorError> {
        let bytes = URL_SAFE_NO_PAD
            .decode(token.trim())
            .map_err(|_| CursorError::Corrupt)?;
        if bytes.len() <= 1 + CHECKSUM_LEN {
            return Err(CursorError::Corrupt);
        }
        let (data, sum) = bytes.split_at(bytes.len() - CHECKSUM_LEN);
        if Sha256::digest(data)[..CHECKSUM_LEN] != *sum {
            return Err(CursorError::Corrupt);
        }
        if data[0] != VERSION {
            return Err(CursorError::Version(data[0]));
        }
        serde_json::from_slice(&data[1..]).map_err(|_| CursorError::Corrupt)
    }
}

/// Identifies a query execution for cursor validation.
pub fn query_id(plan_json: &str, params_json: &str) -> String {
    let mut h = Sha256::new();
    h.update(plan_json.as_bytes());
    h.update([0]);
    h.update(params_json.as_bytes());
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// How one field of the total order relates to an index range.
pub(crate) enum RunField {
    /// Fixed for every row of the range.
    Constant(Value),
    /// Varies within the range, in index order.
    Varying(ColumnType),
}

/// Where the rows after `last` start within one index range whose keys begin
/// with `prefix`. `fields` follow the total order (restricted to the
/// operator's relations), and the varying ones are exactly the index fields
/// after the prefix, in order. The result is intersected with the range.
pub(crate) fn resume_bound(
    order: &TieOrder,
    positions: &[usize],
    fields: &[RunField],
    last: &[Value],
    prefix: &[u8],
    direction: Direction,
) -> Resume {
    enum Decision {
        After,
        Before,
        Tied,
    }
    let mut key = prefix.to_vec();
    let mut decision = Decision::Tied;
    for ((f, v), &i) in fields.iter().zip(last).zip(positions) {
        match f {
            RunField::Constant(c) => {
                let o = c.cmp(v);
                let o = if order.fields[i].descending {
                    o.reverse()
                } else {
                    o
                };
                match o {
                    Ordering::Greater => {
                        decision = Decision::After;
                        break;
                    }
                    Ordering::Less => {
                        decision = Decision::Before;
                        break;
                    }
                    Ordering::Equal => {}
                }
            }
            RunField::Varying(ty) => {
                let v = v.clone().coerce(*ty).unwrap_or_else(|| v.clone());
                encode_field(&mut key, &v);
            }
        }
    }
    // Rows are `> last` in output order. Ascending scans move the lower
    // bound up; descending scans move the upper bound down.
    let upper = |k: Option<Vec<u8>>| k.map_or(Resume::Unchanged, Resume::Upper);
    match (decision, direction) {
        (Decision::After, Direction::Ascending) => Resume::Lower(key),
        (Decision::After, Direction::Descending) => upper(prefix_end(&key)),
        (Decision::Before, Direction::Ascending) => {
            prefix_end(&key).map_or(Resume::Empty, Resume::Lower)
        }
        (Decision::Before, Direction::Descending) => Resume::Upper(key),
        (Decision::Tied, Direction::Ascending) => Resume::Lower(successor(&key)),
        (Decision::Tied, Direction::Descending) => Resume::Upper(key),
    }
}

/// Adjustment of an index range so that it starts after a cursor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) enum Resume {
    Lower(Vec<u8>),
    Upper(Vec<u8>),
    Empty,
    Unchanged,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cursor_round_trip_and_corruption() {
        let c = PageCursor {
            query_id: "abc".into(),
            page_size: 10,
            last_key: vec![Value::Timestamp(5), Value::Str("bob".into())],
        };
        let t = c.encode();
        assert_eq!(PageCursor::decode(&t).unwrap(), c);
        let mut bad = t.clone().into_bytes();
        let i = bad.len() / 2;
        bad[i] = if bad[i] == b'A' { b'B' } else { b'A' };
        assert_eq!(
            PageCursor::decode(std::str::from_utf8(&bad).unwrap()),
            Err(CursorError::Corrupt)
        );
        assert_eq!(PageCursor::decode("!!"), Err(CursorError::Corrupt));
    }

    fn order(desc: bool) -> TieOrder {
        TieOrder {
            fields: vec![
                TieField {
                    table: "T".into(),
                    column: "ts".into(),
                    descending: desc,
                },
                TieField {
                    table: "S".into(),
                    column: "owner".into(),
                    descending: desc,
                },
                TieField {
                    table: "T".into(),
                    column: "user".into(),
                    descending: desc,
                },
            ],
        }
    }

    #[test]
    fn runs_before_and_after_the_last_left_key() {
        let o = order(false);
        let last = [
            Value::Int(7),
            Value::Str("m".into()),
            Value::Str("x".into()),
        ];
        let fields = |owner: &str, user: &str| {
            vec![
                RunField::Varying(ColumnType::Int),
                RunField::Constant(Value::Str(owner.into())),
                RunField::Constant(Value::Str(user.into())),
            ]
        };
        let mut seven = Vec::new();
        encode_field(&mut seven, &Value::Int(7));
        let p = [0u8];
        let with = |k: &[u8]| [&p[..], k].concat();
        // Later left key: ties on ts are still ahead.
        assert_eq!(
            resume_bound(
                &o,
                &[0, 1, 2],
                &fields("z", "q"),
                &last,
                &p,
                Direction::Ascending
            ),
            Resume::Lower(with(&seven))
        );
        // Earlier left key: skip the whole ts group.
        assert_eq!(
            resume_bound(
                &o,
                &[0, 1, 2],
                &fields("a", "q"),
                &last,
                &p,
                Direction::Ascending
            ),
            Resume::Lower(prefix_end(&with(&seven)).unwrap())
        );
        // Same run: strictly after the key itself.
        assert_eq!(
            resume_bound(
                &o,
                &[0, 1, 2],
                &fields("m", "x"),
                &last,
                &p,
                Direction::Ascending
            ),
            Resume::Lower(successor(&with(&seven)))
        );
        assert_eq!(
            resume_bound(
                &order(true),
                &[0, 1, 2],
                &fields("m", "x"),
                &last,
                &p,
                Direction::Descending
            ),
            Resume::Upper(with(&seven))
        );
    }
}
