//! Record and index layout on the key/value store, and the write protocols.
//!
//! Every key starts with an encoded namespace string: `t/<table>` for base
//! records (keyed by primary key, valued by the full tuple) and
//! `i/<index name>` for secondary entries (keyed by the index fields, valued
//! by the primary key). A token field contributes one entry per distinct
//! token of the column.

use std::collections::BTreeSet;

use thiserror::Error;

use crate::catalog::{IndexDef, IndexField, Schema, TableDef};
use crate::kvstore::keycodec::{
    decode_key, decode_tuple, encode_field, encode_tuple, prefix_end, CodecError,
};
use crate::kvstore::{Direction, KvError, KvStore};
use crate::value::{ColumnType, Value};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum WriteError {
    #[error("unknown table {0}")]
    UnknownTable(String),
    #[error("{table}: expected {expected} values, got {found}")]
    Arity {
        table: String,
        expected: usize,
        found: usize,
    },
    #[error("{table}.{column}: expected {expected}, got {found}")]
    TypeMismatch {
        table: String,
        column: String,
        expected: ColumnType,
        found: ColumnType,
    },
    #[error("{table}: a tuple with this primary key already exists")]
    DuplicateKey { table: String },
    #[error("{table}: no tuple with this primary key")]
    NotFound { table: String },
    #[error("cardinality violation on {table}({attributes}): limit {limit}")]
    CardinalityViolation {
        table: String,
        attributes: String,
        limit: u64,
    },
    #[error("write aborted by injected fault at {0:?}")]
    Aborted(FaultPoint),
    #[error(transparent)]
    Store(#[from] KvError),
    #[error("corrupt record: {0}")]
    Codec(#[from] CodecError),
}

/// Places where a fault-injection test may abort a write.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FaultPoint {
    /// New index entries are written, the base record is not.
    AfterIndexPuts,
    /// The base record is written, the cardinality check has not run.
    AfterBaseWrite,
}

/// Lowercased alphanumeric runs; empty tokens are dropped.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

pub(crate) fn namespace_prefix(namespace: &str) -> Vec<u8> {
    let mut out = Vec::new();
    encode_field(&mut out, &Value::Str(namespace.to_string()));
    out
}

pub(crate) fn record_key(table: &TableDef, tuple: &[Value]) -> Vec<u8> {
    let mut key = namespace_prefix(&format!("t/{}", table.name));
    for i in table.pk_indices() {
        encode_field(&mut key, &tuple[i]);
    }
    key
}

pub(crate) fn pk_of(table: &TableDef, tuple: &[Value]) -> Vec<Value> {
    table
        .pk_indices()
        .into_iter()
        .map(|i| tuple[i].clone())
        .collect()
}

pub(crate) fn key_from_pk(table: &TableDef, pk: &[Value]) -> Vec<u8> {
    let mut key = namespace_prefix(&format!("t/{}", table.name));
    for v in pk {
        encode_field(&mut key, v);
    }
    key
}

/// All keys `tuple` has in secondary index `index`.
pub(crate) fn index_keys(index: &IndexDef, table: &TableDef, tuple: &[Value]) -> Vec<Vec<u8>> {
    let base = namespace_prefix(&index.namespace(table));
    let token_col = index.fields.iter().find_map(|f| match f {
        IndexField::Token(c) => Some(c),
        IndexField::Column(_) => None,
    });
    let tokens: Vec<Option<String>> = match token_col {
        None => vec![None],
        Some(c) => {
            let text = match &tuple[table.column_index(c).expect("validated index")] {
                Value::Str(s) => s.clone(),
                _ => String::new(),
            };
            tokenize(&text)
                .into_iter()
                .collect::<BTreeSet<_>>()
                .into_iter()
                .map(Some)
                .collect()
        }
    };
    tokens
        .into_iter()
        .map(|tok| {
            let mut key = base.clone();
            for f in &index.fields {
                match f {
                    IndexField::Token(_) => {
                        encode_field(&mut key, &Value::Str(tok.clone().unwrap_or_default()))
                    }
                    IndexField::Column(c) => {
                        encode_field(&mut key, &tuple[table.column_index(c).expect("validated")])
                    }
                }
            }
            key
        })
        .collect()
}

fn secondary_entries(
    schema: &Schema,
    table: &TableDef,
    tuple: &[Value],
) -> Vec<(Vec<u8>, Vec<u8>)> {
    let value = encode_tuple(&pk_of(table, tuple));
    schema
        .indexes_on(&table.name)
        .filter(|idx| !idx.is_primary(table))
        .flat_map(|idx| index_keys(idx, table, tuple))
        .map(|k| (k, value.clone()))
        .collect()
}

pub(crate) fn decode_record(table: &TableDef, bytes: &[u8]) -> Result<Vec<Value>, CodecError> {
    decode_tuple(bytes, &table.column_types())
}

/// Whether the secondary entry `key` is one of `tuple`'s current entries.
pub(crate) fn entry_is_live(
    index: &IndexDef,
    table: &TableDef,
    tuple: &[Value],
    key: &[u8],
) -> bool {
    index_keys(index, table, tuple).iter().any(|k| k == key)
}

fn check_tuple(table: &TableDef, values: Vec<Value>) -> Result<Vec<Value>, WriteError> {
    if values.len() != table.columns.len() {
        return Err(WriteError::Arity {
            table: table.name.clone(),
            expected: table.columns.len(),
            found: values.len(),
        });
    }
    values
        .into_iter()
        .zip(&table.columns)
        .map(|(v, c)| {
            let found = v.column_type();
            v.coerce(c.ty).ok_or(WriteError::TypeMismatch {
                table: table.name.clone(),
                column: c.name.clone(),
                expected: c.ty,
                found,
            })
        })
        .collect()
}

/// Checks every cardinality constraint on `table` touched by `tuple`.
fn violated_constraint(
    store: &dyn KvStore,
    schema: &Schema,
    table: &TableDef,
    tuple: &[Value],
) -> Result<Option<WriteError>, WriteError> {
    for c in schema.constraints_on(&table.name) {
        let idx = schema
            .counting_index(&table.name, &c.attributes)
            .expect("constraint registers its counting index");
        let mut prefix = namespace_prefix(&idx.namespace(table));
        for f in &idx.fields[..c.attributes.len()] {
            encode_field(
                &mut prefix,
                &tuple[table.column_index(f.column()).expect("validated")],
            );
        }
        let count = store.count_range(&prefix, prefix_end(&prefix).as_deref())?;
        if count > c.limit {
            return Ok(Some(WriteError::CardinalityViolation {
                table: table.name.clone(),
                attributes: c.attributes.join(", "),
                limit: c.limit,
            }));
        }
    }
    Ok(None)
}

/// Insert: put secondary entries, test-and-set the base record, then check
/// cardinality constraints by counting, undoing the insert on violation.
pub fn insert(
    store: &dyn KvStore,
    schema: &Schema,
    table: &str,
    values: Vec<Value>,
    fault: Option<FaultPoint>,
) -> Result<(), WriteError> {
    let t = schema
        .table(table)
        .ok_or_else(|| WriteError::UnknownTable(table.to_string()))?;
    let tuple = check_tuple(t, values)?;
    let entries = secondary_entries(schema, t, &tuple);
    for (k, v) in &entries {
        store.put(k, v)?;
    }
    if fault == Some(FaultPoint::AfterIndexPuts) {
        return Err(WriteError::Aborted(FaultPoint::AfterIndexPuts));
    }
    let key = record_key(t, &tuple);
    if !store.test_and_set(&key, None, &encode_tuple(&tuple))? {
        // Keep entries the existing record shares with ours.
        let existing = match store.get(&key)? {
            Some(bytes) => secondary_entries(schema, t, &decode_record(t, &bytes)?),
            None => Vec::new(),
        };
        for (k, _) in entries.iter().filter(|e| !existing.contains(e)) {
            store.delete(k)?;
        }
        return Err(WriteError::DuplicateKey {
            table: table.to_string(),
        });
    }
    if fault == Some(FaultPoint::AfterBaseWrite) {
        return Err(WriteError::Aborted(FaultPoint::AfterBaseWrite));
    }
    if let Some(err) = violated_constraint(store, schema, t, &tuple)? {
        store.delete(&key)?;
        for (k, _) in &entries {
            store.delete(k)?;
        }
        return Err(err);
    }
    Ok(())
}

/// Update by primary key: put new entries, swap the base record, delete
/// stale entries.
pub fn update(
    store: &dyn KvStore,
    schema: &Schema,
    table: &str,
    values: Vec<Value>,
) -> Result<(), WriteError> {
    let t = schema
        .table(table)
        .ok_or_else(|| WriteError::UnknownTable(table.to_string()))?;
    let tuple = check_tuple(t, values)?;
    let key = record_key(t, &tuple);
    let not_found = || WriteError::NotFound {
        table: table.to_string(),
    };
    let old_bytes = store.get(&key)?.ok_or_else(not_found)?;
    let old = decode_record(t, &old_bytes)?;
    let old_entries = secondary_entries(schema, t, &old);
    let new_entries = secondary_entries(schema, t, &tuple);
    let added: Vec<_> = new_entries
        .iter()
        .filter(|e| !old_entries.contains(e))
        .collect();
    for (k, v) in &added {
        store.put(k, v)?;
    }
    let new_bytes = encode_tuple(&tuple);
    if !store.test_and_set(&key, Some(&old_bytes), &new_bytes)? {
        for (k, _) in &added {
            store.delete(k)?;
        }
        return Err(WriteError::NotFound {
            table: table.to_string(),
        });
    }
    if let Some(err) = violated_constraint(store, schema, t, &tuple)? {
        store.test_and_set(&key, Some(&new_bytes), &old_bytes)?;
        for (k, _) in &added {
            store.delete(k)?;
        }
        return Err(err);
    }
    for (k, _) in old_entries.iter().filter(|e| !new_entries.contains(e)) {
        store.delete(k)?;
    }
    Ok(())
}

/// Delete by primary key: base record first, then its entries.
pub fn delete(
    store: &dyn KvStore,
    schema: &Schema,
    table: &str,
    pk: Vec<Value>,
) -> Result<(), WriteError> {
    let t = schema
        .table(table)
        .ok_or_else(|| WriteError::UnknownTable(table.to_string()))?;
    let pk: Vec<Value> = pk
        .into_iter()
        .zip(t.pk_types())
        .map(|(v, ty)| v.clone().coerce(ty).unwrap_or(v))
        .collect();
    let key = key_from_pk(t, &pk);
    let old = decode_record(
        t,
        &store.get(&key)?.ok_or(WriteError::NotFound {
            table: table.to_string(),
        })?,
    )?;
    store.delete(&key)?;
    for (k, _) in secondary_entries(schema, t, &old) {
        store.delete(&k)?;
    }
    Ok(())
}

const SWEEP_BATCH: usize = 512;

/// Every record under a namespace, read in batches.
pub(crate) fn scan_namespace(
    store: &dyn KvStore,
    namespace: &str,
) -> Result<Vec<(Vec<u8>, Vec<u8>)>, KvError> {
    let prefix = namespace_prefix(namespace);
    let end = prefix_end(&prefix);
    let mut start = prefix.clone();
    let mut out = Vec::new();
    loop {
        let batch = store.get_range(&start, end.as_deref(), SWEEP_BATCH, Direction::Ascending)?;
        let done = batch.len() < SWEEP_BATCH;
        if let Some(last) = batch.last() {
            start = crate::kvstore::keycodec::successor(&last.key);
        }
        out.extend(batch.into_iter().map(|r| (r.key, r.value)));
        if done {
            return Ok(out);
        }
    }
}

/// Writes the entries of `index` for every existing tuple of its table.
pub fn backfill(store: &dyn KvStore, schema: &Schema, index: &IndexDef) -> Result<(), WriteError> {
    let t = schema
        .table(&index.table)
        .ok_or_else(|| WriteError::UnknownTable(index.table.clone()))?;
    if index.is_primary(t) {
        return Ok(());
    }
    for (_, bytes) in scan_namespace(store, &format!("t/{}", t.name))? {
        let tuple = decode_record(t, &bytes)?;
        let value = encode_tuple(&pk_of(t, &tuple));
        for k in index_keys(index, t, &tuple) {
            store.put(&k, &value)?;
        }
    }
    Ok(())
}

/// Offline sweep: deletes every secondary entry whose base record is absent
/// or no longer produces that entry. Returns the number removed.
pub fn gc_sweep(store: &dyn KvStore, schema: &Schema) -> Result<usize, WriteError> {
    let mut removed = 0;
    for idx in &schema.indexes {
        let t = schema
            .table(&idx.table)
            .ok_or_else(|| WriteError::UnknownTable(idx.table.clone()))?;
        if idx.is_primary(t) {
            continue;
        }
        for (key, value) in scan_namespace(store, &idx.namespace(t))? {
            let pk = decode_tuple(&value, &t.pk_types())?;
            let live = match store.get(&key_from_pk(t, &pk))? {
                Some(bytes) => entry_is_live(idx, t, &decode_record(t, &bytes)?, &key),
                None => false,
            };
            if !live {
                store.delete(&key)?;
                removed += 1;
            }
        }
    }
    Ok(removed)
}

/// Decodes the field values of a secondary index key.
#[allow(dead_code)]
pub(crate) fn decode_index_key(
    index: &IndexDef,
    table: &TableDef,
    key: &[u8],
) -> Result<Vec<Value>, CodecError> {
    let skip = namespace_prefix(&index.namespace(table)).len();
    decode_key(&key[skip..], &index.field_types(table))
}
