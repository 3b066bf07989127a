//! A database on disk: the schema (with every created index) plus all store
//! records, as one JSON document.

use std::fs;
use std::io;
use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::Schema;
use crate::kvstore::{KvRecord, MemStore};

pub const DB_FILE_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum DbFileError {
    #[error("{0}")]
    Io(#[from] io::Error),
    #[error("malformed database file: {0}")]
    Json(#[from] serde_json::Error),
    #[error("malformed database file: {0}")]
    Format(String),
}

#[derive(Serialize, Deserialize)]
struct Document {
    version: u32,
    schema: Schema,
    /// Base64 key and value per record, in key order.
    records: Vec<(String, String)>,
}

pub fn to_json(schema: &Schema, store: &MemStore) -> String {
    let doc = Document {
        version: DB_FILE_VERSION,
        schema: schema.clone(),
        records: store
            .snapshot()
            .into_iter()
            .map(|r| (STANDARD.encode(r.key), STANDARD.encode(r.value)))
            .collect(),
    };
    serde_json::to_string(&doc).expect("database serializes")
}

pub fn from_json(text: &str) -> Result<(Schema, MemStore), DbFileError> {
    let doc: Document = serde_json::from_str(text)?;
    if doc.version != DB_FILE_VERSION {
        return Err(DbFileError::Format(format!(
            "unsupported version {}",
            doc.version
        )));
    }
    let decode = |s: &str| {
        STANDARD
            .decode(s)
            .map_err(|e| DbFileError::Format(e.to_string()))
    };
    let records = doc
        .records
        .iter()
        .map(|(k, v)| {
            Ok(KvRecord {
                key: decode(k)?,
                value: decode(v)?,
            })
        })
        .collect::<Result<Vec<_>, DbFileError>>()?;
    Ok((doc.schema, MemStore::from_records(records)))
}

pub fn save(path: &Path, schema: &Schema, store: &MemStore) -> Result<(), DbFileError> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, to_json(schema, store))?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<(Schema, MemStore), DbFileError> {
    from_json(&fs::read_to_string(path)?)
}
