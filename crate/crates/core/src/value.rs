//! Scalar column types and values.

use std::fmt;

use serde::{Deserialize, Serialize};

/// The four column kinds supported by the DDL.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnType {
    Int,
    String,
    Boolean,
    Timestamp,
}

impl ColumnType {
    /// Upper bound on the serialized size of one field of this type, given an
    /// optional declared string length.
    pub fn max_encoded_len(self, max_len: Option<u32>) -> u64 {
        match self {
            ColumnType::Int | ColumnType::Timestamp => 8,
            ColumnType::Boolean => 1,
            // Worst case every byte is escaped, plus the two terminator bytes.
            ColumnType::String => 2 * u64::from(max_len.unwrap_or(255)) + 2,
        }
    }
}

impl fmt::Display for ColumnType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ColumnType::Int => "INT",
            ColumnType::String => "VARCHAR",
            ColumnType::Boolean => "BOOLEAN",
            ColumnType::Timestamp => "TIMESTAMP",
        };
        f.write_str(s)
    }
}

/// A typed scalar. Values of the same variant compare naturally; the engine
/// never compares values of different variants.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "type", content = "value", rename_all = "lowercase")]
pub enum Value {
    Int(i64),
    Str(String),
    Bool(bool),
    /// Milliseconds since the Unix epoch.
    Timestamp(i64),
}

impl Value {
    pub fn column_type(&self) -> ColumnType {
        match self {
            Value::Int(_) => ColumnType::Int,
            Value::Str(_) => ColumnType::String,
            Value::Bool(_) => ColumnType::Boolean,
            Value::Timestamp(_) => ColumnType::Timestamp,
        }
    }

    /// Converts the value to `ty` where the conversion is lossless (integers
    /// and timestamps are interchangeable). Returns `None` otherwise.
    pub fn coerce(self, ty: ColumnType) -> Option<Value> {
        match (self, ty) {
            (v, t) if v.column_type() == t => Some(v),
            (Value::Int(i), ColumnType::Timestamp) => Some(Value::Timestamp(i)),
            (Value::Timestamp(i), ColumnType::Int) => Some(Value::Int(i)),
            _ => None,
        }
    }

    /// Parses the textual form used by TSV files and `--param k=v` flags.
    pub fn parse_as(text: &str, ty: ColumnType) -> Option<Value> {
        match ty {
            ColumnType::Int => text.trim().parse().ok().map(Value::Int),
            ColumnType::Timestamp => text.trim().parse().ok().map(Value::Timestamp),
            ColumnType::Boolean => match text.trim().to_ascii_lowercase().as_str() {
                "true" | "1" => Some(Value::Bool(true)),
                "false" | "0" => Some(Value::Bool(false)),
                _ => None,
            },
            ColumnType::String => Some(Value::Str(text.to_string())),
        }
    }

    /// Renders the value as a literal of the query language.
    pub fn to_literal(&self) -> String {
        match self {
            Value::Int(i) | Value::Timestamp(i) => i.to_string(),
            Value::Str(s) => format!("'{}'", s.replace('\'', "''")),
            Value::Bool(true) => "TRUE".to_string(),
            Value::Bool(false) => "FALSE".to_string(),
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Int(i) | Value::Timestamp(i) => write!(f, "{i}"),
            Value::Str(s) => f.write_str(s),
            Value::Bool(b) => write!(f, "{b}"),
        }
    }
}
