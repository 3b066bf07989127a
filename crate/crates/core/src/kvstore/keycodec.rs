//! Order-preserving key encoding.
//!
//! Integers and timestamps are big-endian with the sign bit flipped. Strings
//! escape every `0x00` as `0x00 0xFF` and end with `0x00 0x01`, so a shorter
//! string sorts before any extension of it. Booleans are a single byte.
//! Descending fields are the bytewise complement of their ascending form.
//!
//! Tuples stored as values reuse the same field encoding, each field preceded
//! by a big-endian `u32` length.

use thiserror::Error;

use crate::value::{ColumnType, Value};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CodecError {
    #[error("type mismatch: expected {expected}, found {found}")]
    TypeMismatch {
        expected: ColumnType,
        found: ColumnType,
    },
    #[error("truncated or malformed encoding")]
    Malformed,
    #[error("field count mismatch: expected {expected}, found {found}")]
    Arity { expected: usize, found: usize },
}

/// Appends the ascending encoding of `value` to `out`.
pub fn encode_field(out: &mut Vec<u8>, value: &Value) {
    match value {
        Value::Int(i) | Value::Timestamp(i) => {
            out.extend_from_slice(&((*i as u64) ^ (1u64 << 63)).to_be_bytes());
        }
        Value::Bool(b) => out.push(u8::from(*b)),
        Value::Str(s) => {
            for &b in s.as_bytes() {
                if b == 0 {
                    out.extend_from_slice(&[0x00, 0xFF]);
                } else {
                    out.push(b);
                }
            }
            out.extend_from_slice(&[0x00, 0x01]);
        }
    }
}

/// Appends the encoding of `value`, complemented when `descending`.
pub fn encode_field_dir(out: &mut Vec<u8>, value: &Value, descending: bool) {
    let start = out.len();
    encode_field(out, value);
    if descending {
        for b in &mut out[start..] {
            *b = !*b;
        }
    }
}

/// Encodes a typed field list. `types` and `descending` must have the same
/// length as `values`; a missing descending entry means ascending.
pub fn encode_key(
    values: &[Value],
    types: &[ColumnType],
    descending: &[bool],
) -> Result<Vec<u8>, CodecError> {
    if values.len() > types.len() {
        return Err(CodecError::Arity {
            expected: types.len(),
            found: values.len(),
        });
    }
    let mut out = Vec::with_capacity(values.len() * 9);
    for (i, (v, &ty)) in values.iter().zip(types).enumerate() {
        let v = v.clone().coerce(ty).ok_or(CodecError::TypeMismatch {
            expected: ty,
            found: v.column_type(),
        })?;
        encode_field_dir(&mut out, &v, descending.get(i).copied().unwrap_or(false));
    }
    Ok(out)
}

/// Decodes one ascending field from the front of `input`, returning the value
/// and the number of bytes consumed.
pub fn decode_field(input: &[u8], ty: ColumnType) -> Result<(Value, usize), CodecError> {
    match ty {
        ColumnType::Int | ColumnType::Timestamp => {
            let bytes: [u8; 8] = input
                .get(..8)
                .ok_or(CodecError::Malformed)?
                .try_into()
                .unwrap();
            let i = (u64::from_be_bytes(bytes) ^ (1u64 << 63)) as i64;
            let v = if ty == ColumnType::Int {
                Value::Int(i)
            } else {
                Value::Timestamp(i)
            };
            Ok((v, 8))
        }
        ColumnType::Boolean => match input.first() {
            Some(0) => Ok((Value::Bool(false), 1)),
            Some(1) => Ok((Value::Bool(true), 1)),
            _ => Err(CodecError::Malformed),
        },
        ColumnType::String => {
            let mut bytes = Vec::new();
            let mut i = 0;
            loop {
                match input.get(i) {
                    None => return Err(CodecError::Malformed),
                    Some(0) => match input.get(i + 1) {
                        Some(0xFF) => {
                            bytes.push(0);
                            i += 2;
                        }
                        Some(0x01) => {
                            i += 2;
                            break;
                        }
                        _ => return Err(CodecError::Malformed),
                    },
                    Some(&b) => {
                        bytes.push(b);
                        i += 1;
                    }
                }
            }
            let s = String::from_utf8(bytes).map_err(|_| CodecError::Malformed)?;
            Ok((Value::Str(s), i))
        }
    }
}

/// Decodes a sequence of ascending key fields.
pub fn decode_key(mut input: &[u8], types: &[ColumnType]) -> Result<Vec<Value>, CodecError> {
    let mut out = Vec::with_capacity(types.len());
    for &ty in types {
        let (v, n) = decode_field(input, ty)?;
        out.push(v);
        input = &input[n..];
    }
    Ok(out)
}

/// Serializes a tuple as length-prefixed field encodings.
pub fn encode_tuple(values: &[Value]) -> Vec<u8> {
    let mut out = Vec::new();
    let mut field = Vec::new();
    for v in values {
        field.clear();
        encode_field(&mut field, v);
        out.extend_from_slice(&(field.len() as u32).to_be_bytes());
        out.extend_from_slice(&field);
    }
    out
}

pub fn decode_tuple(mut input: &[u8], types: &[ColumnType]) -> Result<Vec<Value>, CodecError> {
    let mut out = Vec::with_capacity(types.len());
    for &ty in types {
        let len: [u8; 4] = input
            .get(..4)
            .ok_or(CodecError::Malformed)?
            .try_into()
            .unwrap();
        let len = u32::from_be_bytes(len) as usize;
        let body = input.get(4..4 + len).ok_or(CodecError::Malformed)?;
        let (v, used) = decode_field(body, ty)?;
        if used != len {
            return Err(CodecError::Malformed);
        }
        out.push(v);
        input = &input[4 + len..];
    }
    if !input.is_empty() {
        return Err(CodecError::Arity {
            expected: types.len(),
            found: types.len() + 1,
        });
    }
    Ok(out)
}

/// The smallest key strictly greater than every key that starts with
/// `prefix`, or `None` if no such key exists.
pub fn prefix_end(prefix: &[u8]) -> Option<Vec<u8>> {
    let mut end = prefix.to_vec();
    while let Some(last) = end.pop() {
        if last != 0xFF {
            end.push(last + 1);
            return Some(end);
        }
    }
    None
}

/// The smallest key strictly greater than `key` itself.
pub fn successor(key: &[u8]) -> Vec<u8> {
    let mut k = key.to_vec();
    k.push(0);
    k
}
