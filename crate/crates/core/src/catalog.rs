//! Schema catalog: tables, cardinality constraints and physical indexes.
//!
//! The DDL is `CREATE TABLE` with typed columns, a `PRIMARY KEY (...)` clause
//! and any number of `CARDINALITY LIMIT n (attrs)` clauses.

use std::collections::BTreeSet;
use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lexer::{SyntaxError, Tok, TokenStream};
use crate::value::ColumnType;

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum CatalogError {
    #[error(transparent)]
    Syntax(#[from] SyntaxError),
    #[error("duplicate table {0}")]
    DuplicateTable(String),
    #[error("duplicate column {column} in table {table}")]
    DuplicateColumn { table: String, column: String },
    #[error("unknown table {0}")]
    UnknownTable(String),
    #[error("unknown column {column} in table {table}")]
    UnknownColumn { table: String, column: String },
    #[error("table {0} has no PRIMARY KEY clause")]
    MissingPrimaryKey(String),
    #[error("cardinality limit on {table}: limit must be ≥ 1")]
    InvalidLimit { table: String },
    #[error("cardinality limit on {table}({attrs}) names the full primary key, which already implies limit 1")]
    ConstraintIsPrimaryKey { table: String, attrs: String },
    #[error("index {0} does not contain every primary-key column")]
    IndexMissingKey(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnDef {
    pub name: String,
    #[serde(rename = "type")]
    pub ty: ColumnType,
    /// Declared maximum length for string columns.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_len: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableDef {
    pub name: String,
    pub columns: Vec<ColumnDef>,
    pub primary_key: Vec<String>,
}

impl TableDef {
    pub fn column(&self, name: &str) -> Option<&ColumnDef> {
        self.columns.iter().find(|c| c.name == name)
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    pub fn column_types(&self) -> Vec<ColumnType> {
        self.columns.iter().map(|c| c.ty).collect()
    }

    pub fn pk_indices(&self) -> Vec<usize> {
        self.primary_key
            .iter()
            .map(|k| self.column_index(k).expect("validated pk"))
            .collect()
    }

    pub fn pk_types(&self) -> Vec<ColumnType> {
        self.primary_key
            .iter()
            .map(|k| self.column(k).expect("validated pk").ty)
            .collect()
    }

    /// Largest possible serialized tuple, used as the tuple-size parameter of
    /// latency models.
    pub fn max_tuple_bytes(&self) -> u64 {
        self.columns
            .iter()
            .map(|c| 4 + c.ty.max_encoded_len(c.max_len))
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CardinalityConstraint {
    pub table: String,
    pub attributes: Vec<String>,
    pub limit: u64,
}

impl CardinalityConstraint {
    pub fn attribute_set(&self) -> BTreeSet<&str> {
        self.attributes.iter().map(String::as_str).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", content = "column", rename_all = "lowercase")]
pub enum IndexField {
    Column(String),
    /// One entry per distinct token of the column's text.
    Token(String),
}

impl IndexField {
    pub fn column(&self) -> &str {
        match self {
            IndexField::Column(c) | IndexField::Token(c) => c,
        }
    }
}

impl fmt::Display for IndexField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            IndexField::Column(c) => f.write_str(c),
            IndexField::Token(c) => write!(f, "token({c})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct IndexDef {
    pub table: String,
    pub fields: Vec<IndexField>,
    /// Whether entries carry the whole tuple (no dereference needed).
    pub covering: bool,
}

impl IndexDef {
    pub fn primary(table: &TableDef) -> Self {
        IndexDef {
            table: table.name.clone(),
            fields: table
                .primary_key
                .iter()
                .cloned()
                .map(IndexField::Column)
                .collect(),
            covering: true,
        }
    }

    pub fn is_primary(&self, table: &TableDef) -> bool {
        self.covering
            && self.fields.len() == table.primary_key.len()
            && self
                .fields
                .iter()
                .zip(&table.primary_key)
                .all(|(f, k)| *f == IndexField::Column(k.clone()))
    }

    /// `Table(field, field, ...)`.
    pub fn name(&self) -> String {
        let fields: Vec<String> = self.fields.iter().map(ToString::to_string).collect();
        format!("{}({})", self.table, fields.join(", "))
    }

    /// Key prefix under which this index's entries live.
    pub fn namespace(&self, table: &TableDef) -> String {
        if self.is_primary(table) {
            format!("t/{}", self.table)
        } else {
            format!("i/{}", self.name())
        }
    }

    pub fn field_types(&self, table: &TableDef) -> Vec<ColumnType> {
        self.fields
            .iter()
            .map(|f| match f {
                IndexField::Token(_) => ColumnType::String,
                IndexField::Column(c) => table.column(c).expect("validated index").ty,
            })
            .collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    pub tables: Vec<TableDef>,
    pub constraints: Vec<CardinalityConstraint>,
    pub indexes: Vec<IndexDef>,
}

impl Schema {
    pub fn table(&self, name: &str) -> Option<&TableDef> {
        self.tables.iter().find(|t| t.name == name)
    }

    pub fn require_table(&self, name: &str) -> Result<&TableDef, CatalogError> {
        self.table(name)
            .ok_or_else(|| CatalogError::UnknownTable(name.to_string()))
    }

    pub fn constraints_on<'a>(
        &'a self,
        table: &'a str,
    ) -> impl Iterator<Item = &'a CardinalityConstraint> {
        self.constraints.iter().filter(move |c| c.table == table)
    }

    pub fn indexes_on<'a>(&'a self, table: &'a str) -> impl Iterator<Item = &'a IndexDef> {
        self.indexes.iter().filter(move |i| i.table == table)
    }

    pub fn primary_index(&self, table: &str) -> Option<&IndexDef> {
        let t = self.table(table)?;
        self.indexes
            .iter()
            .find(|i| i.table == table && i.is_primary(t))
    }

    /// Adds `index` unless an index with the same table and field list exists.
    pub fn register_index(&mut self, index: IndexDef) -> Result<(), CatalogError> {
        let table = self.require_table(&index.table)?;
        for f in &index.fields {
            let col = table
                .column(f.column())
                .ok_or_else(|| CatalogError::UnknownColumn {
                    table: table.name.clone(),
                    column: f.column().to_string(),
                })?;
            if matches!(f, IndexField::Token(_)) && col.ty != ColumnType::String {
                return Err(CatalogError::UnknownColumn {
                    table: table.name.clone(),
                    column: format!("token({}) on a non-string column", f.column()),
                });
            }
        }
        let has_all_keys = table
            .primary_key
            .iter()
            .all(|k| index.fields.contains(&IndexField::Column(k.clone())));
        if !has_all_keys {
            return Err(CatalogError::IndexMissingKey(index.name()));
        }
        if !self
            .indexes
            .iter()
            .any(|i| i.table == index.table && i.fields == index.fields)
        {
            self.indexes.push(index);
        }
        Ok(())
    }

    /// Index whose leading fields are exactly `attrs` (in any order), used to
    /// count tuples sharing one value combination. Prefers the primary index.
    pub fn counting_index(&self, table: &str, attrs: &[String]) -> Option<&IndexDef> {
        let want: BTreeSet<&str> = attrs.iter().map(String::as_str).collect();
        let t = self.table(table)?;
        let fits = |i: &&IndexDef| {
            i.fields.len() >= want.len()
                && i.fields[..want.len()]
                    .iter()
                    .all(|f| matches!(f, IndexField::Column(c) if want.contains(c.as_str())))
        };
        self.primary_index(table).filter(fits).or_else(|| {
            self.indexes
                .iter()
                .filter(|i| i.table == table && !i.is_primary(t))
                .find(fits)
        })
    }

    /// Adds or replaces a constraint, registering a counting index if needed.
    pub fn set_constraint(
        &mut self,
        constraint: CardinalityConstraint,
    ) -> Result<(), CatalogError> {
        validate_constraint(self.require_table(&constraint.table)?, &constraint)?;
        let key = constraint
            .attribute_set()
            .into_iter()
            .map(str::to_string)
            .collect::<BTreeSet<_>>();
        self.constraints.retain(|c| {
            c.table != constraint.table
                || c.attribute_set()
                    .into_iter()
                    .map(str::to_string)
                    .collect::<BTreeSet<_>>()
                    != key
        });
        self.ensure_counting_index(&constraint)?;
        self.constraints.push(constraint);
        Ok(())
    }

    /// Removes every constraint on `table` over exactly `attrs`.
    pub fn remove_constraint(&mut self, table: &str, attrs: &[&str]) {
        let key: BTreeSet<&str> = attrs.iter().copied().collect();
        self.constraints
            .retain(|c| c.table != table || c.attribute_set() != key);
    }

    fn ensure_counting_index(&mut self, c: &CardinalityConstraint) -> Result<(), CatalogError> {
        if self.counting_index(&c.table, &c.attributes).is_some() {
            return Ok(());
        }
        let table = self.require_table(&c.table)?;
        let mut fields: Vec<IndexField> = c
            .attributes
            .iter()
            .cloned()
            .map(IndexField::Column)
            .collect();
        for k in &table.primary_key {
            if !c.attributes.contains(k) {
                fields.push(IndexField::Column(k.clone()));
            }
        }
        self.register_index(IndexDef {
            table: c.table.clone(),
            fields,
            covering: false,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("schema serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// Canonical DDL text for the tables and constraints.
    pub fn render_ddl(&self) -> String {
        let mut out = String::new();
        for t in &self.tables {
            let _ = writeln!(out, "CREATE TABLE {} (", t.name);
            let mut items: Vec<String> = t
                .columns
                .iter()
                .map(|c| match (c.ty, c.max_len) {
                    (ColumnType::String, Some(n)) => format!("{} VARCHAR({n})", c.name),
                    _ => format!("{} {}", c.name, c.ty),
                })
                .collect();
            items.push(format!("PRIMARY KEY ({})", t.primary_key.join(", ")));
            for c in self.constraints_on(&t.name) {
                items.push(format!(
                    "CARDINALITY LIMIT {} ({})",
                    c.limit,
                    c.attributes.join(", ")
                ));
            }
            let _ = writeln!(out, "  {}\n);", items.join(",\n  "));
        }
        out
    }
}

fn validate_constraint(table: &TableDef, c: &CardinalityConstraint) -> Result<(), CatalogError> {
    if c.limit < 1 {
        return Err(CatalogError::InvalidLimit {
            table: table.name.clone(),
        });
    }
    for a in &c.attributes {
        if table.column(a).is_none() {
            return Err(CatalogError::UnknownColumn {
                table: table.name.clone(),
                column: a.clone(),
            });
        }
    }
    let pk: BTreeSet<&str> = table.primary_key.iter().map(String::as_str).collect();
    if c.attribute_set() == pk {
        return Err(CatalogError::ConstraintIsPrimaryKey {
            table: table.name.clone(),
            attrs: c.attributes.join(", "),
        });
    }
    Ok(())
}

fn parse_type(ts: &mut TokenStream) -> Result<(ColumnType, Option<u32>), SyntaxError> {
    let pos = ts.pos();
    let name = ts.ident()?.to_ascii_uppercase();
    let mut len = None;
    if ts.eat_sym("(") {
        let n = ts.int()?;
        if n < 1 || n > u32::MAX as i64 {
            return Err(SyntaxError {
                pos,
                message: "string length out of range".into(),
            });
        }
        len = Some(n as u32);
        ts.expect_sym(")")?;
    }
    let ty = match name.as_str() {
        "INT" | "INTEGER" | "BIGINT" | "LONG" => ColumnType::Int,
        "VARCHAR" | "CHAR" | "TEXT" | "STRING" => ColumnType::String,
        "BOOLEAN" | "BOOL" => ColumnType::Boolean,
        "TIMESTAMP" | "DATETIME" => ColumnType::Timestamp,
        other => {
            return Err(SyntaxError {
                pos,
                message: format!("unknown column type {other}"),
            })
        }
    };
    if len.is_some() && ty != ColumnType::String {
        return Err(SyntaxError {
            pos,
            message: format!("{name} takes no length"),
        });
    }
    Ok((ty, len))
}

fn parse_name_list(ts: &mut TokenStream) -> Result<Vec<String>, SyntaxError> {
    ts.expect_sym("(")?;
    let mut names = vec![ts.ident()?];
    while ts.eat_sym(",") {
        names.push(ts.ident()?);
    }
    ts.expect_sym(")")?;
    Ok(names)
}

/// Parses a sequence of `CREATE TABLE` statements.
pub fn parse_ddl(source: &str) -> Result<Schema, CatalogError> {
    let mut ts = TokenStream::new(source)?;
    let mut schema = Schema::default();
    let mut pending = Vec::new();
    while !ts.at_eof() {
        if ts.eat_sym(";") {
            continue;
        }
        ts.expect_kw("CREATE")?;
        ts.expect_kw("TABLE")?;
        let name = ts.ident()?;
        if schema.table(&name).is_some() {
            return Err(CatalogError::DuplicateTable(name));
        }
        ts.expect_sym("(")?;
        let mut table = TableDef {
            name: name.clone(),
            columns: Vec::new(),
            primary_key: Vec::new(),
        };
        let mut has_pk = false;
        loop {
            if ts.is_kw("PRIMARY") && ts.is_kw_at(1, "KEY") {
                ts.next();
                ts.next();
                if has_pk {
                    return Err(ts
                        .error::<()>("second PRIMARY KEY clause")
                        .unwrap_err()
                        .into());
                }
                table.primary_key = parse_name_list(&mut ts)?;
                has_pk = true;
            } else if ts.is_kw("CARDINALITY") && ts.is_kw_at(1, "LIMIT") {
                ts.next();
                ts.next();
                let pos = ts.pos();
                let limit = ts.int()?;
                let attributes = parse_name_list(&mut ts)?;
                if limit < 1 {
                    return Err(CatalogError::InvalidLimit {
                        table: name.clone(),
                    });
                }
                let _ = pos;
                pending.push(CardinalityConstraint {
                    table: name.clone(),
                    attributes,
                    limit: limit as u64,
                });
            } else {
                let col = ts.ident()?;
                let (ty, max_len) = parse_type(&mut ts)?;
                if table.column(&col).is_some() {
                    return Err(CatalogError::DuplicateColumn {
                        table: name.clone(),
                        column: col,
                    });
                }
                table.columns.push(ColumnDef {
                    name: col,
                    ty,
                    max_len,
                });
            }
            if ts.eat_sym(")") {
                break;
            }
            if !ts.eat_sym(",") {
                return Err(ts.unexpected::<()>("`,` or `)`").unwrap_err().into());
            }
        }
        if !has_pk {
            return Err(CatalogError::MissingPrimaryKey(name));
        }
        let mut seen = BTreeSet::new();
        for k in &table.primary_key {
            if table.column(k).is_none() {
                return Err(CatalogError::UnknownColumn {
                    table: name.clone(),
                    column: k.clone(),
                });
            }
            if !seen.insert(k) {
                return Err(CatalogError::DuplicateColumn {
                    table: name.clone(),
                    column: k.clone(),
                });
            }
        }
        schema.indexes.push(IndexDef::primary(&table));
        schema.tables.push(table);
        if !matches!(ts.peek().tok, Tok::Eof) && !ts.is_kw("CREATE") {
            ts.expect_sym(";")?;
        }
    }
    for c in pending {
        schema.set_constraint(c)?;
    }
    Ok(schema)
}

#[cfg(test)]
mod tests {
    use super::*;

    const USERS_SUBS: &str = "
        CREATE TABLE Users (
          userId INT,
          firstName VARCHAR(255),
          PRIMARY KEY (userId)
        )
        CREATE TABLE Subscriptions (
          ownerUserId INT,
          targetUserId INT,
          approved BOOLEAN,
          PRIMARY KEY (ownerUserId, targetUserId),
          CARDINALITY LIMIT 100 (ownerUserId)
        )";

    #[test]
    fn subscriptions_constraint_is_parsed() {
        let s = parse_ddl(USERS_SUBS).unwrap();
        assert_eq!(
            s.constraints,
            vec![CardinalityConstraint {
                table: "Subscriptions".into(),
                attributes: vec!["ownerUserId".into()],
                limit: 100
            }]
        );
        assert_eq!(s.tables.len(), 2);
        // The owner prefix of the primary key serves the constraint count.
        assert_eq!(s.indexes.len(), 2);
    }

    #[test]
    fn minimal_table() {
        let s = parse_ddl("CREATE TABLE T(a INT, PRIMARY KEY(a))").unwrap();
        assert_eq!(s.tables.len(), 1);
        assert!(s.constraints.is_empty());
        assert_eq!(
            s.primary_index("T").unwrap().fields,
            vec![IndexField::Column("a".into())]
        );
    }

    #[test]
    fn zero_limit_is_rejected() {
        let err =
            parse_ddl("CREATE TABLE T(a INT, x INT, PRIMARY KEY(a), CARDINALITY LIMIT 0 (x))")
                .unwrap_err();
        assert!(err.to_string().contains("limit must be ≥ 1"));
    }

    #[test]
    fn structural_errors() {
        assert!(matches!(
            parse_ddl(
                "CREATE TABLE T(a INT, PRIMARY KEY(a)); CREATE TABLE T(b INT, PRIMARY KEY(b))"
            ),
            Err(CatalogError::DuplicateTable(_))
        ));
        assert!(matches!(
            parse_ddl("CREATE TABLE T(a INT, a INT, PRIMARY KEY(a))"),
            Err(CatalogError::DuplicateColumn { .. })
        ));
        assert!(matches!(
            parse_ddl("CREATE TABLE T(a INT, PRIMARY KEY(a), CARDINALITY LIMIT 5 (zz))"),
            Err(CatalogError::UnknownColumn { .. })
        ));
        assert!(matches!(
            parse_ddl(
                "CREATE TABLE T(a INT, b INT, PRIMARY KEY(a, b), CARDINALITY LIMIT 5 (b, a))"
            ),
            Err(CatalogError::ConstraintIsPrimaryKey { .. })
        ));
        assert!(matches!(
            parse_ddl("CREATE TABLE T(a INT)"),
            Err(CatalogError::MissingPrimaryKey(_))
        ));
        match parse_ddl("CREATE TABLE T(a INT,\n  b FLOAT, PRIMARY KEY(a))") {
            Err(CatalogError::Syntax(e)) => assert_eq!((e.pos.line, e.pos.col), (2, 5)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn register_index_is_idempotent_and_validated() {
        let mut s = parse_ddl(
            "CREATE TABLE Items (I_ID INT, I_TITLE VARCHAR(60), I_A_ID INT, PRIMARY KEY (I_ID))",
        )
        .unwrap();
        let idx = IndexDef {
            table: "Items".into(),
            fields: vec![
                IndexField::Token("I_TITLE".into()),
                IndexField::Column("I_TITLE".into()),
                IndexField::Column("I_ID".into()),
            ],
            covering: false,
        };
        s.register_index(idx.clone()).unwrap();
        s.register_index(idx).unwrap();
        assert_eq!(s.indexes.len(), 2);
        let pk = s.primary_index("Items").unwrap().clone();
        s.register_index(pk).unwrap();
        assert_eq!(s.indexes.len(), 2);
        let bad = IndexDef {
            table: "Items".into(),
            fields: vec![IndexField::Column("nope".into())],
            covering: false,
        };
        assert!(matches!(
            s.register_index(bad),
            Err(CatalogError::UnknownColumn { .. })
        ));
        let no_key = IndexDef {
            table: "Items".into(),
            fields: vec![IndexField::Column("I_A_ID".into())],
            covering: false,
        };
        assert!(matches!(
            s.register_index(no_key),
            Err(CatalogError::IndexMissingKey(_))
        ));
    }

    #[test]
    fn render_round_trip_and_json() {
        let s = parse_ddl(USERS_SUBS).unwrap();
        let again = parse_ddl(&s.render_ddl()).unwrap();
        assert_eq!(again, s);
        assert_eq!(parse_ddl(&again.render_ddl()).unwrap(), again);
        assert_eq!(Schema::from_json(&s.to_json()).unwrap(), s);
    }

    #[test]
    fn non_prefix_constraint_gets_counting_index() {
        let s = parse_ddl("CREATE TABLE T(a INT, b INT, PRIMARY KEY(a), CARDINALITY LIMIT 3 (b))")
            .unwrap();
        let idx = s.counting_index("T", &["b".to_string()]).unwrap();
        assert_eq!(
            idx.fields,
            vec![
                IndexField::Column("b".into()),
                IndexField::Column("a".into())
            ]
        );
    }
}
