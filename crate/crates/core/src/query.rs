//! Query language: a conjunctive SQL subset with `PAGINATE`, bounded
//! `IN`-lists, token search and `[k: name]` parameters.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lexer::{SyntaxError, Tok, TokenStream};
use crate::value::Value;

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum QueryError {
    #[error(transparent)]
    Syntax(#[from] SyntaxError),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ColumnRef {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table: Option<String>,
    pub column: String,
}

impl ColumnRef {
    pub fn new(table: &str, column: &str) -> Self {
        ColumnRef {
            table: Some(table.to_string()),
            column: column.to_string(),
        }
    }

    pub fn bare(column: &str) -> Self {
        ColumnRef {
            table: None,
            column: column.to_string(),
        }
    }
}

impl fmt::Display for ColumnRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.table {
            Some(t) => write!(f, "{t}.{}", self.column),
            None => f.write_str(&self.column),
        }
    }
}

/// A `[ordinal: name]` placeholder. Values are bound by name.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Param {
    pub ordinal: u32,
    pub name: String,
}

impl fmt::Display for Param {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}: {}]", self.ordinal, self.name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "lowercase")]
pub enum Operand {
    Column(ColumnRef),
    Literal(Value),
    Param(Param),
}

impl fmt::Display for Operand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Operand::Column(c) => c.fmt(f),
            Operand::Literal(v) => f.write_str(&v.to_literal()),
            Operand::Param(p) => p.fmt(f),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CmpOp {
    Eq,
    Lt,
    Le,
    Gt,
    Ge,
}

impl CmpOp {
    pub fn symbol(self) -> &'static str {
        match self {
            CmpOp::Eq => "=",
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
        }
    }

    /// The operator with its operands swapped (`a < b` ⇔ `b > a`).
    pub fn flipped(self) -> CmpOp {
        match self {
            CmpOp::Eq => CmpOp::Eq,
            CmpOp::Lt => CmpOp::Gt,
            CmpOp::Le => CmpOp::Ge,
            CmpOp::Gt => CmpOp::Lt,
            CmpOp::Ge => CmpOp::Le,
        }
    }

    pub fn holds(self, ord: std::cmp::Ordering) -> bool {
        use std::cmp::Ordering::*;
        match self {
            CmpOp::Eq => ord == Equal,
            CmpOp::Lt => ord == Less,
            CmpOp::Le => ord != Greater,
            CmpOp::Gt => ord == Greater,
            CmpOp::Ge => ord != Less,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Predicate {
    /// `column op operand`. A column on the right with `=` across two
    /// relations is a join equality.
    Compare {
        left: ColumnRef,
        op: CmpOp,
        right: Operand,
    },
    /// `column LIKE word`: the column's text contains the token.
    TokenMatch { column: ColumnRef, word: Operand },
    /// `column IN [k: name] MAX n`.
    In {
        column: ColumnRef,
        list: Param,
        max: u32,
    },
}

impl Predicate {
    pub fn column(&self) -> &ColumnRef {
        match self {
            Predicate::Compare { left, .. } => left,
            Predicate::TokenMatch { column, .. } | Predicate::In { column, .. } => column,
        }
    }
}

impl fmt::Display for Predicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Predicate::Compare { left, op, right } => write!(f, "{left} {} {right}", op.symbol()),
            Predicate::TokenMatch { column, word } => match word {
                Operand::Literal(Value::Str(w)) => {
                    write!(
                        f,
                        "{column} LIKE {}",
                        Value::Str(format!("%{w}%")).to_literal()
                    )
                }
                other => write!(f, "{column} LIKE {other}"),
            },
            Predicate::In { column, list, max } => write!(f, "{column} IN {list} MAX {max}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum AggFunc {
    Count,
    Sum,
    Min,
    Max,
}

impl fmt::Display for AggFunc {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AggFunc::Count => "COUNT",
            AggFunc::Sum => "SUM",
            AggFunc::Min => "MIN",
            AggFunc::Max => "MAX",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Projection {
    Star,
    Column {
        column: ColumnRef,
    },
    /// `arg` is `None` for `COUNT(*)`.
    Aggregate {
        func: AggFunc,
        arg: Option<ColumnRef>,
    },
}

impl fmt::Display for Projection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Projection::Star => f.write_str("*"),
            Projection::Column { column } => column.fmt(f),
            Projection::Aggregate { func, arg: None } => write!(f, "{func}(*)"),
            Projection::Aggregate { func, arg: Some(c) } => write!(f, "{func}({c})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct OrderKey {
    pub column: ColumnRef,
    pub descending: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LimitKind {
    Limit,
    Paginate,
}

impl fmt::Display for LimitKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LimitKind::Limit => "LIMIT",
            LimitKind::Paginate => "PAGINATE",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LimitClause {
    pub kind: LimitKind,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct QueryAst {
    pub projections: Vec<Projection>,
    pub relations: Vec<String>,
    pub predicates: Vec<Predicate>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub group_by: Vec<ColumnRef>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub order_by: Vec<OrderKey>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub limit: Option<LimitClause>,
}

impl QueryAst {
    pub fn has_aggregates(&self) -> bool {
        self.projections
            .iter()
            .any(|p| matches!(p, Projection::Aggregate { .. }))
    }

    /// Every parameter in order of first appearance.
    pub fn params(&self) -> Vec<&Param> {
        let mut out: Vec<&Param> = Vec::new();
        for p in &self.predicates {
            let found = match p {
                Predicate::Compare {
                    right: Operand::Param(x),
                    ..
                }
                | Predicate::TokenMatch {
                    word: Operand::Param(x),
                    ..
                } => Some(x),
                Predicate::In { list, .. } => Some(list),
                _ => None,
            };
            if let Some(x) = found {
                if !out.iter().any(|o| o.name == x.name) {
                    out.push(x);
                }
            }
        }
        out
    }
}

impl fmt::Display for QueryAst {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let proj: Vec<String> = self.projections.iter().map(ToString::to_string).collect();
        write!(
            f,
            "SELECT {} FROM {}",
            proj.join(", "),
            self.relations.join(", ")
        )?;
        if !self.predicates.is_empty() {
            let preds: Vec<String> = self.predicates.iter().map(ToString::to_string).collect();
            write!(f, " WHERE {}", preds.join(" AND "))?;
        }
        if !self.group_by.is_empty() {
            let g: Vec<String> = self.group_by.iter().map(ToString::to_string).collect();
            write!(f, " GROUP BY {}", g.join(", "))?;
        }
        if !self.order_by.is_empty() {
            let keys: Vec<String> = self
                .order_by
                .iter()
                .map(|k| format!("{}{}", k.column, if k.descending { " DESC" } else { "" }))
                .collect();
            write!(f, " ORDER BY {}", keys.join(", "))?;
        }
        if let Some(l) = self.limit {
            write!(f, " {} {}", l.kind, l.count)?;
        }
        Ok(())
    }
}

/// Canonical text form of a query.
pub fn render_query(ast: &QueryAst) -> String {
    ast.to_string()
}

const RESERVED: [&str; 14] = [
    "SELECT", "FROM", "WHERE", "AND", "OR", "ORDER", "BY", "GROUP", "LIMIT", "PAGINATE", "LIKE",
    "IN", "ASC", "DESC",
];

fn column_ref(ts: &mut TokenStream) -> Result<ColumnRef, SyntaxError> {
    if let Tok::Ident(s) = &ts.peek().tok {
        if RESERVED.iter().any(|r| s.eq_ignore_ascii_case(r)) {
            return ts.unexpected("column name");
        }
    }
    let first = ts.ident()?;
    if ts.eat_sym(".") {
        Ok(ColumnRef {
            table: Some(first),
            column: ts.ident()?,
        })
    } else {
        Ok(ColumnRef {
            table: None,
            column: first,
        })
    }
}

fn param(ts: &mut TokenStream) -> Result<Param, SyntaxError> {
    ts.expect_sym("[")?;
    let pos = ts.pos();
    let ordinal = ts.int()?;
    if ordinal < 1 || ordinal > i64::from(u32::MAX) {
        return Err(SyntaxError {
            pos,
            message: "parameter ordinal must be positive".into(),
        });
    }
    ts.expect_sym(":")?;
    let name = ts.ident()?;
    ts.expect_sym("]")?;
    Ok(Param {
        ordinal: ordinal as u32,
        name,
    })
}

fn operand(ts: &mut TokenStream) -> Result<Operand, SyntaxError> {
    match ts.peek().tok.clone() {
        Tok::Sym("[") => Ok(Operand::Param(param(ts)?)),
        Tok::Sym("-") | Tok::Int(_) => Ok(Operand::Literal(Value::Int(ts.int()?))),
        Tok::Str(s) => {
            ts.next();
            Ok(Operand::Literal(Value::Str(s)))
        }
        Tok::Ident(s) if s.eq_ignore_ascii_case("true") || s.eq_ignore_ascii_case("false") => {
            ts.next();
            Ok(Operand::Literal(Value::Bool(
                s.eq_ignore_ascii_case("true"),
            )))
        }
        Tok::Ident(_) => Ok(Operand::Column(column_ref(ts)?)),
        _ => ts.unexpected("literal, parameter or column"),
    }
}

fn cmp_op(ts: &mut TokenStream) -> Result<Option<CmpOp>, SyntaxError> {
    let op = match ts.peek().tok {
        Tok::Sym("=") => CmpOp::Eq,
        Tok::Sym("<") => CmpOp::Lt,
        Tok::Sym("<=") => CmpOp::Le,
        Tok::Sym(">") => CmpOp::Gt,
        Tok::Sym(">=") => CmpOp::Ge,
        Tok::Sym("<>") | Tok::Sym("!=") => {
            return ts.error("`<>` is not supported; use equality or a range")
        }
        _ => return Ok(None),
    };
    ts.next();
    Ok(Some(op))
}

fn predicate(ts: &mut TokenStream) -> Result<Predicate, SyntaxError> {
    if ts.is_kw("NOT") || ts.is_kw("EXISTS") || ts.is_sym("(") {
        return ts.error("subqueries, negation and parenthesized conditions are not supported");
    }
    let lhs = operand(ts)?;
    if ts.is_kw("LIKE") {
        let Operand::Column(column) = lhs else {
            return ts.error("LIKE needs a column on the left");
        };
        ts.next();
        let pos = ts.pos();
        let word = match operand(ts)? {
            Operand::Param(p) => Operand::Param(p),
            Operand::Literal(Value::Str(pattern)) => {
                let inner = pattern.strip_prefix('%').and_then(|p| p.strip_suffix('%'));
                match inner {
                    Some(w) if !w.is_empty() && w.chars().all(char::is_alphanumeric) => {
                        Operand::Literal(Value::Str(w.to_string()))
                    }
                    _ => {
                        return Err(SyntaxError {
                            pos,
                            message: "LIKE accepts only a single-token pattern '%word%'".into(),
                        })
                    }
                }
            }
            _ => {
                return Err(SyntaxError {
                    pos,
                    message: "LIKE needs a parameter or '%word%'".into(),
                })
            }
        };
        return Ok(Predicate::TokenMatch { column, word });
    }
    if ts.is_kw("IN") {
        let Operand::Column(column) = lhs else {
            return ts.error("IN needs a column on the left");
        };
        ts.next();
        if ts.is_sym("(") {
            return ts.error(
                "IN takes a list parameter `[k: name] MAX n`, not a subquery or literal list",
            );
        }
        let list = param(ts)?;
        ts.expect_kw("MAX")?;
        let pos = ts.pos();
        let max = ts.int()?;
        if max < 1 || max > i64::from(u32::MAX) {
            return Err(SyntaxError {
                pos,
                message: "IN-list MAX must be ≥ 1".into(),
            });
        }
        return Ok(Predicate::In {
            column,
            list,
            max: max as u32,
        });
    }
    let pos = ts.pos();
    let Some(op) = cmp_op(ts)? else {
        return ts.unexpected("comparison operator, LIKE or IN");
    };
    let rhs = operand(ts)?;
    match (lhs, rhs) {
        (Operand::Column(left), right) => Ok(Predicate::Compare { left, op, right }),
        (other, Operand::Column(left)) => Ok(Predicate::Compare {
            left,
            op: op.flipped(),
            right: other,
        }),
        _ => Err(SyntaxError {
            pos,
            message: "comparison needs at least one column".into(),
        }),
    }
}

fn projection(ts: &mut TokenStream) -> Result<Projection, SyntaxError> {
    if ts.eat_sym("*") {
        return Ok(Projection::Star);
    }
    let func = ["COUNT", "SUM", "MIN", "MAX"]
        .iter()
        .position(|f| ts.is_kw(f) && matches!(ts.peek_at(1).tok, Tok::Sym("(")));
    if let Some(i) = func {
        ts.next();
        ts.next();
        let func = [AggFunc::Count, AggFunc::Sum, AggFunc::Min, AggFunc::Max][i];
        let arg = if ts.eat_sym("*") {
            if func != AggFunc::Count {
                return ts.error(format!("{func}(*) is not allowed"));
            }
            None
        } else {
            Some(column_ref(ts)?)
        };
        ts.expect_sym(")")?;
        return Ok(Projection::Aggregate { func, arg });
    }
    Ok(Projection::Column {
        column: column_ref(ts)?,
    })
}

fn positive_count(ts: &mut TokenStream, what: &str) -> Result<u64, SyntaxError> {
    let pos = ts.pos();
    let n = ts.int()?;
    if n < 1 {
        return Err(SyntaxError {
            pos,
            message: format!("{what} count must be ≥ 1"),
        });
    }
    Ok(n as u64)
}

fn statement(ts: &mut TokenStream) -> Result<QueryAst, SyntaxError> {
    ts.expect_kw("SELECT")?;
    let mut projections = vec![projection(ts)?];
    while ts.eat_sym(",") {
        projections.push(projection(ts)?);
    }
    ts.expect_kw("FROM")?;
    let mut relations = vec![ts.ident()?];
    while ts.eat_sym(",") {
        relations.push(ts.ident()?);
    }
    if let Tok::Ident(s) = &ts.peek().tok {
        if !RESERVED.iter().any(|r| s.eq_ignore_ascii_case(r)) && !s.eq_ignore_ascii_case("JOIN") {
            return ts.error("table aliases are not supported");
        }
        if s.eq_ignore_ascii_case("JOIN") {
            return ts
                .error("JOIN syntax is not supported; list relations in FROM and join in WHERE");
        }
    }
    let mut predicates = Vec::new();
    if ts.eat_kw("WHERE") {
        predicates.push(predicate(ts)?);
        loop {
            if ts.is_kw("OR") {
                return ts.error("disjunction (OR) is not supported");
            }
            if !ts.eat_kw("AND") {
                break;
            }
            predicates.push(predicate(ts)?);
        }
    }
    let mut group_by = Vec::new();
    if ts.eat_kw("GROUP") {
        ts.expect_kw("BY")?;
        group_by.push(column_ref(ts)?);
        while ts.eat_sym(",") {
            group_by.push(column_ref(ts)?);
        }
    }
    let mut order_by = Vec::new();
    if ts.eat_kw("ORDER") {
        ts.expect_kw("BY")?;
        loop {
            let column = column_ref(ts)?;
            let descending = if ts.eat_kw("DESC") {
                true
            } else {
                ts.eat_kw("ASC");
                false
            };
            order_by.push(OrderKey { column, descending });
            if !ts.eat_sym(",") {
                break;
            }
        }
    }
    let mut limit = None;
    for (kw, kind) in [
        ("LIMIT", LimitKind::Limit),
        ("PAGINATE", LimitKind::Paginate),
    ] {
        if ts.eat_kw(kw) {
            limit = Some(LimitClause {
                kind,
                count: positive_count(ts, kw)?,
            });
            break;
        }
    }
    if ts.is_kw("LIMIT") || ts.is_kw("PAGINATE") {
        return ts.error("LIMIT and PAGINATE are mutually exclusive");
    }
    if ts.is_kw("OR") {
        return ts.error("disjunction (OR) is not supported");
    }
    Ok(QueryAst {
        projections,
        relations,
        predicates,
        group_by,
        order_by,
        limit,
    })
}

/// Parses one query, optionally followed by a `;`.
pub fn parse_query(source: &str) -> Result<QueryAst, QueryError> {
    let mut ts = TokenStream::new(source)?;
    let ast = statement(&mut ts)?;
    ts.eat_sym(";");
    if !ts.at_eof() {
        return Err(ts.unexpected::<()>("end of query").unwrap_err().into());
    }
    Ok(ast)
}

/// Parses a `;`-separated list of queries.
pub fn parse_queries(source: &str) -> Result<Vec<QueryAst>, QueryError> {
    let mut ts = TokenStream::new(source)?;
    let mut out = Vec::new();
    while !ts.at_eof() {
        if ts.eat_sym(";") {
            continue;
        }
        out.push(statement(&mut ts)?);
        if !ts.at_eof() {
            ts.expect_sym(";")?;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    const SEARCH_BY_TITLE: &str = "SELECT I_TITLE, I_ID, A_FNAME, A_LNAME
        FROM ITEM, AUTHOR
        WHERE I_A_ID = A_ID
              AND I_TITLE LIKE [1: titleWord]
        ORDER BY I_TITLE
        LIMIT 50";

    #[test]
    fn search_by_title() {
        let q = parse_query(SEARCH_BY_TITLE).unwrap();
        assert_eq!(q.relations, vec!["ITEM", "AUTHOR"]);
        assert_eq!(
            q.predicates[0],
            Predicate::Compare {
                left: ColumnRef::bare("I_A_ID"),
                op: CmpOp::Eq,
                right: Operand::Column(ColumnRef::bare("A_ID"))
            }
        );
        assert_eq!(
            q.predicates[1],
            Predicate::TokenMatch {
                column: ColumnRef::bare("I_TITLE"),
                word: Operand::Param(Param {
                    ordinal: 1,
                    name: "titleWord".into()
                })
            }
        );
        assert_eq!(
            q.order_by,
            vec![OrderKey {
                column: ColumnRef::bare("I_TITLE"),
                descending: false
            }]
        );
        assert_eq!(
            q.limit,
            Some(LimitClause {
                kind: LimitKind::Limit,
                count: 50
            })
        );
    }

    #[test]
    fn find_user() {
        let q = parse_query("SELECT * FROM Users WHERE username = [1: u]").unwrap();
        assert_eq!(q.relations, vec!["Users"]);
        assert_eq!(q.predicates.len(), 1);
        assert!(q.limit.is_none());
    }

    #[test]
    fn paginate() {
        let q = parse_query(
            "SELECT * FROM Thoughts WHERE username=[1:u] ORDER BY timestamp DESC PAGINATE 10",
        )
        .unwrap();
        assert_eq!(
            q.limit,
            Some(LimitClause {
                kind: LimitKind::Paginate,
                count: 10
            })
        );
        assert!(q.order_by[0].descending);
    }

    #[test]
    fn literal_like_and_in_list() {
        let q = parse_query(
            "SELECT * FROM S WHERE t = 'x' AND 3 < n AND title LIKE '%code%' AND o IN [2: friends] MAX 50",
        )
        .unwrap();
        assert_eq!(
            q.predicates[1],
            Predicate::Compare {
                left: ColumnRef::bare("n"),
                op: CmpOp::Gt,
                right: Operand::Literal(Value::Int(3))
            }
        );
        assert_eq!(
            q.predicates[2],
            Predicate::TokenMatch {
                column: ColumnRef::bare("title"),
                word: Operand::Literal(Value::Str("code".into()))
            }
        );
        assert!(matches!(q.predicates[3], Predicate::In { max: 50, .. }));
    }

    #[test]
    fn rejections() {
        for bad in [
            "SELECT * FROM T WHERE a = 1 OR b = 2",
            "SELECT * FROM T LIMIT 5 PAGINATE 5",
            "SELECT * FROM T LIMIT 0",
            "SELECT * FROM T WHERE a IN (SELECT b FROM U)",
            "SELECT * FROM T WHERE title LIKE '%a b%'",
            "SELECT * FROM T WHERE title LIKE 'ab%'",
            "SELECT * FROM T x",
            "SELECT * FROM T WHERE a <> 1",
            "SELECT FROM T",
        ] {
            assert!(parse_query(bad).is_err(), "{bad}");
        }
        match parse_query("SELECT *\nFROM T WHERE a = 1 OR b = 2") {
            Err(QueryError::Syntax(e)) => assert_eq!((e.pos.line, e.pos.col), (2, 20)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn render_is_a_fixpoint() {
        for src in [
            SEARCH_BY_TITLE,
            "select count(*), T.a from T, U where T.a = U.b and u.c >= -4 and flag = true group by T.a",
            "SELECT * FROM S WHERE title LIKE '%it%' AND o IN [2: f] MAX 5 ORDER BY a ASC, b DESC PAGINATE 3",
        ] {
            let once = render_query(&parse_query(src).unwrap());
            let twice = render_query(&parse_query(&once).unwrap());
            assert_eq!(once, twice);
            assert_eq!(parse_query(&once).unwrap(), parse_query(src).unwrap());
        }
    }

    #[test]
    fn multiple_statements() {
        let qs = parse_queries("SELECT * FROM A; SELECT * FROM B WHERE x = 1;").unwrap();
        assert_eq!(qs.len(), 2);
    }
}
