//! Bundled schemas and queries: the SCADr microblog and two TPC-W tables.

use crate::catalog::{parse_ddl, Schema};
use crate::query::{parse_query, QueryAst};

pub const SCADR_SCHEMA: &str = include_str!("../fixtures/scadr/schema.ddl");
pub const USERS_FOLLOWED: &str = include_str!("../fixtures/scadr/users_followed.sql");
pub const RECENT_THOUGHTS: &str = include_str!("../fixtures/scadr/recent_thoughts.sql");
pub const THOUGHTSTREAM: &str = include_str!("../fixtures/scadr/thoughtstream.sql");
pub const FIND_USER: &str = include_str!("../fixtures/scadr/find_user.sql");
/// Which of my friends subscribe to a given user.
pub const INTERSECTION: &str = include_str!("../fixtures/scadr/intersection.sql");

pub const TPCW_SCHEMA: &str = include_str!("../fixtures/tpcw/schema.ddl");
pub const SEARCH_BY_TITLE: &str = include_str!("../fixtures/tpcw/search_by_title.sql");

/// The four SCADr read queries by name. The fifth workload item, posting a
/// thought, is a single insert.
pub const SCADR_QUERIES: [(&str, &str); 4] = [
    ("users_followed", USERS_FOLLOWED),
    ("recent_thoughts", RECENT_THOUGHTS),
    ("thoughtstream", THOUGHTSTREAM),
    ("find_user", FIND_USER),
];

pub fn scadr_schema() -> Schema {
    parse_ddl(SCADR_SCHEMA).expect("bundled schema")
}

pub fn tpcw_schema() -> Schema {
    parse_ddl(TPCW_SCHEMA).expect("bundled schema")
}

pub fn query(text: &str) -> QueryAst {
    parse_query(text).expect("bundled query")
}
