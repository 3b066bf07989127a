//! A scale-independent relational query engine over an ordered key/value
//! store: every accepted query has a static bound on the number of store
//! operations it performs, whatever the size of the database.

pub mod assistant;
pub mod catalog;
pub mod dbfile;
pub mod executor;
pub mod fixtures;
pub mod kvstore;
pub mod lexer;
pub mod logical;
pub mod physical;
pub mod query;
pub mod slo;
pub mod stops;
pub mod value;
pub mod workload;

pub use catalog::{parse_ddl, CatalogError, Schema};
pub use query::{parse_query, QueryAst};
pub use value::{ColumnType, Value};

/// Latency distribution with `f64` masses.
pub type Distribution64 = slo::Distribution<f64>;
/// Latency distribution with `f32` masses.
pub type Distribution32 = slo::Distribution<f32>;
