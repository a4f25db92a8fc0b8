//! Relational core for text-to-SQL experiments: schema catalogs, in-memory
//! database states with a seeded fuzzer, a SQL frontend for a fixed SELECT
//! subset, and a deterministic interpreter used as the execution oracle.

pub mod exec;
pub mod fixtures;
pub mod schema;
pub mod sql;
pub mod state;
pub mod testgen;
pub mod value;

pub use exec::{compare_results, execute, execute_sql, ExecError, ResultTable};
pub use schema::{load_schema, parse_schema, ColumnType, Schema, SchemaError, Table};
pub use sql::{canonical_sql, extract_refs, parse, qualify, render, SchemaRefs, SelectStmt};
pub use state::{generate_random_state, load_state, validate_state, DatabaseState, StateError};
pub use value::Value;
