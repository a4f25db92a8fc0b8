//! SQL frontend: lexer, parser, canonical printer, and name resolution.

pub mod ast;
pub mod lexer;
pub mod parser;
pub mod render;
pub mod resolve;

pub use ast::SelectStmt;
pub use parser::{parse, SqlError};
pub use render::{canonical_sql, render};
pub use resolve::{extract_refs, qualify, SchemaRefs};
