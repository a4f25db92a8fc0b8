//! Canonical movies fixture: a two-table film database whose contents are
//! chosen so that `COUNT(*) >= 3` and `COUNT(DISTINCT casting.movieid) > 3`
//! disagree (actor 1 has four casting rows but only three distinct movies).

use std::collections::BTreeMap;

use crate::schema::{Column, ColumnPath, ColumnType, ForeignKey, Schema, Table};
use crate::state::DatabaseState;
use crate::value::Value;

pub fn movies_schema() -> Schema {
    let schema = Schema {
        db_id: "movies".to_string(),
        tables: vec![
            Table {
                name: "actor".to_string(),
                columns: vec![
                    Column { name: "id".to_string(), column_type: ColumnType::Int },
                    Column { name: "name".to_string(), column_type: ColumnType::Text },
                ],
                primary_key: vec!["id".to_string()],
            },
            Table {
                name: "casting".to_string(),
                columns: vec![
                    Column { name: "actorid".to_string(), column_type: ColumnType::Int },
                    Column { name: "movieid".to_string(), column_type: ColumnType::Int },
                ],
                primary_key: vec![],
            },
        ],
        foreign_keys: vec![ForeignKey {
            from: ColumnPath { table: "casting".to_string(), column: "actorid".to_string() },
            to: ColumnPath { table: "actor".to_string(), column: "id".to_string() },
        }],
    };
    debug_assert!(schema.validate().is_ok());
    schema
}

pub fn movies_fixture_state() -> DatabaseState {
    let int = Value::Int;
    let text = |s: &str| Value::Text(s.to_string());
    let mut rows = BTreeMap::new();
    rows.insert(
        "actor".to_string(),
        vec![vec![int(1), text("A")], vec![int(2), text("B")]],
    );
    rows.insert(
        "casting".to_string(),
        vec![
            vec![int(1), int(101)],
            vec![int(1), int(102)],
            vec![int(1), int(103)],
            vec![int(1), int(103)],
            vec![int(2), int(201)],
            vec![int(2), int(202)],
            vec![int(2), int(203)],
            vec![int(2), int(204)],
        ],
    );
    DatabaseState { schema_id: "movies".to_string(), seed: None, rows }
}

/// The reference query: actors in strictly more than 3 distinct movies.
pub const GOLD_SQL: &str = "SELECT actor.name FROM actor JOIN casting ON actor.id = \
     casting.actorid GROUP BY actor.id, actor.name HAVING COUNT(DISTINCT casting.movieid) > 3";

/// The near-miss variant: counts casting rows (not distinct movies) and uses
/// `>=` instead of `>`. Executes fine, returns the wrong set on the fixture.
pub const NEAR_MISS_SQL: &str = "SELECT actor.name FROM actor JOIN casting ON actor.id = \
     casting.actorid GROUP BY actor.id HAVING COUNT(*) >= 3";
