//! Relational catalogs: tables, columns, primary keys, foreign keys.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnType {
    Int,
    Real,
    Text,
}

impl fmt::Display for ColumnType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ColumnType::Int => write!(f, "int"),
            ColumnType::Real => write!(f, "real"),
            ColumnType::Text => write!(f, "text"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    #[serde(rename = "type")]
    pub column_type: ColumnType,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub name: String,
    pub columns: Vec<Column>,
    #[serde(default)]
    pub primary_key: Vec<String>,
}

impl Table {
    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns
            .iter()
            .position(|c| c.name.eq_ignore_ascii_case(name))
    }

    pub fn column(&self, name: &str) -> Option<&Column> {
        self.column_index(name).map(|i| &self.columns[i])
    }

    pub fn is_pk_column(&self, name: &str) -> bool {
        self.primary_key.iter().any(|p| p.eq_ignore_ascii_case(name))
    }
}

/// A `table.column` endpoint of a foreign key, serialized as `"t.c"`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColumnPath {
    pub table: String,
    pub column: String,
}

impl fmt::Display for ColumnPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.table, self.column)
    }
}

impl Serialize for ColumnPath {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&format!("{}.{}", self.table, self.column))
    }
}

impl<'de> Deserialize<'de> for ColumnPath {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(d)?;
        match raw.split_once('.') {
            Some((t, c)) if !t.is_empty() && !c.is_empty() => Ok(ColumnPath {
                table: t.to_string(),
                column: c.to_string(),
            }),
            _ => Err(serde::de::Error::custom(format!(
                "expected \"table.column\", got {raw:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForeignKey {
    pub from: ColumnPath,
    pub to: ColumnPath,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    pub db_id: String,
    pub tables: Vec<Table>,
    #[serde(default)]
    pub foreign_keys: Vec<ForeignKey>,
}

#[derive(Debug, Error)]
pub enum SchemaError {
    #[error("cannot read schema file: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed schema file: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("schema integrity: {0}")]
    Integrity(String),
}

impl Schema {
    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables
            .iter()
            .find(|t| t.name.eq_ignore_ascii_case(name))
    }

    /// Checks all structural invariants: unique table names (case-insensitive),
    /// unique column names per table, primary keys naming real columns, and
    /// foreign keys connecting existing columns of equal type.
    pub fn validate(&self) -> Result<(), SchemaError> {
        let integrity = |msg: String| Err(SchemaError::Integrity(msg));

        let mut seen = HashSet::new();
        for t in &self.tables {
            if !seen.insert(t.name.to_ascii_lowercase()) {
                return integrity(format!("duplicate table name {:?}", t.name));
            }
            let mut cols = HashSet::new();
            for c in &t.columns {
                if !cols.insert(c.name.to_ascii_lowercase()) {
                    return integrity(format!(
                        "duplicate column {:?} in table {:?}",
                        c.name, t.name
                    ));
                }
            }
            for pk in &t.primary_key {
                if t.column(pk).is_none() {
                    return integrity(format!(
                        "primary key column {:?} not in table {:?}",
                        pk, t.name
                    ));
                }
            }
        }
        for fk in &self.foreign_keys {
            let from_col = self
                .table(&fk.from.table)
                .and_then(|t| t.column(&fk.from.column));
            let to_col = self
                .table(&fk.to.table)
                .and_then(|t| t.column(&fk.to.column));
            match (from_col, to_col) {
                (None, _) => return integrity(format!("foreign key from missing {}", fk.from)),
                (_, None) => return integrity(format!("foreign key to missing {}", fk.to)),
                (Some(f), Some(t)) if f.column_type != t.column_type => {
                    return integrity(format!(
                        "foreign key type mismatch: {} is {}, {} is {}",
                        fk.from, f.column_type, fk.to, t.column_type
                    ));
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("schema serializes")
    }

    pub fn save(&self, path: &Path) -> Result<(), SchemaError> {
        std::fs::write(path, self.to_json() + "\n")?;
        Ok(())
    }

    /// Foreign keys whose child side lies in `table`.
    pub fn foreign_keys_of(&self, table: &str) -> Vec<&ForeignKey> {
        self.foreign_keys
            .iter()
            .filter(|fk| fk.from.table.eq_ignore_ascii_case(table))
            .collect()
    }
}

pub fn load_schema(path: &Path) -> Result<Schema, SchemaError> {
    let text = std::fs::read_to_string(path)?;
    parse_schema(&text)
}

pub fn parse_schema(text: &str) -> Result<Schema, SchemaError> {
    let schema: Schema = serde_json::from_str(text)?;
    schema.validate()?;
    Ok(schema)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    #[test]
    fn movies_schema_loads() {
        let schema = parse_schema(&fixtures::movies_schema().to_json()).unwrap();
        assert_eq!(schema.tables.len(), 2);
        assert_eq!(schema.foreign_keys.len(), 1);
        assert_eq!(schema.tables[0].name, "actor");
        assert!(schema.tables[1].primary_key.is_empty());
    }

    #[test]
    fn empty_schema_is_valid() {
        let schema = parse_schema(r#"{"db_id":"empty","tables":[]}"#).unwrap();
        assert!(schema.tables.is_empty());
    }

    #[test]
    fn dangling_fk_rejected() {
        let text = r#"{
            "db_id": "bad",
            "tables": [{"name":"a","columns":[{"name":"x","type":"int"}],"primary_key":[]}],
            "foreign_keys": [{"from":"a.x","to":"ghost.y"}]
        }"#;
        let err = parse_schema(text).unwrap_err();
        assert!(matches!(err, SchemaError::Integrity(_)));
    }

    #[test]
    fn duplicate_table_name_rejected() {
        let text = r#"{
            "db_id": "bad",
            "tables": [
                {"name":"a","columns":[{"name":"x","type":"int"}]},
                {"name":"A","columns":[{"name":"y","type":"int"}]}
            ]
        }"#;
        assert!(parse_schema(text).is_err());
    }

    #[test]
    fn fk_type_mismatch_rejected() {
        let text = r#"{
            "db_id": "bad",
            "tables": [
                {"name":"a","columns":[{"name":"x","type":"int"}]},
                {"name":"b","columns":[{"name":"y","type":"text"}]}
            ],
            "foreign_keys": [{"from":"a.x","to":"b.y"}]
        }"#;
        assert!(parse_schema(text).is_err());
    }
}
