//! Dataset ingestion: JSON-lines examples validated against their schemas
//! and canonical states.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use babelsql_rel::exec::execute;
use babelsql_rel::schema::{load_schema, Schema};
use babelsql_rel::sql::{canonical_sql, parse};
use babelsql_rel::state::{load_state, validate_state, DatabaseState};

pub const LANGUAGES: [&str; 7] = ["vi", "es", "ja", "de", "en", "zh", "fr"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub id: String,
    pub db_id: String,
    pub lang: String,
    pub question: String,
    pub gold_sql: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub split: String,
    pub examples: Vec<Example>,
}

impl Dataset {
    /// English sibling question for an example id, the reference side of the
    /// question-mode semantic reward.
    pub fn english_reference(&self, id: &str) -> Option<&str> {
        self.examples
            .iter()
            .find(|e| e.id == id && e.lang == "en")
            .map(|e| e.question.as_str())
    }
}

/// One database: schema plus its shipped canonical state.
pub struct Db {
    pub schema: Schema,
    pub canonical: DatabaseState,
}

pub type DbCatalog = BTreeMap<String, Db>;

#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostic {
    pub line: usize,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{0} invalid line(s):\n{}", .1.iter().map(|d| format!("  {d}")).collect::<Vec<_>>().join("\n"))]
    Invalid(usize, Vec<Diagnostic>),
}

/// Loads every `*.schema.json` under `schema_dir` and its canonical
/// `<db>.state.json` under `state_dir`, validating both.
pub fn load_catalog(schema_dir: &Path, state_dir: &Path) -> Result<DbCatalog, String> {
    let mut catalog = DbCatalog::new();
    let mut entries: Vec<_> = std::fs::read_dir(schema_dir)
        .map_err(|e| format!("cannot read {}: {e}", schema_dir.display()))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.file_name().is_some_and(|n| n.to_string_lossy().ends_with(".schema.json")))
        .collect();
    entries.sort();
    for path in entries {
        let schema = load_schema(&path).map_err(|e| format!("{}: {e}", path.display()))?;
        let state_path = state_dir.join(format!("{}.state.json", schema.db_id));
        let canonical =
            load_state(&state_path).map_err(|e| format!("{}: {e}", state_path.display()))?;
        let violations = validate_state(&schema, &canonical);
        if !violations.is_empty() {
            return Err(format!(
                "canonical state for {} has {} integrity violation(s): {}",
                schema.db_id,
                violations.len(),
                violations[0]
            ));
        }
        catalog.insert(schema.db_id.clone(), Db { schema, canonical });
    }
    if catalog.is_empty() {
        return Err(format!("no *.schema.json files in {}", schema_dir.display()));
    }
    Ok(catalog)
}

/// Parses and validates a JSON-lines dataset file: every gold query must
/// parse and execute cleanly on its canonical state, ids must be unique per
/// language, and translations of an id must agree on db and gold SQL.
pub fn ingest(path: &Path, split: &str, catalog: &DbCatalog) -> Result<Dataset, IngestError> {
    let text = std::fs::read_to_string(path).map_err(|e| IngestError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    let mut diags = Vec::new();
    let mut examples = Vec::new();
    let mut seen: BTreeMap<(String, String), usize> = BTreeMap::new();
    let mut id_info: BTreeMap<String, (String, String, usize)> = BTreeMap::new();

    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut fail = |message: String| diags.push(Diagnostic { line: lineno, message });
        let ex: Example = match serde_json::from_str(line) {
            Ok(ex) => ex,
            Err(e) => {
                fail(format!("bad JSON: {e}"));
                continue;
            }
        };
        if !LANGUAGES.contains(&ex.lang.as_str()) {
            fail(format!("unknown language tag {:?}", ex.lang));
            continue;
        }
        if let Some(first) = seen.get(&(ex.id.clone(), ex.lang.clone())) {
            fail(format!("duplicate (id, lang) = ({}, {}), first seen on line {first}", ex.id, ex.lang));
            continue;
        }
        let Some(db) = catalog.get(&ex.db_id) else {
            fail(format!("no schema for db_id {:?}", ex.db_id));
            continue;
        };
        let gold = match parse(&ex.gold_sql) {
            Ok(g) => g,
            Err(e) => {
                fail(format!("gold SQL does not parse: {e}"));
                continue;
            }
        };
        if let Err(e) = execute(&gold, &db.schema, &db.canonical) {
            fail(format!("gold SQL fails on the canonical state: {e}"));
            continue;
        }
        let canon = canonical_sql(&ex.gold_sql).expect("parsed above");
        match id_info.get(&ex.id) {
            None => {
                id_info.insert(ex.id.clone(), (ex.db_id.clone(), canon, lineno));
            }
            Some((db_id, gold_canon, first)) => {
                if *db_id != ex.db_id {
                    fail(format!(
                        "id {:?} maps to db {:?} here but {:?} on line {first}",
                        ex.id, ex.db_id, db_id
                    ));
                    continue;
                }
                if *gold_canon != canon {
                    fail(format!(
                        "id {:?} has a different gold SQL than its sibling on line {first}",
                        ex.id
                    ));
                    continue;
                }
            }
        }
        seen.insert((ex.id.clone(), ex.lang.clone()), lineno);
        examples.push(ex);
    }

    if diags.is_empty() {
        Ok(Dataset { split: split.to_string(), examples })
    } else {
        Err(IngestError::Invalid(diags.len(), diags))
    }
}

/// Writes a dataset as JSON-lines (one example per line, stable field order).
pub fn write_jsonl(path: &Path, examples: &[Example]) -> std::io::Result<()> {
    let mut out = String::new();
    for ex in examples {
        out.push_str(&serde_json::to_string(ex).expect("example serializes"));
        out.push('\n');
    }
    std::fs::write(path, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use babelsql_rel::fixtures;

    fn movie_catalog() -> DbCatalog {
        let mut c = DbCatalog::new();
        c.insert(
            "movies".to_string(),
            Db { schema: fixtures::movies_schema(), canonical: fixtures::movies_fixture_state() },
        );
        c
    }

    fn write_lines(dir: &Path, lines: &[&str]) -> std::path::PathBuf {
        let p = dir.join("data.jsonl");
        std::fs::write(&p, lines.join("\n")).unwrap();
        p
    }

    #[test]
    fn valid_file_ingests() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_lines(
            dir.path(),
            &[
                r#"{"id":"q1","db_id":"movies","lang":"en","question":"count actors","gold_sql":"SELECT COUNT(*) FROM actor"}"#,
                r#"{"id":"q1","db_id":"movies","lang":"vi","question":"đếm diễn viên","gold_sql":"SELECT COUNT(*) FROM actor"}"#,
            ],
        );
        let ds = ingest(&p, "train", &movie_catalog()).unwrap();
        assert_eq!(ds.examples.len(), 2);
        assert_eq!(ds.english_reference("q1"), Some("count actors"));
    }

    #[test]
    fn bad_gold_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_lines(
            dir.path(),
            &[
                r#"{"id":"q1","db_id":"movies","lang":"en","question":"x","gold_sql":"SELECT COUNT(*) FROM actor"}"#,
                r#"{"id":"q2","db_id":"movies","lang":"en","question":"y","gold_sql":"SELECT FROM"}"#,
            ],
        );
        let err = ingest(&p, "train", &movie_catalog()).unwrap_err();
        match err {
            IngestError::Invalid(1, diags) => {
                assert_eq!(diags[0].line, 2);
                assert!(diags[0].message.contains("parse"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn duplicate_id_lang_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let line = r#"{"id":"q1","db_id":"movies","lang":"en","question":"x","gold_sql":"SELECT COUNT(*) FROM actor"}"#;
        let p = write_lines(dir.path(), &[line, line]);
        let err = ingest(&p, "train", &movie_catalog()).unwrap_err();
        assert!(matches!(err, IngestError::Invalid(1, _)));
    }

    #[test]
    fn cross_language_gold_mismatch_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_lines(
            dir.path(),
            &[
                r#"{"id":"q1","db_id":"movies","lang":"en","question":"x","gold_sql":"SELECT COUNT(*) FROM actor"}"#,
                r#"{"id":"q1","db_id":"movies","lang":"vi","question":"y","gold_sql":"SELECT COUNT(*) FROM casting"}"#,
            ],
        );
        assert!(ingest(&p, "train", &movie_catalog()).is_err());
    }

    #[test]
    fn gold_failing_on_canonical_state_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_lines(
            dir.path(),
            &[r#"{"id":"q1","db_id":"movies","lang":"en","question":"x","gold_sql":"SELECT actor.wage FROM actor"}"#],
        );
        assert!(ingest(&p, "train", &movie_catalog()).is_err());
    }

    #[test]
    fn missing_schema_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_lines(
            dir.path(),
            &[r#"{"id":"q1","db_id":"ghost","lang":"en","question":"x","gold_sql":"SELECT 1"}"#],
        );
        assert!(ingest(&p, "train", &movie_catalog()).is_err());
    }

    #[test]
    fn ingest_is_order_independent() {
        let dir = tempfile::tempdir().unwrap();
        let a = r#"{"id":"q1","db_id":"movies","lang":"en","question":"x","gold_sql":"SELECT COUNT(*) FROM actor"}"#;
        let b = r#"{"id":"q2","db_id":"movies","lang":"en","question":"y","gold_sql":"SELECT actor.name FROM actor"}"#;
        let p1 = write_lines(dir.path(), &[a, b]);
        let ds1 = ingest(&p1, "train", &movie_catalog()).unwrap();
        let p2 = write_lines(dir.path(), &[b, a]);
        let ds2 = ingest(&p2, "train", &movie_catalog()).unwrap();
        let mut e1 = ds1.examples;
        let mut e2 = ds2.examples;
        e1.sort_by(|x, y| x.id.cmp(&y.id));
        e2.sort_by(|x, y| x.id.cmp(&y.id));
        assert_eq!(e1, e2);
    }
}
