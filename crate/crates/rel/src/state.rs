//! Concrete database states: row contents, integrity validation, and the
//! seeded random-state generator behind the semantic-equivalence oracle.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::Path;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::schema::{ColumnType, Schema, Table};
use crate::value::{Value, ValueKey};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatabaseState {
    pub schema_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Per-table tuples, keyed by table name. BTreeMap keeps serialization
    /// byte-stable for identical inputs.
    pub rows: BTreeMap<String, Vec<Vec<Value>>>,
}

impl DatabaseState {
    pub fn empty(schema: &Schema) -> DatabaseState {
        DatabaseState {
            schema_id: schema.db_id.clone(),
            seed: None,
            rows: schema
                .tables
                .iter()
                .map(|t| (t.name.clone(), Vec::new()))
                .collect(),
        }
    }

    pub fn table_rows(&self, table: &str) -> &[Vec<Value>] {
        self.rows
            .iter()
            .find(|(name, _)| name.eq_ignore_ascii_case(table))
            .map(|(_, rows)| rows.as_slice())
            .unwrap_or(&[])
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("state serializes")
    }

    pub fn save(&self, path: &Path) -> Result<(), StateError> {
        std::fs::write(path, self.to_json() + "\n")?;
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum StateError {
    #[error("cannot read state file: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed state file: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("state generation: {0}")]
    Constraint(String),
}

pub fn load_state(path: &Path) -> Result<DatabaseState, StateError> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

/// A single integrity violation found by [`validate_state`].
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    UnknownTable { table: String },
    Arity { table: String, row: usize, expected: usize, got: usize },
    TypeMismatch { table: String, row: usize, column: String, expected: ColumnType, got: String },
    PkNull { table: String, row: usize },
    PkDuplicate { table: String, row: usize },
    FkDangling { table: String, row: usize, column: String, value: Value },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::UnknownTable { table } => write!(f, "rows for unknown table {table:?}"),
            Violation::Arity { table, row, expected, got } => {
                write!(f, "{table} row {row}: arity {got}, expected {expected}")
            }
            Violation::TypeMismatch { table, row, column, expected, got } => {
                write!(f, "{table} row {row}: column {column} expects {expected}, got {got}")
            }
            Violation::PkNull { table, row } => write!(f, "{table} row {row}: null primary key"),
            Violation::PkDuplicate { table, row } => {
                write!(f, "{table} row {row}: duplicate primary key")
            }
            Violation::FkDangling { table, row, column, value } => {
                write!(f, "{table} row {row}: {column} = {value} has no parent")
            }
        }
    }
}

fn value_matches(v: &Value, ty: ColumnType) -> bool {
    matches!(
        (v, ty),
        (Value::Null, _)
            | (Value::Int(_), ColumnType::Int)
            | (Value::Real(_), ColumnType::Real)
            | (Value::Text(_), ColumnType::Text)
    )
}

/// Returns every violation found; an empty list means the state is valid.
pub fn validate_state(schema: &Schema, state: &DatabaseState) -> Vec<Violation> {
    let mut out = Vec::new();

    for table_name in state.rows.keys() {
        if schema.table(table_name).is_none() {
            out.push(Violation::UnknownTable { table: table_name.clone() });
        }
    }

    for table in &schema.tables {
        let rows = state.table_rows(&table.name);
        let pk_idx: Vec<usize> = table
            .primary_key
            .iter()
            .filter_map(|c| table.column_index(c))
            .collect();
        let mut pk_seen: HashSet<Vec<ValueKey>> = HashSet::new();

        for (r, row) in rows.iter().enumerate() {
            if row.len() != table.columns.len() {
                out.push(Violation::Arity {
                    table: table.name.clone(),
                    row: r,
                    expected: table.columns.len(),
                    got: row.len(),
                });
                continue;
            }
            for (c, col) in table.columns.iter().enumerate() {
                if !value_matches(&row[c], col.column_type) {
                    out.push(Violation::TypeMismatch {
                        table: table.name.clone(),
                        row: r,
                        column: col.name.clone(),
                        expected: col.column_type,
                        got: row[c].type_name().to_string(),
                    });
                }
            }
            if !pk_idx.is_empty() {
                if pk_idx.iter().any(|&i| row[i].is_null()) {
                    out.push(Violation::PkNull { table: table.name.clone(), row: r });
                } else {
                    let key: Vec<ValueKey> =
                        pk_idx.iter().map(|&i| ValueKey::of(&row[i])).collect();
                    if !pk_seen.insert(key) {
                        out.push(Violation::PkDuplicate { table: table.name.clone(), row: r });
                    }
                }
            }
        }
    }

    for fk in &schema.foreign_keys {
        let (Some(child), Some(parent)) = (schema.table(&fk.from.table), schema.table(&fk.to.table))
        else {
            continue; // schema validation reports this
        };
        let (Some(ci), Some(pi)) = (
            child.column_index(&fk.from.column),
            parent.column_index(&fk.to.column),
        ) else {
            continue;
        };
        let parent_vals: HashSet<ValueKey> = state
            .table_rows(&parent.name)
            .iter()
            .filter(|row| row.len() > pi && !row[pi].is_null())
            .map(|row| ValueKey::of(&row[pi]))
            .collect();
        for (r, row) in state.table_rows(&child.name).iter().enumerate() {
            if row.len() <= ci || row[ci].is_null() {
                continue;
            }
            if !parent_vals.contains(&ValueKey::of(&row[ci])) {
                out.push(Violation::FkDangling {
                    table: child.name.clone(),
                    row: r,
                    column: fk.from.column.clone(),
                    value: row[ci].clone(),
                });
            }
        }
    }

    out
}

// Pool sizing for the fuzzer. Pools are deliberately small so that generated
// states contain duplicate values and boundary collisions; non-key integer
// pools are smaller still to force repeated (col_a, col_b) pairs.
fn int_pool(size_hint: usize) -> Vec<i64> {
    (1..=(2 * size_hint as i64)).collect()
}

fn small_int_pool(size_hint: usize) -> Vec<i64> {
    (1..=(size_hint as i64 / 2).max(2)).collect()
}

fn real_pool(size_hint: usize) -> Vec<f64> {
    (1..=2 * size_hint).map(|i| i as f64 * 0.5).collect()
}

fn text_pool(size_hint: usize) -> Vec<String> {
    const WORDS: &[&str] = &[
        "ada", "bo", "cy", "dot", "eli", "fay", "gus", "hal", "ivy", "jo", "kit", "lee", "mia",
        "ned", "oz", "pam", "quin", "rae", "sol", "tia", "uma", "vic", "wes", "xan", "yuri", "zed",
    ];
    (0..size_hint)
        .map(|i| {
            if i < WORDS.len() {
                WORDS[i].to_string()
            } else {
                format!("w{i}")
            }
        })
        .collect()
}

const NULL_PROB: f64 = 0.1;

struct ColumnPlan {
    ty: ColumnType,
    in_pk: bool,
    /// Distinct non-null values present in the parent column, when this
    /// column is an FK child side.
    fk_parent_values: Option<Vec<Value>>,
}

fn fnv1a(s: &str) -> u64 {
    let mut h = 0xcbf29ce484222325u64;
    for b in s.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Deterministically generates a valid state for `schema`: same
/// `(schema, seed, size_hint)` always yields a byte-identical state. Each
/// table draws from its own substream (keyed by table name), so one table's
/// contents do not depend on how many values other tables consumed.
pub fn generate_random_state(
    schema: &Schema,
    seed: u64,
    size_hint: usize,
) -> Result<DatabaseState, StateError> {
    if size_hint == 0 {
        return Err(StateError::Constraint("size_hint must be >= 1".into()));
    }
    let ints = int_pool(size_hint);
    let small_ints = small_int_pool(size_hint);
    let reals = real_pool(size_hint);
    let texts = text_pool(size_hint);

    let order = topo_table_order(schema);
    let mut state = DatabaseState::empty(schema);
    state.seed = Some(seed);

    for &ti in &order {
        let table = &schema.tables[ti];
        let mut rng = ChaCha8Rng::seed_from_u64(
            seed.wrapping_mul(0x9E3779B97F4A7C15).wrapping_add(fnv1a(&table.name)),
        );
        let plans: Vec<ColumnPlan> = table
            .columns
            .iter()
            .map(|col| {
                let fk = schema.foreign_keys.iter().find(|fk| {
                    fk.from.table.eq_ignore_ascii_case(&table.name)
                        && fk.from.column.eq_ignore_ascii_case(&col.name)
                });
                let fk_parent_values = fk.map(|fk| {
                    let parent = schema.table(&fk.to.table).expect("validated schema");
                    let pi = parent.column_index(&fk.to.column).expect("validated schema");
                    let mut seen = HashSet::new();
                    let mut vals = Vec::new();
                    for row in state.table_rows(&parent.name) {
                        if !row[pi].is_null() && seen.insert(ValueKey::of(&row[pi])) {
                            vals.push(row[pi].clone());
                        }
                    }
                    vals
                });
                ColumnPlan {
                    ty: col.column_type,
                    in_pk: table.is_pk_column(&col.name),
                    fk_parent_values,
                }
            })
            .collect();

        let rows = generate_table_rows(
            table, &plans, size_hint, &mut rng, &ints, &small_ints, &reals, &texts,
        )?;
        *state.rows.get_mut(&table.name).expect("table present") = rows;
    }

    Ok(state)
}

#[allow(clippy::too_many_arguments)]
fn generate_table_rows(
    table: &Table,
    plans: &[ColumnPlan],
    size_hint: usize,
    rng: &mut ChaCha8Rng,
    ints: &[i64],
    small_ints: &[i64],
    reals: &[f64],
    texts: &[String],
) -> Result<Vec<Vec<Value>>, StateError> {
    let pk_idx: Vec<usize> = (0..plans.len()).filter(|&i| plans[i].in_pk).collect();

    // Candidate non-null values a column may take.
    let column_domain = |i: usize| -> Vec<Value> {
        let plan = &plans[i];
        if let Some(parent) = &plan.fk_parent_values {
            return parent.clone();
        }
        match plan.ty {
            ColumnType::Int => {
                let pool = if plan.in_pk { ints } else { small_ints };
                pool.iter().map(|&v| Value::Int(v)).collect()
            }
            ColumnType::Real => reals.iter().map(|&v| Value::Real(v)).collect(),
            ColumnType::Text => texts.iter().map(|t| Value::Text(t.clone())).collect(),
        }
    };

    if pk_idx.is_empty() {
        let mut rows = Vec::with_capacity(size_hint);
        for _ in 0..size_hint {
            let row = (0..plans.len())
                .map(|i| draw_nullable(&column_domain(i), rng))
                .collect();
            rows.push(row);
        }
        return Ok(rows);
    }

    // Primary-key tuples must be unique and non-null.
    let pk_domains: Vec<Vec<Value>> = pk_idx.iter().map(|&i| column_domain(i)).collect();
    let capacity: usize = pk_domains
        .iter()
        .map(|d| d.len())
        .try_fold(1usize, |acc, n| acc.checked_mul(n))
        .unwrap_or(usize::MAX);
    if capacity < size_hint {
        return Err(StateError::Constraint(format!(
            "table {:?}: primary key domain has {} tuples, need {}",
            table.name, capacity, size_hint
        )));
    }

    let pk_tuples: Vec<Vec<Value>> = if capacity <= 16_384 {
        let mut all = enumerate_tuples(&pk_domains);
        all.shuffle(rng);
        all.truncate(size_hint);
        all
    } else {
        let mut seen = HashSet::new();
        let mut out = Vec::with_capacity(size_hint);
        let mut attempts = 0usize;
        while out.len() < size_hint {
            attempts += 1;
            if attempts > 200 * size_hint {
                return Err(StateError::Constraint(format!(
                    "table {:?}: could not sample {} distinct primary keys",
                    table.name, size_hint
                )));
            }
            let tuple: Vec<Value> = pk_domains
                .iter()
                .map(|d| d[rng.gen_range(0..d.len())].clone())
                .collect();
            if seen.insert(ValueKey::of_row(&tuple)) {
                out.push(tuple);
            }
        }
        out
    };

    let mut rows = Vec::with_capacity(size_hint);
    for pk_tuple in pk_tuples {
        let mut row = vec![Value::Null; plans.len()];
        for (k, &i) in pk_idx.iter().enumerate() {
            row[i] = pk_tuple[k].clone();
        }
        for i in 0..plans.len() {
            if !plans[i].in_pk {
                row[i] = draw_nullable(&column_domain(i), rng);
            }
        }
        rows.push(row);
    }
    Ok(rows)
}

fn draw_nullable(domain: &[Value], rng: &mut ChaCha8Rng) -> Value {
    if domain.is_empty() || rng.gen_bool(NULL_PROB) {
        Value::Null
    } else {
        domain[rng.gen_range(0..domain.len())].clone()
    }
}

fn enumerate_tuples(domains: &[Vec<Value>]) -> Vec<Vec<Value>> {
    let mut out: Vec<Vec<Value>> = vec![Vec::new()];
    for d in domains {
        let mut next = Vec::with_capacity(out.len() * d.len());
        for prefix in &out {
            for v in d {
                let mut t = prefix.clone();
                t.push(v.clone());
                next.push(t);
            }
        }
        out = next;
    }
    out
}

/// Parent tables before children, so FK values can be drawn from existing
/// parent rows. Tables on FK cycles fall back to declaration order.
fn topo_table_order(schema: &Schema) -> Vec<usize> {
    let n = schema.tables.len();
    let index_of = |name: &str| {
        schema
            .tables
            .iter()
            .position(|t| t.name.eq_ignore_ascii_case(name))
    };
    let mut deps: Vec<HashSet<usize>> = vec![HashSet::new(); n];
    for fk in &schema.foreign_keys {
        if let (Some(child), Some(parent)) = (index_of(&fk.from.table), index_of(&fk.to.table)) {
            if child != parent {
                deps[child].insert(parent);
            }
        }
    }
    let mut order = Vec::with_capacity(n);
    let mut placed = vec![false; n];
    loop {
        let mut progressed = false;
        for i in 0..n {
            if !placed[i] && deps[i].iter().all(|&d| placed[d]) {
                placed[i] = true;
                order.push(i);
                progressed = true;
            }
        }
        if order.len() == n {
            break;
        }
        if !progressed {
            for i in 0..n {
                if !placed[i] {
                    placed[i] = true;
                    order.push(i);
                }
            }
            break;
        }
    }
    order
}
