//! Bundled template-generated mini-corpus: three small schemas, ten SQL
//! question patterns, and hand-authored surface templates in seven languages
//! (vi, es, ja, de, en, zh, fr). Questions and gold SQL come from the same
//! instantiation, so parallel alignment and gold correctness hold by
//! construction.

use std::path::Path;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use babelsql_rel::fixtures;
use babelsql_rel::schema::{Column, ColumnPath, ColumnType, ForeignKey, Schema, Table};
use babelsql_rel::sql::canonical_sql;
use babelsql_rel::state::{generate_random_state, DatabaseState};
use babelsql_rel::value::format_real;

use crate::dataset::{Example, LANGUAGES};

/// Role names one schema plays in the templates.
struct SchemaMeta {
    schema: Schema,
    canonical: DatabaseState,
    /// entity table with (id, name-ish text column, numeric column)
    ent: &'static str,
    name_col: &'static str,
    num_col: &'static str,
    /// satellite table with (fk to entity, numeric value column)
    sat: &'static str,
    fk_col: &'static str,
    val_col: &'static str,
    /// literal pool for filters over `num_col`
    num_literals: Vec<Lit>,
    /// literal pool for filters over `val_col` (always integers)
    val_literals: Vec<i64>,
}

#[derive(Clone, Copy, PartialEq)]
enum Lit {
    Int(i64),
    Real(f64),
}

impl Lit {
    fn sql(&self) -> String {
        match self {
            Lit::Int(v) => v.to_string(),
            Lit::Real(v) => format_real(*v),
        }
    }
}

fn two_table_schema(
    db_id: &str,
    ent: &str,
    ent_cols: &[(&str, ColumnType)],
    sat: &str,
    sat_cols: &[(&str, ColumnType)],
    fk: (&str, &str),
) -> Schema {
    let mk_cols = |cols: &[(&str, ColumnType)]| -> Vec<Column> {
        cols.iter()
            .map(|(n, t)| Column { name: n.to_string(), column_type: *t })
            .collect()
    };
    let schema = Schema {
        db_id: db_id.to_string(),
        tables: vec![
            Table {
                name: ent.to_string(),
                columns: mk_cols(ent_cols),
                primary_key: vec!["id".to_string()],
            },
            Table { name: sat.to_string(), columns: mk_cols(sat_cols), primary_key: vec![] },
        ],
        foreign_keys: vec![ForeignKey {
            from: ColumnPath { table: sat.to_string(), column: fk.0.to_string() },
            to: ColumnPath { table: ent.to_string(), column: fk.1.to_string() },
        }],
    };
    schema.validate().expect("built-in schema is valid");
    schema
}

fn builtin_schemas() -> Vec<SchemaMeta> {
    use ColumnType::*;
    let movies = fixtures::movies_schema();
    let movies_state = fixtures::movies_fixture_state();

    let shop = two_table_schema(
        "shop",
        "item",
        &[("id", Int), ("name", Text), ("price", Real)],
        "sale",
        &[("itemid", Int), ("qty", Int)],
        ("itemid", "id"),
    );
    let shop_state = generate_random_state(&shop, 0xC0FFEE, 8).expect("shop state");

    let school = two_table_schema(
        "school",
        "pupil",
        &[("id", Int), ("name", Text), ("age", Int)],
        "mark",
        &[("pupilid", Int), ("score", Int)],
        ("pupilid", "id"),
    );
    let school_state = generate_random_state(&school, 0x5C001, 8).expect("school state");

    vec![
        SchemaMeta {
            schema: movies,
            canonical: movies_state,
            ent: "actor",
            name_col: "name",
            num_col: "id",
            sat: "casting",
            fk_col: "actorid",
            val_col: "movieid",
            num_literals: (1..=3).map(Lit::Int).collect(),
            val_literals: (1..=4).collect(),
        },
        SchemaMeta {
            schema: shop,
            canonical: shop_state,
            ent: "item",
            name_col: "name",
            num_col: "price",
            sat: "sale",
            fk_col: "itemid",
            val_col: "qty",
            num_literals: (2..=10).map(|i| Lit::Real(i as f64 * 0.5)).collect(),
            val_literals: (1..=4).collect(),
        },
        SchemaMeta {
            schema: school,
            canonical: school_state,
            ent: "pupil",
            name_col: "name",
            num_col: "age",
            sat: "mark",
            fk_col: "pupilid",
            val_col: "score",
            num_literals: (1..=4).map(Lit::Int).collect(),
            val_literals: (1..=4).collect(),
        },
    ]
}

#[derive(Clone, Copy, PartialEq)]
enum Cmp {
    Gt,
    Ge,
    Lt,
    Le,
    Eq,
}

const CMPS: [Cmp; 5] = [Cmp::Gt, Cmp::Ge, Cmp::Lt, Cmp::Le, Cmp::Eq];

impl Cmp {
    fn sql(&self) -> &'static str {
        match self {
            Cmp::Gt => ">",
            Cmp::Ge => ">=",
            Cmp::Lt => "<",
            Cmp::Le => "<=",
            Cmp::Eq => "=",
        }
    }

    fn word(&self, lang: &str) -> &'static str {
        match (lang, self) {
            ("en", Cmp::Gt) => "greater than",
            ("en", Cmp::Ge) => "at least",
            ("en", Cmp::Lt) => "less than",
            ("en", Cmp::Le) => "at most",
            ("en", Cmp::Eq) => "equal to",
            ("vi", Cmp::Gt) => "lớn hơn",
            ("vi", Cmp::Ge) => "ít nhất",
            ("vi", Cmp::Lt) => "nhỏ hơn",
            ("vi", Cmp::Le) => "nhiều nhất",
            ("vi", Cmp::Eq) => "bằng",
            ("es", Cmp::Gt) => "mayor que",
            ("es", Cmp::Ge) => "al menos",
            ("es", Cmp::Lt) => "menor que",
            ("es", Cmp::Le) => "como máximo",
            ("es", Cmp::Eq) => "igual a",
            ("ja", Cmp::Gt) => "より大きい",
            ("ja", Cmp::Ge) => "以上",
            ("ja", Cmp::Lt) => "未満",
            ("ja", Cmp::Le) => "以下",
            ("ja", Cmp::Eq) => "と等しい",
            ("de", Cmp::Gt) => "größer als",
            ("de", Cmp::Ge) => "mindestens",
            ("de", Cmp::Lt) => "kleiner als",
            ("de", Cmp::Le) => "höchstens",
            ("de", Cmp::Eq) => "gleich",
            ("zh", Cmp::Gt) => "大于",
            ("zh", Cmp::Ge) => "至少",
            ("zh", Cmp::Lt) => "小于",
            ("zh", Cmp::Le) => "至多",
            ("zh", Cmp::Eq) => "等于",
            ("fr", Cmp::Gt) => "supérieur à",
            ("fr", Cmp::Ge) => "au moins",
            ("fr", Cmp::Lt) => "inférieur à",
            ("fr", Cmp::Le) => "au plus",
            ("fr", Cmp::Eq) => "égal à",
            _ => unreachable!("unknown language"),
        }
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Agg {
    Sum,
    Avg,
    Min,
    Max,
}

const AGGS: [Agg; 4] = [Agg::Sum, Agg::Avg, Agg::Min, Agg::Max];

impl Agg {
    fn sql(&self) -> &'static str {
        match self {
            Agg::Sum => "SUM",
            Agg::Avg => "AVG",
            Agg::Min => "MIN",
            Agg::Max => "MAX",
        }
    }

    fn word(&self, lang: &str) -> &'static str {
        match (lang, self) {
            ("en", Agg::Sum) => "total",
            ("en", Agg::Avg) => "average",
            ("en", Agg::Min) => "smallest",
            ("en", Agg::Max) => "largest",
            ("vi", Agg::Sum) => "tổng",
            ("vi", Agg::Avg) => "trung bình",
            ("vi", Agg::Min) => "nhỏ nhất",
            ("vi", Agg::Max) => "lớn nhất",
            ("es", Agg::Sum) => "total",
            ("es", Agg::Avg) => "promedio",
            ("es", Agg::Min) => "mínimo",
            ("es", Agg::Max) => "máximo",
            ("ja", Agg::Sum) => "合計",
            ("ja", Agg::Avg) => "平均",
            ("ja", Agg::Min) => "最小",
            ("ja", Agg::Max) => "最大",
            ("de", Agg::Sum) => "gesamt",
            ("de", Agg::Avg) => "durchschnittlich",
            ("de", Agg::Min) => "kleinste",
            ("de", Agg::Max) => "größte",
            ("zh", Agg::Sum) => "总",
            ("zh", Agg::Avg) => "平均",
            ("zh", Agg::Min) => "最小",
            ("zh", Agg::Max) => "最大",
            ("fr", Agg::Sum) => "total",
            ("fr", Agg::Avg) => "moyen",
            ("fr", Agg::Min) => "minimal",
            ("fr", Agg::Max) => "maximal",
            _ => unreachable!("unknown language"),
        }
    }
}

/// One concrete question/SQL pair before language rendering.
enum Pattern {
    ListColumn { table: String, col: String },
    CountRows { table: String },
    FilterEntity { cmp: Cmp, lit: Lit },
    CountDistinct { table: String, col: String },
    GroupHavingCount { cmp: Cmp, n: i64 },
    JoinFilter { cmp: Cmp, n: i64 },
    DistinctHaving { n: i64 },
    OrderLimit { k: u64 },
    Aggregate { agg: Agg },
    InList { a: i64, b: i64 },
}

struct Instance {
    pattern: Pattern,
    gold: String,
}

fn enumerate_instances(meta: &SchemaMeta) -> Vec<Instance> {
    let mut out = Vec::new();
    let ent = meta.ent;
    let sat = meta.sat;
    let name = meta.name_col;
    let num = meta.num_col;
    let fk = meta.fk_col;
    let val = meta.val_col;
    let join = format!("{ent} JOIN {sat} ON {ent}.id = {sat}.{fk}");

    for (table, col) in [
        (ent, name),
        (ent, num),
        (sat, val),
    ] {
        out.push(Instance {
            pattern: Pattern::ListColumn { table: table.into(), col: col.into() },
            gold: format!("SELECT {table}.{col} FROM {table}"),
        });
    }
    for table in [ent, sat] {
        out.push(Instance {
            pattern: Pattern::CountRows { table: table.into() },
            gold: format!("SELECT COUNT(*) FROM {table}"),
        });
    }
    for cmp in CMPS {
        for &lit in &meta.num_literals {
            out.push(Instance {
                pattern: Pattern::FilterEntity { cmp, lit },
                gold: format!(
                    "SELECT {ent}.{name} FROM {ent} WHERE {ent}.{num} {} {}",
                    cmp.sql(),
                    lit.sql()
                ),
            });
        }
    }
    for (table, col) in [(sat, val), (sat, fk), (ent, name)] {
        out.push(Instance {
            pattern: Pattern::CountDistinct { table: table.into(), col: col.into() },
            gold: format!("SELECT COUNT(DISTINCT {table}.{col}) FROM {table}"),
        });
    }
    for cmp in CMPS {
        for n in 1..=5i64 {
            out.push(Instance {
                pattern: Pattern::GroupHavingCount { cmp, n },
                gold: format!(
                    "SELECT {ent}.{name} FROM {join} GROUP BY {ent}.id, {ent}.{name} \
                     HAVING COUNT(*) {} {n}",
                    cmp.sql()
                ),
            });
        }
    }
    for cmp in CMPS {
        for &n in &meta.val_literals {
            out.push(Instance {
                pattern: Pattern::JoinFilter { cmp, n },
                gold: format!(
                    "SELECT {ent}.{name} FROM {join} WHERE {sat}.{val} {} {n}",
                    cmp.sql()
                ),
            });
        }
    }
    for n in 1..=4i64 {
        out.push(Instance {
            pattern: Pattern::DistinctHaving { n },
            gold: format!(
                "SELECT {ent}.{name} FROM {join} GROUP BY {ent}.id, {ent}.{name} \
                 HAVING COUNT(DISTINCT {sat}.{val}) > {n}"
            ),
        });
    }
    for k in 1..=4u64 {
        out.push(Instance {
            pattern: Pattern::OrderLimit { k },
            gold: format!(
                "SELECT {ent}.{name} FROM {ent} ORDER BY {ent}.{num} DESC LIMIT {k}"
            ),
        });
    }
    for agg in AGGS {
        out.push(Instance {
            pattern: Pattern::Aggregate { agg },
            gold: format!("SELECT {}({sat}.{val}) FROM {sat}", agg.sql()),
        });
    }
    for a in 1..=6i64 {
        for b in (a + 1)..=7i64 {
            out.push(Instance {
                pattern: Pattern::InList { a, b },
                gold: format!("SELECT {ent}.{name} FROM {ent} WHERE {ent}.id IN ({a}, {b})"),
            });
        }
    }
    out
}

fn question(meta: &SchemaMeta, pattern: &Pattern, lang: &str) -> String {
    let ent = meta.ent;
    let sat = meta.sat;
    let name = meta.name_col;
    let num = meta.num_col;
    let val = meta.val_col;
    match pattern {
        Pattern::ListColumn { table, col } => match lang {
            "en" => format!("list {col} from {table}"),
            "vi" => format!("liệt kê {col} từ {table}"),
            "es" => format!("lista {col} de {table}"),
            "ja" => format!("{table} の {col} を一覧表示"),
            "de" => format!("liste {col} aus {table}"),
            "zh" => format!("列出 {table} 的 {col}"),
            "fr" => format!("liste {col} de {table}"),
            _ => unreachable!(),
        },
        Pattern::CountRows { table } => match lang {
            "en" => format!("how many rows are in {table}"),
            "vi" => format!("có bao nhiêu hàng trong {table}"),
            "es" => format!("cuántas filas hay en {table}"),
            "ja" => format!("{table} の行数は"),
            "de" => format!("wie viele zeilen hat {table}"),
            "zh" => format!("{table} 有多少行"),
            "fr" => format!("combien de lignes dans {table}"),
            _ => unreachable!(),
        },
        Pattern::FilterEntity { cmp, lit } => {
            let w = cmp.word(lang);
            let v = lit.sql();
            match lang {
                "en" => format!("show {name} of {ent} where {num} is {w} {v}"),
                "vi" => format!("hiển thị {name} của {ent} có {num} {w} {v}"),
                "es" => format!("muestra {name} de {ent} con {num} {w} {v}"),
                "ja" => format!("{num} が {v} {w} の {ent} の {name} を表示"),
                "de" => format!("zeige {name} von {ent} mit {num} {w} {v}"),
                "zh" => format!("显示 {num} {w} {v} 的 {ent} 的 {name}"),
                "fr" => format!("affiche {name} de {ent} avec {num} {w} {v}"),
                _ => unreachable!(),
            }
        }
        Pattern::CountDistinct { table, col } => match lang {
            "en" => format!("count distinct {col} in {table}"),
            "vi" => format!("đếm {col} khác nhau trong {table}"),
            "es" => format!("cuenta {col} distintos en {table}"),
            "ja" => format!("{table} の異なる {col} を数える"),
            "de" => format!("zähle verschiedene {col} in {table}"),
            "zh" => format!("统计 {table} 中不同的 {col}"),
            "fr" => format!("compte les {col} distincts dans {table}"),
            _ => unreachable!(),
        },
        Pattern::GroupHavingCount { cmp, n } => {
            let w = cmp.word(lang);
            match lang {
                "en" => format!("show {name} of {ent} with a number of {sat} rows {w} {n}"),
                "vi" => format!("hiển thị {name} của {ent} có số hàng {sat} {w} {n}"),
                "es" => format!("muestra {name} de {ent} con un número de filas de {sat} {w} {n}"),
                "ja" => format!("{sat} の行数が {n} {w} の {ent} の {name} を表示"),
                "de" => format!("zeige {name} von {ent} mit einer anzahl von {sat} zeilen {w} {n}"),
                "zh" => format!("显示 {sat} 行数 {w} {n} 的 {ent} 的 {name}"),
                "fr" => format!("affiche {name} de {ent} avec un nombre de lignes {sat} {w} {n}"),
                _ => unreachable!(),
            }
        }
        Pattern::JoinFilter { cmp, n } => {
            let w = cmp.word(lang);
            match lang {
                "en" => format!("show {name} of {ent} having a {sat} with {val} {w} {n}"),
                "vi" => format!("hiển thị {name} của {ent} có {sat} với {val} {w} {n}"),
                "es" => format!("muestra {name} de {ent} que tenga un {sat} con {val} {w} {n}"),
                "ja" => format!("{val} が {n} {w} の {sat} を持つ {ent} の {name} を表示"),
                "de" => format!("zeige {name} von {ent} mit einem {sat} mit {val} {w} {n}"),
                "zh" => format!("显示拥有 {val} {w} {n} 的 {sat} 的 {ent} 的 {name}"),
                "fr" => format!("affiche {name} de {ent} ayant un {sat} avec {val} {w} {n}"),
                _ => unreachable!(),
            }
        }
        Pattern::DistinctHaving { n } => match lang {
            "en" => format!("show {name} of {ent} with more than {n} distinct {val}"),
            "vi" => format!("hiển thị {name} của {ent} có nhiều hơn {n} {val} khác nhau"),
            "es" => format!("muestra {name} de {ent} con más de {n} {val} distintos"),
            "ja" => format!("{n} 種類を超える {val} を持つ {ent} の {name} を表示"),
            "de" => format!("zeige {name} von {ent} mit mehr als {n} verschiedenen {val}"),
            "zh" => format!("显示拥有超过 {n} 个不同 {val} 的 {ent} 的 {name}"),
            "fr" => format!("affiche {name} de {ent} avec plus de {n} {val} distincts"),
            _ => unreachable!(),
        },
        Pattern::OrderLimit { k } => match lang {
            "en" => format!("show the top {k} {ent} {name} by {num}"),
            "vi" => format!("hiển thị {k} {name} của {ent} đứng đầu theo {num}"),
            "es" => format!("muestra los {k} primeros {name} de {ent} por {num}"),
            "ja" => format!("{num} の上位 {k} 件の {ent} の {name} を表示"),
            "de" => format!("zeige die top {k} {name} von {ent} nach {num}"),
            "zh" => format!("按 {num} 显示前 {k} 个 {ent} 的 {name}"),
            "fr" => format!("affiche les {k} premiers {name} de {ent} par {num}"),
            _ => unreachable!(),
        },
        Pattern::Aggregate { agg } => {
            let w = agg.word(lang);
            match lang {
                "en" => format!("what is the {w} {val} in {sat}"),
                "vi" => format!("{val} {w} trong {sat} là bao nhiêu"),
                "es" => format!("cuál es el {val} {w} en {sat}"),
                "ja" => format!("{sat} の {val} の{w}は"),
                "de" => format!("was ist der {w} {val} in {sat}"),
                "zh" => format!("{sat} 中 {val} 的{w}值是多少"),
                "fr" => format!("quel est le {val} {w} dans {sat}"),
                _ => unreachable!(),
            }
        }
        Pattern::InList { a, b } => match lang {
            "en" => format!("show {name} of {ent} with id {a} or {b}"),
            "vi" => format!("hiển thị {name} của {ent} có id {a} hoặc {b}"),
            "es" => format!("muestra {name} de {ent} con id {a} o {b}"),
            "ja" => format!("id が {a} か {b} の {ent} の {name} を表示"),
            "de" => format!("zeige {name} von {ent} mit id {a} oder {b}"),
            "zh" => format!("显示 id 为 {a} 或 {b} 的 {ent} 的 {name}"),
            "fr" => format!("affiche {name} de {ent} avec id {a} ou {b}"),
            _ => unreachable!(),
        },
    }
}

/// A generated corpus, before writing to disk.
pub struct Corpus {
    pub databases: Vec<(Schema, DatabaseState)>,
    pub train: Vec<Example>,
    pub dev: Vec<Example>,
}

/// Builds the parallel corpus: `per_schema_train` + `per_schema_dev` distinct
/// instantiations per schema, each rendered in all seven languages.
pub fn make_corpus(
    seed: u64,
    n_schemas: usize,
    per_schema_train: usize,
    per_schema_dev: usize,
) -> Result<Corpus, String> {
    let all = builtin_schemas();
    if n_schemas == 0 || n_schemas > all.len() {
        return Err(format!("schemas must be 1..={}, got {n_schemas}", all.len()));
    }
    let mut corpus = Corpus { databases: Vec::new(), train: Vec::new(), dev: Vec::new() };

    for meta in all.into_iter().take(n_schemas) {
        let mut instances = enumerate_instances(&meta);
        // dedupe by canonical gold (template enumeration may repeat shapes)
        let mut seen = std::collections::HashSet::new();
        instances.retain(|inst| {
            let canon = canonical_sql(&inst.gold)
                .unwrap_or_else(|e| panic!("template gold must parse: {e}: {}", inst.gold));
            seen.insert(canon)
        });
        let need = per_schema_train + per_schema_dev;
        if instances.len() < need {
            return Err(format!(
                "schema {} has {} distinct instantiations, need {need}",
                meta.schema.db_id,
                instances.len()
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(
            seed.wrapping_mul(0x9E3779B97F4A7C15) ^ fnv(&meta.schema.db_id),
        );
        instances.shuffle(&mut rng);

        for (i, inst) in instances.iter().take(need).enumerate() {
            let split_train = i < per_schema_train;
            let id = format!("{}-{:03}", meta.schema.db_id, i);
            for lang in LANGUAGES {
                let ex = Example {
                    id: id.clone(),
                    db_id: meta.schema.db_id.clone(),
                    lang: lang.to_string(),
                    question: question(&meta, &inst.pattern, lang),
                    gold_sql: inst.gold.clone(),
                };
                if split_train {
                    corpus.train.push(ex);
                } else {
                    corpus.dev.push(ex);
                }
            }
        }
        corpus.databases.push((meta.schema, meta.canonical));
    }
    Ok(corpus)
}

fn fnv(s: &str) -> u64 {
    let mut h = 0xcbf29ce484222325u64;
    for b in s.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Writes schemas, canonical states, and both splits under `workdir`
/// (schemas/, states/, data/). Returns the file paths written.
pub fn write_corpus(workdir: &Path, corpus: &Corpus) -> std::io::Result<Vec<std::path::PathBuf>> {
    use std::fs;
    let schemas_dir = workdir.join("schemas");
    let states_dir = workdir.join("states");
    let data_dir = workdir.join("data");
    fs::create_dir_all(&schemas_dir)?;
    fs::create_dir_all(&states_dir)?;
    fs::create_dir_all(&data_dir)?;

    let mut written = Vec::new();
    for (schema, state) in &corpus.databases {
        let spath = schemas_dir.join(format!("{}.schema.json", schema.db_id));
        fs::write(&spath, schema.to_json() + "\n")?;
        written.push(spath);
        let stpath = states_dir.join(format!("{}.state.json", schema.db_id));
        fs::write(&stpath, state.to_json() + "\n")?;
        written.push(stpath);
    }
    let train = data_dir.join("train.jsonl");
    crate::dataset::write_jsonl(&train, &corpus.train)?;
    written.push(train);
    let dev = data_dir.join("dev.jsonl");
    crate::dataset::write_jsonl(&dev, &corpus.dev)?;
    written.push(dev);
    Ok(written)
}
