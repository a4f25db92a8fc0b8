//! Evaluation: execution accuracy on the canonical state and semantic
//! accuracy via result comparison across multiple generated database states.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use babelsql_nn::policy::{serialize_prompt, Policy};
use babelsql_rel::exec::{compare_results, execute};
use babelsql_rel::schema::Schema;
use babelsql_rel::sql::ast::SelectStmt;
use babelsql_rel::sql::parse;
use babelsql_rel::state::{generate_random_state, DatabaseState};

use crate::dataset::{Dataset, DbCatalog, Example};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    /// Number of database states for the semantic-equivalence oracle; the
    /// canonical state is always state 1.
    pub k_states: usize,
    pub state_size: usize,
    pub state_seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { k_states: 5, state_size: 8, state_seed: 0x5EED }
    }
}

/// True iff `candidate` executes error-free and returns results equal to
/// `gold` on every one of the K states (canonical first, then seeded random
/// states on which the gold itself executes error-free).
pub fn sem_equivalent(
    candidate: &SelectStmt,
    gold: &SelectStmt,
    schema: &Schema,
    canonical: &DatabaseState,
    cfg: &EvalConfig,
) -> bool {
    let states = oracle_states(gold, schema, canonical, cfg);
    for state in &states {
        let Ok(gold_result) = execute(gold, schema, state) else { return false };
        let Ok(cand_result) = execute(candidate, schema, state) else { return false };
        if !compare_results(&cand_result, &gold_result) {
            return false;
        }
    }
    true
}

/// The K oracle states: canonical plus seeded random states, skipping any on
/// which the gold fails to execute (regenerated with the next seed).
pub fn oracle_states(
    gold: &SelectStmt,
    schema: &Schema,
    canonical: &DatabaseState,
    cfg: &EvalConfig,
) -> Vec<DatabaseState> {
    let mut states = vec![canonical.clone()];
    let mut seed = cfg.state_seed;
    let mut attempts = 0;
    while states.len() < cfg.k_states && attempts < 100 {
        attempts += 1;
        let s = seed;
        seed += 1;
        let Ok(state) = generate_random_state(schema, s, cfg.state_size) else { continue };
        if execute(gold, schema, &state).is_ok() {
            states.push(state);
        }
    }
    states
}

/// Anything that maps an example to a SQL string; the production
/// implementation greedy-decodes the policy.
pub trait SqlGenerator {
    fn generate(&self, example: &Example, schema: &Schema) -> String;
}

pub struct GreedyPolicy<'a> {
    pub policy: &'a Policy,
}

impl SqlGenerator for GreedyPolicy<'_> {
    fn generate(&self, example: &Example, schema: &Schema) -> String {
        let tok = &self.policy.config.tokenizer;
        match serialize_prompt(&example.question, schema, &example.lang, tok) {
            Ok(prompt) => {
                let tokens = self.policy.greedy_decode(&prompt, tok.max_gen_len);
                babelsql_nn::detokenize(&tokens)
            }
            Err(_) => String::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LangMetrics {
    pub n: usize,
    pub exec_pct: f64,
    pub sem_pct: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub arm: String,
    pub split: String,
    pub k_states: usize,
    pub state_size: usize,
    pub state_seed: u64,
    pub n_examples: usize,
    pub per_lang: BTreeMap<String, LangMetrics>,
    /// Arithmetic mean over the language rows (Table-style average).
    pub avg_exec: f64,
    pub avg_sem: f64,
    pub notes: Vec<String>,
    pub config_fingerprint: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExampleOutcome {
    pub id: String,
    pub lang: String,
    pub generated: String,
    pub exec_ok: bool,
    pub sem_ok: bool,
}

/// Runs a generator over a split and aggregates both metrics per language.
pub fn evaluate_split(
    generator: &dyn SqlGenerator,
    dataset: &Dataset,
    catalog: &DbCatalog,
    cfg: &EvalConfig,
    arm: &str,
    notes: Vec<String>,
    config_fingerprint: &str,
) -> (EvalReport, Vec<ExampleOutcome>) {
    let mut outcomes = Vec::with_capacity(dataset.examples.len());
    let mut buckets: BTreeMap<String, (usize, usize, usize)> = BTreeMap::new();

    for ex in &dataset.examples {
        let db = catalog.get(&ex.db_id).expect("validated dataset has all schemas");
        let generated = generator.generate(ex, &db.schema);
        let gold = parse(&ex.gold_sql).expect("validated dataset gold parses");

        let (exec_ok, sem_ok) = match parse(&generated) {
            Err(_) => (false, false),
            Ok(cand) => {
                let exec_ok = execute(&cand, &db.schema, &db.canonical).is_ok();
                let sem_ok =
                    exec_ok && sem_equivalent(&cand, &gold, &db.schema, &db.canonical, cfg);
                (exec_ok, sem_ok)
            }
        };
        let bucket = buckets.entry(ex.lang.clone()).or_insert((0, 0, 0));
        bucket.0 += 1;
        bucket.1 += exec_ok as usize;
        bucket.2 += sem_ok as usize;
        outcomes.push(ExampleOutcome {
            id: ex.id.clone(),
            lang: ex.lang.clone(),
            generated,
            exec_ok,
            sem_ok,
        });
    }

    let per_lang: BTreeMap<String, LangMetrics> = buckets
        .into_iter()
        .map(|(lang, (n, e, s))| {
            (
                lang,
                LangMetrics {
                    n,
                    exec_pct: 100.0 * e as f64 / n.max(1) as f64,
                    sem_pct: 100.0 * s as f64 / n.max(1) as f64,
                },
            )
        })
        .collect();
    let langs = per_lang.len().max(1) as f64;
    let avg_exec = per_lang.values().map(|m| m.exec_pct).sum::<f64>() / langs;
    let avg_sem = per_lang.values().map(|m| m.sem_pct).sum::<f64>() / langs;

    let report = EvalReport {
        arm: arm.to_string(),
        split: dataset.split.clone(),
        k_states: cfg.k_states,
        state_size: cfg.state_size,
        state_seed: cfg.state_seed,
        n_examples: dataset.examples.len(),
        per_lang,
        avg_exec,
        avg_sem,
        notes,
        config_fingerprint: config_fingerprint.to_string(),
    };
    (report, outcomes)
}

/// Markdown grid of languages × arms ("Exec / Sem" cells) with an averages
/// row. With exactly two arms, a Δ SemAcc column (second minus first) is
/// appended.
pub fn render_report(reports: &[EvalReport]) -> String {
    assert!(!reports.is_empty(), "render_report needs at least one report");
    let mut langs: Vec<String> = Vec::new();
    for r in reports {
        for lang in r.per_lang.keys() {
            if !langs.contains(lang) {
                langs.push(lang.clone());
            }
        }
    }
    langs.sort();
    let delta_col = reports.len() == 2;

    let mut out = String::new();
    out.push_str("| Language |");
    for r in reports {
        out.push_str(&format!(" {} Exec / Sem |", r.arm));
    }
    if delta_col {
        out.push_str(" Δ SemAcc |");
    }
    out.push('\n');
    out.push_str("|---|");
    for _ in reports {
        out.push_str("---|");
    }
    if delta_col {
        out.push_str("---|");
    }
    out.push('\n');

    let cell = |m: Option<&LangMetrics>| match m {
        Some(m) => format!("{:.2} / {:.2}", m.exec_pct, m.sem_pct),
        None => "-".to_string(),
    };
    for lang in &langs {
        out.push_str(&format!("| {lang} |"));
        for r in reports {
            out.push_str(&format!(" {} |", cell(r.per_lang.get(lang))));
        }
        if delta_col {
            let a = reports[0].per_lang.get(lang).map(|m| m.sem_pct);
            let b = reports[1].per_lang.get(lang).map(|m| m.sem_pct);
            match (a, b) {
                (Some(a), Some(b)) => out.push_str(&format!(" {:+.2} |", b - a)),
                _ => out.push_str(" - |"),
            }
        }
        out.push('\n');
    }
    out.push_str("| **Average** |");
    for r in reports {
        out.push_str(&format!(" **{:.2} / {:.2}** |", r.avg_exec, r.avg_sem));
    }
    if delta_col {
        out.push_str(&format!(" **{:+.2}** |", reports[1].avg_sem - reports[0].avg_sem));
    }
    out.push('\n');

    for r in reports {
        for note in &r.notes {
            out.push_str(&format!("\n> **{}**: {}\n", r.arm, note));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use babelsql_rel::fixtures;

    #[test]
    fn fig4_pair_not_equivalent_with_fixture_as_state_one() {
        let schema = fixtures::movies_schema();
        let canonical = fixtures::movies_fixture_state();
        let gold = parse(fixtures::GOLD_SQL).unwrap();
        let near = parse(fixtures::NEAR_MISS_SQL).unwrap();
        let cfg = EvalConfig::default();
        assert!(!sem_equivalent(&near, &gold, &schema, &canonical, &cfg));
        assert!(sem_equivalent(&gold, &gold, &schema, &canonical, &cfg));
    }

    #[test]
    fn alias_and_whitespace_variants_are_equivalent() {
        let schema = fixtures::movies_schema();
        let canonical = fixtures::movies_fixture_state();
        let gold = parse(fixtures::GOLD_SQL).unwrap();
        let variant = parse(
            "select A.name from actor  AS A join casting as C on A.id = C.actorid \
             group by A.id, A.name having count(distinct C.movieid) > 3",
        )
        .unwrap();
        let cfg = EvalConfig::default();
        assert!(sem_equivalent(&variant, &gold, &schema, &canonical, &cfg));
    }

    #[test]
    fn sem_equivalence_symmetric_for_clean_queries() {
        let schema = fixtures::movies_schema();
        let canonical = fixtures::movies_fixture_state();
        let a = parse("SELECT actor.name FROM actor").unwrap();
        let b = parse("SELECT name FROM actor").unwrap();
        let cfg = EvalConfig::default();
        assert_eq!(
            sem_equivalent(&a, &b, &schema, &canonical, &cfg),
            sem_equivalent(&b, &a, &schema, &canonical, &cfg)
        );
    }

    #[test]
    fn oracle_uses_k_states_with_canonical_first() {
        let schema = fixtures::movies_schema();
        let canonical = fixtures::movies_fixture_state();
        let gold = parse(fixtures::GOLD_SQL).unwrap();
        let cfg = EvalConfig::default();
        let states = oracle_states(&gold, &schema, &canonical, &cfg);
        assert_eq!(states.len(), 5);
        assert_eq!(states[0], canonical);
    }

    #[test]
    fn render_single_arm_grid() {
        let mut per_lang = BTreeMap::new();
        per_lang.insert("en".to_string(), LangMetrics { n: 10, exec_pct: 80.0, sem_pct: 50.0 });
        let report = EvalReport {
            arm: "sft".into(),
            split: "dev".into(),
            k_states: 5,
            state_size: 8,
            state_seed: 1,
            n_examples: 10,
            per_lang,
            avg_exec: 80.0,
            avg_sem: 50.0,
            notes: vec![],
            config_fingerprint: "x".into(),
        };
        let md = render_report(&[report]);
        assert!(md.contains("| en | 80.00 / 50.00 |"));
        assert!(md.contains("**80.00 / 50.00**"));
        assert!(!md.contains("Δ SemAcc"));
    }

    #[test]
    fn render_two_arms_delta_column_and_recomputed_average() {
        let mk = |arm: &str, exec: f64, sem: f64| {
            let mut per_lang = BTreeMap::new();
            for (lang, bump) in [("en", 0.0), ("vi", 10.0)] {
                per_lang.insert(
                    lang.to_string(),
                    LangMetrics { n: 5, exec_pct: exec, sem_pct: sem + bump },
                );
            }
            let avg_exec = per_lang.values().map(|m| m.exec_pct).sum::<f64>() / 2.0;
            let avg_sem = per_lang.values().map(|m| m.sem_pct).sum::<f64>() / 2.0;
            EvalReport {
                arm: arm.into(),
                split: "dev".into(),
                k_states: 5,
                state_size: 8,
                state_seed: 1,
                n_examples: 10,
                per_lang,
                avg_exec,
                avg_sem,
                notes: vec![],
                config_fingerprint: "x".into(),
            }
        };
        let nc = mk("grpo-nc", 84.0, 40.0);
        let c = mk("grpo-c", 86.0, 48.0);
        // averages row equals the mean of the language rows, recomputed
        assert!((nc.avg_sem - 45.0).abs() < 1e-12);
        let md = render_report(&[nc, c]);
        assert!(md.contains("Δ SemAcc"), "{md}");
        assert!(md.contains("+8.00"), "{md}");
    }
}
