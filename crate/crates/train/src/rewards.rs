//! Per-candidate reward signals and their weighted combination.
//!
//! Four signals are computed for every generated query:
//! execution-result match (binary), error-free execution (binary),
//! schema-reference F1 scaled by reference validity, and cosine similarity
//! from the contrastive encoder.

use serde::{Deserialize, Serialize};

use babelsql_nn::encoder::{cosine, Encoder};
use babelsql_rel::exec::{compare_results, execute, ExecError, ResultTable};
use babelsql_rel::schema::Schema;
use babelsql_rel::sql::ast::SelectStmt;
use babelsql_rel::sql::resolve::SchemaRefs;
use babelsql_rel::sql::{extract_refs, parse, render};
use babelsql_rel::state::DatabaseState;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardWeights {
    pub w_exec: f64,
    pub w_syntax: f64,
    pub w_schema: f64,
    pub w_sem: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        // execution carries full weight; syntax and schema shape the signal;
        // the semantic term stays a secondary nudge
        RewardWeights { w_exec: 1.0, w_syntax: 0.5, w_schema: 0.5, w_sem: 0.2 }
    }
}

impl RewardWeights {
    pub fn validate(&self) -> Result<(), String> {
        for (name, w) in [
            ("w_exec", self.w_exec),
            ("w_syntax", self.w_syntax),
            ("w_schema", self.w_schema),
            ("w_sem", self.w_sem),
        ] {
            if !(w.is_finite() && w >= 0.0) {
                return Err(format!("{name} must be a non-negative real, got {w}"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardBundle {
    pub r_exec: f64,
    pub r_syntax: f64,
    pub r_schema: f64,
    pub r_sem: f64,
    pub r_total: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// r_total = w · (r_exec, r_syntax, r_schema, r_sem).
pub fn combine(r_exec: f64, r_syntax: f64, r_schema: f64, r_sem: f64, w: &RewardWeights) -> f64 {
    w.w_exec * r_exec + w.w_syntax * r_syntax + w.w_schema * r_schema + w.w_sem * r_sem
}

/// Which strings the semantic reward compares.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SemMode {
    /// cos(E(question_L), E(reference English question)) — constant across a
    /// sampled group, so it cancels under group-standardized advantages.
    Question,
    /// cos(E(question_L), E(candidate SQL text)) — candidate-dependent.
    Sql,
}

/// Everything fixed per prompt when scoring a group of candidates.
pub struct RewardContext<'a> {
    pub schema: &'a Schema,
    pub state: &'a DatabaseState,
    pub gold: &'a SelectStmt,
    pub gold_result: &'a ResultTable,
    pub gold_refs: &'a SchemaRefs,
    pub question: &'a str,
    /// English sibling of the question (required by `SemMode::Question`).
    pub reference_question: Option<&'a str>,
}

impl<'a> RewardContext<'a> {
    /// Precomputes the gold side. The gold query must execute cleanly.
    pub fn prepare_gold(
        schema: &Schema,
        state: &DatabaseState,
        gold: &SelectStmt,
    ) -> Result<(ResultTable, SchemaRefs), ExecError> {
        let result = execute(gold, schema, state)?;
        let refs = extract_refs(gold, schema)
            .map_err(|e| ExecError::Type(format!("gold does not resolve: {e}")))?;
        Ok((result, refs))
    }
}

/// 1 iff the candidate parses, executes without error, and its result set
/// equals the gold's.
pub fn exec_reward(
    candidate: Result<&SelectStmt, &str>,
    gold_result: &ResultTable,
    schema: &Schema,
    state: &DatabaseState,
) -> f64 {
    let Ok(ast) = candidate else { return 0.0 };
    match execute(ast, schema, state) {
        Ok(result) if compare_results(&result, gold_result) => 1.0,
        _ => 0.0,
    }
}

/// 1 iff the candidate parses and executes without error.
pub fn syntax_reward(candidate: Result<&SelectStmt, &str>, schema: &Schema, state: &DatabaseState) -> f64 {
    match candidate {
        Ok(ast) => match execute(ast, schema, state) {
            Ok(_) => 1.0,
            Err(_) => 0.0,
        },
        Err(_) => 0.0,
    }
}

/// F1 overlap between candidate and gold schema references, multiplied by
/// the fraction of candidate references that actually exist. Unparseable or
/// unresolvable candidates score 0.
pub fn schema_reward(candidate: Result<&SelectStmt, &str>, gold_refs: &SchemaRefs, schema: &Schema) -> f64 {
    let Ok(ast) = candidate else { return 0.0 };
    let Ok(refs) = extract_refs(ast, schema) else { return 0.0 };
    let cand = refs.valid_set();
    let gold = gold_refs.valid_set();
    let inter = cand.intersection(&gold).count();
    let f1 = if cand.is_empty() || gold.is_empty() {
        0.0
    } else {
        2.0 * inter as f64 / (cand.len() + gold.len()) as f64
    };
    let invalid = refs.invalid.len();
    let validity = if cand.len() + invalid == 0 {
        1.0
    } else {
        cand.len() as f64 / (cand.len() + invalid) as f64
    };
    f1 * validity
}

/// Cosine similarity in [-1, 1]. In `Question` mode compares the question
/// against its English reference; in `Sql` mode against the candidate SQL
/// (canonical form when parseable, raw text otherwise). Returns 0 when a
/// side cannot be embedded.
pub fn semantic_reward(
    encoder: &Encoder,
    question: &str,
    reference_question: Option<&str>,
    mode: SemMode,
    candidate_sql: &str,
) -> f64 {
    let other = match mode {
        SemMode::Question => match reference_question {
            Some(r) => r.to_string(),
            None => return 0.0,
        },
        SemMode::Sql => match parse(candidate_sql) {
            Ok(ast) => render(&ast),
            Err(_) => candidate_sql.to_string(),
        },
    };
    match (encoder.embed(question), encoder.embed(&other)) {
        (Ok(a), Ok(b)) => cosine(&a, &b),
        _ => 0.0,
    }
}

/// Scores one candidate against a prepared context.
pub fn score_candidate(
    ctx: &RewardContext,
    candidate_sql: &str,
    encoder: Option<&Encoder>,
    sem_mode: SemMode,
    weights: &RewardWeights,
) -> RewardBundle {
    let parsed = parse(candidate_sql);
    let (candidate, mut error) = match &parsed {
        Ok(ast) => (Ok(ast), None),
        Err(e) => (Err(candidate_sql), Some(format!("parse: {e}"))),
    };

    let r_syntax = syntax_reward(candidate, ctx.schema, ctx.state);
    if r_syntax == 0.0 && error.is_none() {
        if let Ok(ast) = candidate {
            if let Err(e) = execute(ast, ctx.schema, ctx.state) {
                error = Some(format!("execute: {e}"));
            }
        }
    }
    let r_exec = if r_syntax == 0.0 {
        0.0
    } else {
        exec_reward(candidate, ctx.gold_result, ctx.schema, ctx.state)
    };
    let r_schema = schema_reward(candidate, ctx.gold_refs, ctx.schema);
    let r_sem = match encoder {
        Some(enc) => {
            semantic_reward(enc, ctx.question, ctx.reference_question, sem_mode, candidate_sql)
        }
        None => 0.0,
    };
    let r_total = combine(r_exec, r_syntax, r_schema, r_sem, weights);
    RewardBundle { r_exec, r_syntax, r_schema, r_sem, r_total, error }
}

#[cfg(test)]
mod tests {
    use super::*;
    use babelsql_rel::fixtures;

    struct Fixture {
        schema: Schema,
        state: DatabaseState,
        gold: SelectStmt,
        gold_result: ResultTable,
        gold_refs: SchemaRefs,
    }

    fn fixture() -> Fixture {
        let schema = fixtures::movies_schema();
        let state = fixtures::movies_fixture_state();
        let gold = parse(fixtures::GOLD_SQL).unwrap();
        let gold_result = execute(&gold, &schema, &state).unwrap();
        let gold_refs = extract_refs(&gold, &schema).unwrap();
        Fixture { schema, state, gold, gold_result, gold_refs }
    }

    fn ctx(f: &Fixture) -> RewardContext<'_> {
        RewardContext {
            schema: &f.schema,
            state: &f.state,
            gold: &f.gold,
            gold_result: &f.gold_result,
            gold_refs: &f.gold_refs,
            question: "show actors in more than 3 movies",
            reference_question: Some("show actors in more than 3 movies"),
        }
    }

    #[test]
    fn gold_candidate_scores_full_exec() {
        let f = fixture();
        let bundle = score_candidate(
            &ctx(&f),
            fixtures::GOLD_SQL,
            None,
            SemMode::Sql,
            &RewardWeights::default(),
        );
        assert_eq!(bundle.r_exec, 1.0);
        assert_eq!(bundle.r_syntax, 1.0);
        assert!((bundle.r_schema - 1.0).abs() < 1e-12);
        assert!(bundle.error.is_none());
    }

    #[test]
    fn near_miss_executes_but_mismatches() {
        let f = fixture();
        let bundle = score_candidate(
            &ctx(&f),
            fixtures::NEAR_MISS_SQL,
            None,
            SemMode::Sql,
            &RewardWeights::default(),
        );
        assert_eq!(bundle.r_syntax, 1.0);
        assert_eq!(bundle.r_exec, 0.0);
    }

    #[test]
    fn unparseable_candidate_scores_zero() {
        let f = fixture();
        let bundle =
            score_candidate(&ctx(&f), "SELECT FROM", None, SemMode::Sql, &RewardWeights::default());
        assert_eq!(bundle.r_exec, 0.0);
        assert_eq!(bundle.r_syntax, 0.0);
        assert_eq!(bundle.r_schema, 0.0);
        assert!(bundle.error.unwrap().starts_with("parse:"));
    }

    #[test]
    fn unknown_column_fails_syntax_with_error() {
        let f = fixture();
        let bundle = score_candidate(
            &ctx(&f),
            "SELECT actor.wage FROM actor",
            None,
            SemMode::Sql,
            &RewardWeights::default(),
        );
        assert_eq!(bundle.r_syntax, 0.0);
        assert!(bundle.error.unwrap().starts_with("execute:"));
    }

    #[test]
    fn exec_implies_syntax() {
        let f = fixture();
        for sql in [fixtures::GOLD_SQL, fixtures::NEAR_MISS_SQL, "SELECT FROM", "SELECT 1"] {
            let b = score_candidate(&ctx(&f), sql, None, SemMode::Sql, &RewardWeights::default());
            assert!(b.r_exec <= b.r_syntax, "{sql}");
        }
    }

    #[test]
    fn schema_reward_hand_value() {
        // candidate refs {actor, actor.name} against gold's 6 refs:
        // F1 = 2*2/(2+6) = 0.5, validity 1
        let f = fixture();
        let cand = parse("SELECT actor.name FROM actor").unwrap();
        let s = schema_reward(Ok(&cand), &f.gold_refs, &f.schema);
        assert!((s - 0.5).abs() < 1e-12);
    }

    #[test]
    fn schema_reward_validity_multiplier() {
        // 4 referenced names, 3 valid and in gold, 1 nonexistent:
        // validity = 3/4
        let f = fixture();
        let cand = parse("SELECT actor.name, actor.wage FROM actor").unwrap();
        let refs = extract_refs(&cand, &f.schema).unwrap();
        assert_eq!(refs.valid_count(), 2); // actor, actor.name
        assert_eq!(refs.invalid.len(), 1);
        let s = schema_reward(Ok(&cand), &f.gold_refs, &f.schema);
        let f1 = 2.0 * 2.0 / (2.0 + 6.0);
        assert!((s - f1 * 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn schema_reward_alias_and_case_invariant() {
        let f = fixture();
        let a = parse("SELECT actor.name FROM actor").unwrap();
        let b = parse("select A.NAME from ACTOR as a").unwrap();
        assert_eq!(
            schema_reward(Ok(&a), &f.gold_refs, &f.schema),
            schema_reward(Ok(&b), &f.gold_refs, &f.schema)
        );
    }

    #[test]
    fn select_one_schema_reward_zero() {
        let f = fixture();
        let cand = parse("SELECT 1").unwrap();
        assert_eq!(schema_reward(Ok(&cand), &f.gold_refs, &f.schema), 0.0);
    }

    #[test]
    fn combine_hand_values() {
        let w = RewardWeights::default();
        assert!((combine(1.0, 1.0, 1.0, 1.0, &w) - 2.2).abs() < 1e-12);
        assert_eq!(combine(0.0, 0.0, 0.0, 0.0, &w), 0.0);
        assert!((combine(0.0, 1.0, 0.5, 0.8, &w) - 0.91).abs() < 1e-12);
    }

    #[test]
    fn combine_monotone_in_each_signal() {
        let w = RewardWeights::default();
        let base = combine(0.0, 1.0, 0.3, 0.1, &w);
        assert!(combine(1.0, 1.0, 0.3, 0.1, &w) >= base);
        assert!(combine(0.0, 1.0, 0.4, 0.1, &w) >= base);
        assert!(combine(0.0, 1.0, 0.3, 0.5, &w) >= base);
    }

    #[test]
    fn semantic_reward_identical_strings() {
        use babelsql_nn::encoder::EncoderConfig;
        let enc = Encoder::new(EncoderConfig::default(), 5);
        let s = semantic_reward(&enc, "count actors", Some("count actors"), SemMode::Question, "");
        assert!((s - 1.0).abs() < 1e-9);
        let s2 = semantic_reward(&enc, "count actors", None, SemMode::Sql, "count actors");
        assert!((s2 - 1.0).abs() < 1e-9);
    }

    #[test]
    fn semantic_reward_missing_reference_is_zero() {
        use babelsql_nn::encoder::EncoderConfig;
        let enc = Encoder::new(EncoderConfig::default(), 5);
        assert_eq!(semantic_reward(&enc, "q", None, SemMode::Question, "x"), 0.0);
    }

    #[test]
    fn reward_ranges_hold_on_garbage() {
        use babelsql_nn::encoder::EncoderConfig;
        let f = fixture();
        let enc = Encoder::new(EncoderConfig::default(), 5);
        for cand in ["", "SELECT", "garbage γλώσσα 日本語", fixtures::GOLD_SQL, "SELECT 1"] {
            let b = score_candidate(&ctx(&f), cand, Some(&enc), SemMode::Sql, &RewardWeights::default());
            assert!(b.r_exec == 0.0 || b.r_exec == 1.0);
            assert!(b.r_syntax == 0.0 || b.r_syntax == 1.0);
            assert!((0.0..=1.0).contains(&b.r_schema));
            assert!((-1.0..=1.0).contains(&b.r_sem));
            assert!(b.r_exec <= b.r_syntax);
        }
    }
}
