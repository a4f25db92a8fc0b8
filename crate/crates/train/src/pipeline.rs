//! End-to-end phases: SFT warm-start and the GRPO loop over a dataset.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use babelsql_nn::encoder::Encoder;
use babelsql_nn::policy::{serialize_prompt, Policy, PolicyConfig, SftConfig, SftLogEntry, EOS};
use babelsql_nn::NnError;
use babelsql_rel::exec::{execute, ResultTable};
use babelsql_rel::sql::ast::SelectStmt;
use babelsql_rel::sql::parse;
use babelsql_rel::sql::resolve::SchemaRefs;

use crate::dataset::{Dataset, DbCatalog};
use crate::grpo::{
    group_advantages, GroupRollout, GrpoConfig, GrpoTrainer, ScoredCandidate, StepRecord,
    TrainError,
};
use crate::rewards::{score_candidate, RewardContext};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("example {id}: {msg}")]
    Example { id: String, msg: String },
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error("{0}")]
    Other(String),
}

/// Everything per example the loops need, precomputed once.
pub struct PreparedExample {
    pub idx: usize,
    pub id: String,
    pub db_id: String,
    pub lang: String,
    pub question: String,
    pub reference_question: Option<String>,
    pub prompt: Vec<u16>,
    pub gold_tokens: Vec<u16>,
    pub gold_ast: SelectStmt,
    pub gold_result: ResultTable,
    pub gold_refs: SchemaRefs,
}

pub fn prepare_examples(
    dataset: &Dataset,
    catalog: &DbCatalog,
    policy_cfg: &PolicyConfig,
) -> Result<Vec<PreparedExample>, PipelineError> {
    let mut out = Vec::with_capacity(dataset.examples.len());
    for (idx, ex) in dataset.examples.iter().enumerate() {
        let db = catalog.get(&ex.db_id).ok_or_else(|| PipelineError::Example {
            id: ex.id.clone(),
            msg: format!("no schema for db {:?}", ex.db_id),
        })?;
        let fail = |msg: String| PipelineError::Example { id: ex.id.clone(), msg };
        let prompt = serialize_prompt(&ex.question, &db.schema, &ex.lang, &policy_cfg.tokenizer)
            .map_err(|e| fail(e.to_string()))?;
        let gold_ast = parse(&ex.gold_sql).map_err(|e| fail(format!("gold: {e}")))?;
        let (gold_result, gold_refs) =
            RewardContext::prepare_gold(&db.schema, &db.canonical, &gold_ast)
                .map_err(|e| fail(format!("gold: {e}")))?;
        let mut gold_tokens = babelsql_nn::tokenize(&ex.gold_sql);
        gold_tokens.push(EOS);
        if gold_tokens.len() > policy_cfg.tokenizer.max_gen_len {
            return Err(fail(format!(
                "gold SQL is {} tokens, generation limit {}",
                gold_tokens.len(),
                policy_cfg.tokenizer.max_gen_len
            )));
        }
        if prompt.len() + gold_tokens.len() > policy_cfg.max_ctx {
            return Err(fail("prompt plus gold exceeds the context window".into()));
        }
        out.push(PreparedExample {
            idx,
            id: ex.id.clone(),
            db_id: ex.db_id.clone(),
            lang: ex.lang.clone(),
            question: ex.question.clone(),
            reference_question: dataset.english_reference(&ex.id).map(str::to_string),
            prompt,
            gold_tokens,
            gold_ast,
            gold_result,
            gold_refs,
        });
    }
    Ok(out)
}

/// Supervised warm-start: trains a fresh policy on (prompt, gold) pairs.
pub fn run_sft(
    dataset: &Dataset,
    catalog: &DbCatalog,
    policy_cfg: PolicyConfig,
    sft_cfg: &SftConfig,
    init_seed: u64,
) -> Result<(Policy, Vec<SftLogEntry>), PipelineError> {
    let prepared = prepare_examples(dataset, catalog, &policy_cfg)?;
    let pairs: Vec<(Vec<u16>, Vec<u16>)> = prepared
        .into_iter()
        .map(|p| (p.prompt, p.gold_tokens))
        .collect();
    let mut policy = Policy::new(policy_cfg, init_seed);
    let log = policy.sft_train(&pairs, sft_cfg)?;
    Ok((policy, log))
}

/// Greedy-decodes `sample` prepared examples starting at a rotating offset
/// and reports the fraction that execute cleanly.
pub fn exec_probe(
    policy: &Policy,
    prepared: &[PreparedExample],
    catalog: &DbCatalog,
    offset: usize,
    sample: usize,
) -> f64 {
    if prepared.is_empty() || sample == 0 {
        return 0.0;
    }
    let n = sample.min(prepared.len());
    let mut ok = 0usize;
    for k in 0..n {
        let p = &prepared[(offset + k) % prepared.len()];
        let db = &catalog[&p.db_id];
        let tokens = policy.greedy_decode(&p.prompt, policy.config.tokenizer.max_gen_len);
        let text = babelsql_nn::detokenize(&tokens);
        if let Ok(ast) = parse(&text) {
            if execute(&ast, &db.schema, &db.canonical).is_ok() {
                ok += 1;
            }
        }
    }
    ok as f64 / n as f64
}

pub struct GrpoRun {
    pub policy: Policy,
    pub log: Vec<StepRecord>,
    /// True when the configuration makes the semantic term cancel under
    /// group standardization (question mode: constant within each group).
    pub sem_cancellation: bool,
}

/// The full RL loop: group sampling, reward computation, group-relative
/// advantages, and KL-regularized updates against the frozen SFT reference.
pub fn run_grpo(
    dataset: &Dataset,
    catalog: &DbCatalog,
    sft_policy: Policy,
    encoder: Option<&Encoder>,
    cfg: GrpoConfig,
) -> Result<GrpoRun, PipelineError> {
    cfg.validate().map_err(TrainError::Config)?;
    if cfg.weights.w_sem > 0.0 && encoder.is_none() {
        return Err(PipelineError::Other(
            "w_sem > 0 requires an encoder checkpoint (use --no-contrastive for w_sem = 0)"
                .into(),
        ));
    }
    let prepared = prepare_examples(dataset, catalog, &sft_policy.config)?;
    if prepared.is_empty() {
        return Err(PipelineError::Other("empty training dataset".into()));
    }

    let mut policy = sft_policy;
    let reference = policy.clone_frozen();
    let sem_cancellation =
        cfg.weights.w_sem > 0.0 && cfg.sem_mode == crate::rewards::SemMode::Question;
    let max_gen = policy.config.tokenizer.max_gen_len;
    let probe_every = cfg.exec_probe_every;
    let probe_size = cfg.exec_probe_size;
    let steps = cfg.steps;
    let batch_prompts = cfg.batch_prompts;
    let adv_epsilon = cfg.adv_epsilon;
    let weights = cfg.weights;
    let sem_mode = cfg.sem_mode;
    let seed = cfg.seed;

    let mut order: Vec<usize> = (0..prepared.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6A70);
    order.shuffle(&mut rng);
    let mut cursor = 0usize;

    let mut trainer = GrpoTrainer::new(&mut policy, &reference, cfg)?;
    let mut log = Vec::with_capacity(steps);

    for step in 1..=steps {
        let mut batch = Vec::with_capacity(batch_prompts);
        for _ in 0..batch_prompts {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            batch.push(order[cursor]);
            cursor += 1;
        }

        let mut rollouts = Vec::with_capacity(batch.len());
        for &pi in &batch {
            let p = &prepared[pi];
            let db = &catalog[&p.db_id];
            let completions = trainer.rollout(&p.prompt, pi as u64, max_gen);
            let ctx = RewardContext {
                schema: &db.schema,
                state: &db.canonical,
                gold: &p.gold_ast,
                gold_result: &p.gold_result,
                gold_refs: &p.gold_refs,
                question: &p.question,
                reference_question: p.reference_question.as_deref(),
            };
            let bundles: Vec<_> = completions
                .iter()
                .map(|c| score_candidate(&ctx, &c.text(), encoder, sem_mode, &weights))
                .collect();
            let rewards: Vec<f64> = bundles.iter().map(|b| b.r_total).collect();
            let advantages = group_advantages(&rewards, adv_epsilon);
            let candidates: Vec<ScoredCandidate> = completions
                .iter()
                .zip(bundles)
                .zip(advantages)
                .map(|((c, bundle), advantage)| ScoredCandidate {
                    text: c.text(),
                    tokens: c.tokens_with_eos(),
                    bundle,
                    advantage,
                })
                .collect();
            rollouts.push(GroupRollout { prompt: p.prompt.clone(), candidates });
        }

        let mut record = trainer.update(&rollouts)?;
        if probe_every > 0 && (step % probe_every == 0 || step == steps) {
            let offset = (step / probe_every.max(1)) * probe_size;
            record.exec_probe =
                Some(exec_probe(trainer.policy, &prepared, catalog, offset, probe_size));
        }
        log.push(record);
    }

    drop(trainer);
    Ok(GrpoRun { policy, log, sem_cancellation })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{make_corpus, write_corpus};
    use crate::dataset::{ingest, load_catalog};
    use crate::rewards::{RewardWeights, SemMode};
    use babelsql_nn::policy::TokenizerConfig;

    fn small_setup() -> (Dataset, DbCatalog) {
        let dir = tempfile::tempdir().unwrap();
        let corpus = make_corpus(5, 1, 6, 2).unwrap();
        write_corpus(dir.path(), &corpus).unwrap();
        let catalog =
            load_catalog(&dir.path().join("schemas"), &dir.path().join("states")).unwrap();
        let train = ingest(&dir.path().join("data/train.jsonl"), "train", &catalog).unwrap();
        (train, catalog)
    }

    fn small_policy_cfg() -> PolicyConfig {
        PolicyConfig {
            n_layers: 1,
            d_model: 16,
            n_heads: 2,
            d_ff: 32,
            max_ctx: 320,
            tokenizer: TokenizerConfig { max_prompt_len: 160, max_gen_len: 150 },
        }
    }

    #[test]
    fn prepare_examples_builds_prompts_and_gold() {
        let (train, catalog) = small_setup();
        let prepared = prepare_examples(&train, &catalog, &small_policy_cfg()).unwrap();
        assert_eq!(prepared.len(), train.examples.len());
        for p in &prepared {
            assert_eq!(*p.prompt.last().unwrap(), babelsql_nn::BOS);
            assert_eq!(*p.gold_tokens.last().unwrap(), EOS);
            assert!(p.reference_question.is_some());
        }
    }

    #[test]
    fn grpo_requires_encoder_when_sem_weight_positive() {
        let (train, catalog) = small_setup();
        let policy = Policy::new(small_policy_cfg(), 1);
        let cfg = GrpoConfig {
            steps: 1,
            batch_prompts: 1,
            group_size: 2,
            weights: RewardWeights { w_sem: 0.2, ..Default::default() },
            ..Default::default()
        };
        assert!(run_grpo(&train, &catalog, policy, None, cfg).is_err());
    }

    #[test]
    fn no_contrastive_arm_runs_without_encoder() {
        let (train, catalog) = small_setup();
        let policy = Policy::new(small_policy_cfg(), 1);
        let cfg = GrpoConfig {
            steps: 2,
            batch_prompts: 2,
            group_size: 2,
            weights: RewardWeights { w_sem: 0.0, ..Default::default() },
            sem_mode: SemMode::Sql,
            exec_probe_every: 1,
            exec_probe_size: 2,
            ..Default::default()
        };
        let run = run_grpo(&train, &catalog, policy, None, cfg).unwrap();
        assert_eq!(run.log.len(), 2);
        assert!(!run.sem_cancellation);
        assert!(run.log.iter().all(|r| r.mean_kl.is_finite()));
    }

    #[test]
    fn reference_policy_stays_frozen_through_steps() {
        let (train, catalog) = small_setup();
        let mut policy = Policy::new(small_policy_cfg(), 1);
        let reference = policy.clone_frozen();
        let ref_before = reference.params.fingerprint();
        let policy_before = policy.params.fingerprint();

        let cfg = GrpoConfig {
            steps: 3,
            batch_prompts: 2,
            group_size: 2,
            beta: 0.02,
            weights: RewardWeights { w_sem: 0.0, ..Default::default() },
            ..Default::default()
        };
        let prepared = prepare_examples(&train, &catalog, &policy.config).unwrap();
        let mut trainer = GrpoTrainer::new(&mut policy, &reference, cfg).unwrap();
        for step in 0..3 {
            let mut rollouts = Vec::new();
            for pi in 0..2usize {
                let p = &prepared[(step * 2 + pi) % prepared.len()];
                let db = &catalog[&p.db_id];
                let completions = trainer.rollout(&p.prompt, pi as u64, 32);
                let ctx = RewardContext {
                    schema: &db.schema,
                    state: &db.canonical,
                    gold: &p.gold_ast,
                    gold_result: &p.gold_result,
                    gold_refs: &p.gold_refs,
                    question: &p.question,
                    reference_question: p.reference_question.as_deref(),
                };
                let candidates: Vec<ScoredCandidate> = {
                    let bundles: Vec<_> = completions
                        .iter()
                        .map(|c| {
                            score_candidate(
                                &ctx,
                                &c.text(),
                                None,
                                SemMode::Sql,
                                &RewardWeights::default(),
                            )
                        })
                        .collect();
                    let rewards: Vec<f64> = bundles.iter().map(|b| b.r_total).collect();
                    let advantages = group_advantages(&rewards, 1e-8);
                    completions
                        .iter()
                        .zip(bundles)
                        .zip(advantages)
                        .map(|((c, bundle), advantage)| ScoredCandidate {
                            text: c.text(),
                            tokens: c.tokens_with_eos(),
                            bundle,
                            advantage,
                        })
                        .collect()
                };
                rollouts.push(GroupRollout { prompt: p.prompt.clone(), candidates });
            }
            trainer.update(&rollouts).unwrap();
        }
        drop(trainer);
        // the trained policy moved; the reference did not
        assert_ne!(policy.params.fingerprint(), policy_before);
        assert_eq!(reference.params.fingerprint(), ref_before);
    }

    #[test]
    fn grpo_run_is_seed_deterministic() {
        let (train, catalog) = small_setup();
        let cfg = || GrpoConfig {
            steps: 2,
            batch_prompts: 2,
            group_size: 2,
            weights: RewardWeights { w_sem: 0.0, ..Default::default() },
            seed: 42,
            ..Default::default()
        };
        let run1 = run_grpo(&train, &catalog, Policy::new(small_policy_cfg(), 1), None, cfg())
            .unwrap();
        let run2 = run_grpo(&train, &catalog, Policy::new(small_policy_cfg(), 1), None, cfg())
            .unwrap();
        assert_eq!(run1.policy.params.fingerprint(), run2.policy.params.fingerprint());
        assert_eq!(
            serde_json::to_string(&run1.log).unwrap(),
            serde_json::to_string(&run2.log).unwrap()
        );
    }
}
