//! Training stack for contrastive-reward GRPO over text-to-SQL: reward
//! signals, the group-relative policy-gradient loop, execution/semantic
//! evaluation, dataset ingestion, and the bundled multilingual corpus.

pub mod config;
pub mod corpus;
pub mod dataset;
pub mod eval;
pub mod grpo;
pub mod manifest;
pub mod pipeline;
pub mod rewards;

pub use config::RunConfig;
pub use dataset::{ingest, load_catalog, Dataset, Db, DbCatalog, Example};
pub use eval::{evaluate_split, render_report, sem_equivalent, EvalConfig, EvalReport};
pub use grpo::{group_advantages, kl_divergence, GrpoConfig, GrpoTrainer, StepRecord, TrainError};
pub use manifest::{config_fingerprint, file_sha256, Manifest};
pub use pipeline::{run_grpo, run_sft, GrpoRun, PipelineError};
pub use rewards::{
    combine, exec_reward, schema_reward, score_candidate, semantic_reward, syntax_reward,
    RewardBundle, RewardContext, RewardWeights, SemMode,
};
