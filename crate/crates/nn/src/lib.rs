//! Minimal dense-tensor numerics with reverse-mode autodiff, AdamW, a
//! hashed-n-gram contrastive text encoder, and a byte-level policy
//! transformer. Everything is f64 and single-threaded per graph;
//! identical seeds give bitwise-identical trajectories.

pub mod checkpoint;
pub mod encoder;
pub mod ops;
pub mod optim;
pub mod policy;
pub mod tape;
pub mod tensor;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use encoder::{
    cosine, mine_triples, triplet_loss, Encoder, EncoderConfig, EncoderTrainConfig, MiningItem,
    PairLanguages, Triple,
};
pub use optim::{clip_grad_norm, warmup_lr, AdamW, AdamWConfig, ParamStore};
pub use policy::{
    detokenize, serialize_prompt, tokenize, Completion, Policy, PolicyConfig, SftConfig,
    TokenizerConfig, BOS, EOS, PAD, SEP, VOCAB,
};
pub use tape::{Grads, Tape, Var};
pub use tensor::Tensor;
