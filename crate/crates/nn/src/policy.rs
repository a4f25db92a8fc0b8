//! Byte-level autoregressive policy π_θ: a small decoder-only transformer
//! over 260 tokens (256 bytes + PAD/BOS/EOS/SEP).
//!
//! Two forward paths exist and agree bitwise: a taped one for training and an
//! incremental KV-cached one for sampling/evaluation (both run through the
//! shared kernels in `tensor`).

use std::path::Path;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use babelsql_rel::schema::Schema;

use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::ops;
use crate::optim::{clip_grad_norm, warmup_lr, AdamW, AdamWConfig, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::{self, Tensor};
use crate::NnError;

pub const PAD: u16 = 256;
pub const BOS: u16 = 257;
pub const EOS: u16 = 258;
pub const SEP: u16 = 259;
pub const VOCAB: usize = 260;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenizerConfig {
    pub max_prompt_len: usize,
    pub max_gen_len: usize,
}

impl Default for TokenizerConfig {
    fn default() -> Self {
        TokenizerConfig { max_prompt_len: 320, max_gen_len: 128 }
    }
}

/// UTF-8 bytes as tokens; lossless for any string.
pub fn tokenize(text: &str) -> Vec<u16> {
    text.bytes().map(|b| b as u16).collect()
}

/// Inverse of [`tokenize`] on byte tokens; special tokens are dropped and
/// invalid UTF-8 is replaced, so sampled sequences always decode.
pub fn detokenize(tokens: &[u16]) -> String {
    let bytes: Vec<u8> = tokens.iter().filter(|&&t| t < 256).map(|&t| t as u8).collect();
    String::from_utf8_lossy(&bytes).into_owned()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyConfig {
    pub n_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub max_ctx: usize,
    pub tokenizer: TokenizerConfig,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            n_layers: 2,
            d_model: 128,
            n_heads: 4,
            d_ff: 512,
            max_ctx: 512,
            tokenizer: TokenizerConfig::default(),
        }
    }
}

impl PolicyConfig {
    pub fn head_dim(&self) -> usize {
        assert_eq!(self.d_model % self.n_heads, 0, "d_model must divide by n_heads");
        self.d_model / self.n_heads
    }
}

const LN_EPS: f64 = 1e-5;

pub struct Policy {
    pub config: PolicyConfig,
    pub params: ParamStore,
    /// Optimizer steps this checkpoint has absorbed (SFT + RL).
    pub step: u64,
}

/// Serializes the conditioning prompt:
/// `<lang> SEP question SEP table1(col1,col2) ; table2(...) SEP BOS`.
pub fn serialize_prompt(
    question: &str,
    schema: &Schema,
    lang: &str,
    tokenizer: &TokenizerConfig,
) -> Result<Vec<u16>, NnError> {
    let mut toks = tokenize(lang);
    toks.push(SEP);
    toks.extend(tokenize(question));
    toks.push(SEP);
    toks.extend(tokenize(&schema_text(schema)));
    toks.push(SEP);
    toks.push(BOS);
    if toks.len() > tokenizer.max_prompt_len {
        return Err(NnError::Shape(format!(
            "prompt is {} tokens, limit {}",
            toks.len(),
            tokenizer.max_prompt_len
        )));
    }
    Ok(toks)
}

pub fn schema_text(schema: &Schema) -> String {
    schema
        .tables
        .iter()
        .map(|t| {
            let cols: Vec<&str> = t.columns.iter().map(|c| c.name.as_str()).collect();
            format!("{}({})", t.name, cols.join(","))
        })
        .collect::<Vec<_>>()
        .join(" ; ")
}

impl Policy {
    pub fn new(config: PolicyConfig, seed: u64) -> Policy {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let d = config.d_model;
        let dh = config.head_dim();
        params.add("tok_emb", Tensor::randn(&[VOCAB, d], 0.02, &mut rng));
        params.add("pos_emb", Tensor::randn(&[config.max_ctx, d], 0.02, &mut rng));
        for l in 0..config.n_layers {
            params.add(&format!("l{l}.ln1.g"), Tensor::full(&[d], 1.0));
            params.add(&format!("l{l}.ln1.b"), Tensor::zeros(&[d]));
            for h in 0..config.n_heads {
                params.add(&format!("l{l}.wq.{h}"), Tensor::randn(&[d, dh], 0.02, &mut rng));
                params.add(&format!("l{l}.wk.{h}"), Tensor::randn(&[d, dh], 0.02, &mut rng));
                params.add(&format!("l{l}.wv.{h}"), Tensor::randn(&[d, dh], 0.02, &mut rng));
            }
            params.add(&format!("l{l}.wo"), Tensor::randn(&[d, d], 0.02, &mut rng));
            params.add(&format!("l{l}.ln2.g"), Tensor::full(&[d], 1.0));
            params.add(&format!("l{l}.ln2.b"), Tensor::zeros(&[d]));
            params.add(&format!("l{l}.ffn.w1"), Tensor::randn(&[d, config.d_ff], 0.02, &mut rng));
            params.add(&format!("l{l}.ffn.b1"), Tensor::zeros(&[config.d_ff]));
            params.add(&format!("l{l}.ffn.w2"), Tensor::randn(&[config.d_ff, d], 0.02, &mut rng));
            params.add(&format!("l{l}.ffn.b2"), Tensor::zeros(&[d]));
        }
        params.add("ln_f.g", Tensor::full(&[d], 1.0));
        params.add("ln_f.b", Tensor::zeros(&[d]));
        params.add("lm_head", Tensor::randn(&[d, VOCAB], 0.02, &mut rng));
        Policy { config, params, step: 0 }
    }

    /// Deep copy (the frozen reference policy for RL).
    pub fn clone_frozen(&self) -> Policy {
        let mut params = ParamStore::new();
        for p in self.params.params() {
            params.add(&p.name, p.value.clone());
        }
        Policy { config: self.config.clone(), params, step: self.step }
    }

    // --- taped forward for training ----------------------------------------

    pub fn bind(&self, tape: &mut Tape) -> Vec<Var> {
        self.params.bind(tape)
    }

    fn var(&self, vars: &[Var], name: &str) -> Var {
        vars[self.params.index_of(name).unwrap_or_else(|| panic!("no param {name:?}"))]
    }

    /// Full-sequence forward on the tape; returns logits `[L, VOCAB]`.
    pub fn forward_taped(&self, tape: &mut Tape, vars: &[Var], tokens: &[u16]) -> Var {
        let len = tokens.len();
        assert!(len >= 1 && len <= self.config.max_ctx, "sequence length {len}");
        let dh = self.config.head_dim();
        let scale_val = 1.0 / (dh as f64).sqrt();

        let ids: Vec<usize> = tokens.iter().map(|&t| t as usize).collect();
        let pos_ids: Vec<usize> = (0..len).collect();
        let tok_emb = self.var(vars, "tok_emb");
        let pos_emb = self.var(vars, "pos_emb");
        let te = ops::embedding_lookup(tape, tok_emb, &ids);
        let pe = ops::embedding_lookup(tape, pos_emb, &pos_ids);
        let mut x = ops::add(tape, te, pe);

        // causal mask: additive -1e30 above the diagonal
        let mut mask = vec![0.0; len * len];
        for i in 0..len {
            for j in (i + 1)..len {
                mask[i * len + j] = -1e30;
            }
        }
        let mask = tape.constant(Tensor::new(vec![len, len], mask));
        let scale = tape.scalar(scale_val);

        for l in 0..self.config.n_layers {
            let g1 = self.var(vars, &format!("l{l}.ln1.g"));
            let b1 = self.var(vars, &format!("l{l}.ln1.b"));
            let a = ops::layer_norm(tape, x, g1, b1, LN_EPS);
            let mut heads = Vec::with_capacity(self.config.n_heads);
            for h in 0..self.config.n_heads {
                let wq = self.var(vars, &format!("l{l}.wq.{h}"));
                let wk = self.var(vars, &format!("l{l}.wk.{h}"));
                let wv = self.var(vars, &format!("l{l}.wv.{h}"));
                let q = ops::matmul(tape, a, wq);
                let k = ops::matmul(tape, a, wk);
                let v = ops::matmul(tape, a, wv);
                let kt = ops::transpose(tape, k);
                let scores = ops::matmul(tape, q, kt);
                let scores = ops::mul(tape, scores, scale);
                let scores = ops::add(tape, scores, mask);
                let att = ops::softmax(tape, scores);
                heads.push(ops::matmul(tape, att, v));
            }
            let cat = if heads.len() == 1 { heads[0] } else { ops::concat(tape, &heads, 1) };
            let wo = self.var(vars, &format!("l{l}.wo"));
            let o = ops::matmul(tape, cat, wo);
            x = ops::add(tape, x, o);

            let g2 = self.var(vars, &format!("l{l}.ln2.g"));
            let b2 = self.var(vars, &format!("l{l}.ln2.b"));
            let a2 = ops::layer_norm(tape, x, g2, b2, LN_EPS);
            let w1 = self.var(vars, &format!("l{l}.ffn.w1"));
            let bb1 = self.var(vars, &format!("l{l}.ffn.b1"));
            let w2 = self.var(vars, &format!("l{l}.ffn.w2"));
            let bb2 = self.var(vars, &format!("l{l}.ffn.b2"));
            let f = ops::matmul(tape, a2, w1);
            let f = ops::add(tape, f, bb1);
            let f = ops::relu(tape, f);
            let f = ops::matmul(tape, f, w2);
            let f = ops::add(tape, f, bb2);
            x = ops::add(tape, x, f);
        }

        let gf = self.var(vars, "ln_f.g");
        let bf = self.var(vars, "ln_f.b");
        let xf = ops::layer_norm(tape, x, gf, bf, LN_EPS);
        let head = self.var(vars, "lm_head");
        ops::matmul(tape, xf, head)
    }

    // --- incremental no-tape forward (sampling / evaluation) ----------------

    /// Starts a decode from `tokens` (usually the prompt). Returns the state
    /// positioned after the last token, plus that position's logits.
    pub fn prefill(&self, tokens: &[u16]) -> (DecodeState, Vec<f64>) {
        assert!(!tokens.is_empty(), "prefill needs at least one token");
        let mut state = DecodeState::new(&self.config);
        let mut logits = Vec::new();
        for &t in tokens {
            logits = self.step_token(&mut state, t);
        }
        (state, logits)
    }

    /// Feeds one token, returns logits for the next position.
    pub fn step_token(&self, state: &mut DecodeState, token: u16) -> Vec<f64> {
        let cfg = &self.config;
        let d = cfg.d_model;
        let dh = cfg.head_dim();
        let pos = state.len;
        assert!(pos < cfg.max_ctx, "context overflow at position {pos}");
        let scale = 1.0 / (dh as f64).sqrt();

        let tok_emb = self.params.get("tok_emb").data();
        let pos_emb = self.params.get("pos_emb").data();
        let mut x = vec![0.0; d];
        for i in 0..d {
            x[i] = tok_emb[token as usize * d + i] + pos_emb[pos * d + i];
        }

        let mut a = vec![0.0; d];
        let mut cat = vec![0.0; d];
        for l in 0..cfg.n_layers {
            let g1 = self.params.get(&format!("l{l}.ln1.g")).data();
            let b1 = self.params.get(&format!("l{l}.ln1.b")).data();
            tensor::layer_norm_row(&x, g1, b1, LN_EPS, &mut a);

            cat.fill(0.0);
            for h in 0..cfg.n_heads {
                let wq = self.params.get(&format!("l{l}.wq.{h}")).data();
                let wk = self.params.get(&format!("l{l}.wk.{h}")).data();
                let wv = self.params.get(&format!("l{l}.wv.{h}")).data();
                let mut q = vec![0.0; dh];
                let mut k = vec![0.0; dh];
                let mut v = vec![0.0; dh];
                tensor::mm_accum(&a, 1, d, wq, dh, &mut q);
                tensor::mm_accum(&a, 1, d, wk, dh, &mut k);
                tensor::mm_accum(&a, 1, d, wv, dh, &mut v);
                let cache = &mut state.layers[l].heads[h];
                cache.k.extend_from_slice(&k);
                cache.v.extend_from_slice(&v);
                let t = pos + 1;
                let mut scores = vec![0.0; t];
                for s in 0..t {
                    let krow = &cache.k[s * dh..(s + 1) * dh];
                    let mut acc = 0.0;
                    for (qv, kv) in q.iter().zip(krow.iter()) {
                        acc += qv * kv;
                    }
                    scores[s] = acc * scale;
                }
                tensor::softmax_row(&mut scores);
                let out = &mut cat[h * dh..(h + 1) * dh];
                for (s, &w) in scores.iter().enumerate() {
                    if w == 0.0 {
                        continue;
                    }
                    let vrow = &cache.v[s * dh..(s + 1) * dh];
                    for (o, &vv) in out.iter_mut().zip(vrow.iter()) {
                        *o += w * vv;
                    }
                }
            }
            let wo = self.params.get(&format!("l{l}.wo")).data();
            let mut o = vec![0.0; d];
            tensor::mm_accum(&cat, 1, d, wo, d, &mut o);
            for i in 0..d {
                x[i] += o[i];
            }

            let g2 = self.params.get(&format!("l{l}.ln2.g")).data();
            let b2 = self.params.get(&format!("l{l}.ln2.b")).data();
            let mut a2 = vec![0.0; d];
            tensor::layer_norm_row(&x, g2, b2, LN_EPS, &mut a2);
            let w1 = self.params.get(&format!("l{l}.ffn.w1")).data();
            let bb1 = self.params.get(&format!("l{l}.ffn.b1")).data();
            let w2 = self.params.get(&format!("l{l}.ffn.w2")).data();
            let bb2 = self.params.get(&format!("l{l}.ffn.b2")).data();
            let mut f = bb1.to_vec();
            // matches the taped path: matmul then bias add
            let mut f0 = vec![0.0; cfg.d_ff];
            tensor::mm_accum(&a2, 1, d, w1, cfg.d_ff, &mut f0);
            for i in 0..cfg.d_ff {
                f[i] = (f0[i] + bb1[i]).max(0.0);
            }
            let mut f2 = vec![0.0; d];
            tensor::mm_accum(&f, 1, cfg.d_ff, w2, d, &mut f2);
            for i in 0..d {
                x[i] += f2[i] + bb2[i];
            }
        }

        let gf = self.params.get("ln_f.g").data();
        let bf = self.params.get("ln_f.b").data();
        let mut xf = vec![0.0; d];
        tensor::layer_norm_row(&x, gf, bf, LN_EPS, &mut xf);
        let head = self.params.get("lm_head").data();
        let mut logits = vec![0.0; VOCAB];
        tensor::mm_accum(&xf, 1, d, head, VOCAB, &mut logits);

        state.len = pos + 1;
        logits
    }

    /// Full-sequence logits without a tape (all positions), via the
    /// incremental path.
    pub fn logits_notape(&self, tokens: &[u16]) -> Vec<Vec<f64>> {
        let mut state = DecodeState::new(&self.config);
        tokens.iter().map(|&t| self.step_token(&mut state, t)).collect()
    }

    /// Per-token log-probabilities of `completion` given `prompt`, plus the
    /// full log-distribution at each completion position.
    pub fn log_probs(&self, prompt: &[u16], completion: &[u16]) -> (Vec<f64>, Vec<Vec<f64>>) {
        assert!(!prompt.is_empty() && !completion.is_empty());
        let mut tokens = prompt.to_vec();
        tokens.extend_from_slice(completion);
        let all = self.logits_notape(&tokens);
        let mut chosen = Vec::with_capacity(completion.len());
        let mut dists = Vec::with_capacity(completion.len());
        for (i, &target) in completion.iter().enumerate() {
            let mut row = all[prompt.len() - 1 + i].clone();
            tensor::log_softmax_row(&mut row);
            chosen.push(row[target as usize]);
            dists.push(row);
        }
        (chosen, dists)
    }

    /// Greedy decode (temperature-0 evaluation path): argmax until EOS or the
    /// generation limit. Returns completion tokens without the EOS.
    pub fn greedy_decode(&self, prompt: &[u16], max_gen: usize) -> Vec<u16> {
        let (mut state, mut logits) = self.prefill(prompt);
        let mut out = Vec::new();
        for _ in 0..max_gen {
            let tok = argmax(&logits) as u16;
            if tok == EOS {
                break;
            }
            out.push(tok);
            if state.len >= self.config.max_ctx {
                break;
            }
            logits = self.step_token(&mut state, tok);
        }
        out
    }

    /// Ancestral sampling of a group of completions. Deterministic under
    /// `seed`; each member gets an independent substream. Stored logprobs are
    /// the model's (temperature-1) values for the chosen tokens.
    pub fn sample_group(
        &self,
        prompt: &[u16],
        group_size: usize,
        temperature: f64,
        seed: u64,
        max_gen: usize,
    ) -> Vec<Completion> {
        assert!(temperature > 0.0, "temperature must be positive");
        let (base_state, base_logits) = self.prefill(prompt);
        (0..group_size)
            .map(|g| {
                let mut rng = ChaCha8Rng::seed_from_u64(
                    seed.wrapping_mul(0x9E3779B97F4A7C15).wrapping_add(g as u64),
                );
                let mut state = base_state.clone();
                let mut logits = base_logits.clone();
                let mut tokens = Vec::new();
                let mut logprobs = Vec::new();
                let mut ended_with_eos = false;
                for _ in 0..max_gen {
                    let tok = sample_from_logits(&logits, temperature, &mut rng);
                    let mut lp = logits.clone();
                    tensor::log_softmax_row(&mut lp);
                    logprobs.push(lp[tok as usize]);
                    if tok == EOS {
                        ended_with_eos = true;
                        break;
                    }
                    tokens.push(tok);
                    if state.len >= self.config.max_ctx {
                        break;
                    }
                    logits = self.step_token(&mut state, tok);
                }
                Completion { tokens, logprobs, ended_with_eos }
            })
            .collect()
    }

    // --- checkpointing -------------------------------------------------------

    pub fn save(&self, path: &Path, extra_meta: serde_json::Value) -> Result<(), NnError> {
        let meta = serde_json::json!({
            "kind": "policy",
            "config": self.config,
            "step": self.step,
            "extra": extra_meta,
        });
        let tensors: Vec<(&str, &Tensor)> = self
            .params
            .params()
            .iter()
            .map(|p| (p.name.as_str(), &p.value))
            .collect();
        save_checkpoint(path, &meta, &tensors)
    }

    pub fn load(path: &Path) -> Result<(Policy, serde_json::Value), NnError> {
        let (meta, tensors) = load_checkpoint(path)?;
        if meta.get("kind").and_then(|k| k.as_str()) != Some("policy") {
            return Err(NnError::Format(format!("{} is not a policy checkpoint", path.display())));
        }
        let config: PolicyConfig =
            serde_json::from_value(meta.get("config").cloned().unwrap_or_default())
                .map_err(|e| NnError::Format(e.to_string()))?;
        let step = meta.get("step").and_then(|s| s.as_u64()).unwrap_or(0);
        let mut params = ParamStore::new();
        for (name, t) in tensors {
            params.add(&name, t);
        }
        let policy = Policy { config, params, step };
        policy.check_shapes()?;
        let extra = meta.get("extra").cloned().unwrap_or(serde_json::Value::Null);
        Ok((policy, extra))
    }

    fn check_shapes(&self) -> Result<(), NnError> {
        let d = self.config.d_model;
        let expect = |name: &str, shape: &[usize]| -> Result<(), NnError> {
            let idx = self
                .params
                .index_of(name)
                .ok_or_else(|| NnError::Format(format!("checkpoint missing tensor {name:?}")))?;
            let got = self.params.params()[idx].value.shape();
            if got != shape {
                return Err(NnError::Format(format!(
                    "tensor {name:?} has shape {got:?}, config expects {shape:?}"
                )));
            }
            Ok(())
        };
        expect("tok_emb", &[VOCAB, d])?;
        expect("pos_emb", &[self.config.max_ctx, d])?;
        expect("lm_head", &[d, VOCAB])?;
        for l in 0..self.config.n_layers {
            expect(&format!("l{l}.wo"), &[d, d])?;
            expect(&format!("l{l}.ffn.w1"), &[d, self.config.d_ff])?;
            for h in 0..self.config.n_heads {
                expect(&format!("l{l}.wq.{h}"), &[d, self.config.head_dim()])?;
            }
        }
        Ok(())
    }
}

/// Per-layer, per-head key/value cache for incremental decoding.
#[derive(Clone)]
pub struct DecodeState {
    layers: Vec<LayerCache>,
    pub len: usize,
}

#[derive(Clone)]
struct LayerCache {
    heads: Vec<HeadCache>,
}

#[derive(Clone, Default)]
struct HeadCache {
    k: Vec<f64>,
    v: Vec<f64>,
}

impl DecodeState {
    fn new(cfg: &PolicyConfig) -> DecodeState {
        DecodeState {
            layers: (0..cfg.n_layers)
                .map(|_| LayerCache {
                    heads: (0..cfg.n_heads).map(|_| HeadCache::default()).collect(),
                })
                .collect(),
            len: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Completion {
    /// Generated tokens, EOS excluded.
    pub tokens: Vec<u16>,
    /// Model log-probability of each sampled token (EOS included when drawn).
    pub logprobs: Vec<f64>,
    pub ended_with_eos: bool,
}

impl Completion {
    pub fn text(&self) -> String {
        detokenize(&self.tokens)
    }

    /// Tokens as trained against: the sampled sequence plus closing EOS.
    pub fn tokens_with_eos(&self) -> Vec<u16> {
        let mut t = self.tokens.clone();
        if self.ended_with_eos {
            t.push(EOS);
        }
        t
    }
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in xs.iter().enumerate() {
        if v > xs[best] {
            best = i;
        }
    }
    best
}

/// Draws from softmax(logits / temperature) by inverse CDF.
pub fn sample_from_logits(logits: &[f64], temperature: f64, rng: &mut ChaCha8Rng) -> u16 {
    let mut probs: Vec<f64> = logits.iter().map(|&l| l / temperature).collect();
    tensor::softmax_row(&mut probs);
    let u: f64 = rng.gen::<f64>();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i as u16;
        }
    }
    (probs.len() - 1) as u16
}

// ---------------------------------------------------------------------------
// supervised warm-start
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SftConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub warmup_steps: u64,
    pub clip_norm: f64,
    pub eval_fraction: f64,
    pub eval_every: usize,
    pub seed: u64,
}

impl Default for SftConfig {
    fn default() -> Self {
        SftConfig {
            steps: 600,
            batch_size: 16,
            lr: 1e-3,
            weight_decay: 0.01,
            warmup_steps: 50,
            clip_norm: 1.0,
            eval_fraction: 0.1,
            eval_every: 50,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SftLogEntry {
    pub step: usize,
    pub train_loss: f64,
    pub eval_loss: Option<f64>,
    pub lr: f64,
}

/// One training pair: prompt tokens (ending in BOS) and completion tokens
/// (ending in EOS).
pub type SftPair = (Vec<u16>, Vec<u16>);

impl Policy {
    /// Cross-entropy on completion tokens only. Returns the training log;
    /// errors out if the loss stops being finite.
    pub fn sft_train(&mut self, pairs: &[SftPair], cfg: &SftConfig) -> Result<Vec<SftLogEntry>, NnError> {
        if pairs.is_empty() {
            return Err(NnError::Data("sft_train needs at least one pair".into()));
        }
        for (p, c) in pairs {
            assert!(!p.is_empty() && !c.is_empty(), "empty prompt or completion");
            assert!(
                p.len() + c.len() <= self.config.max_ctx,
                "pair of {} tokens exceeds context {}",
                p.len() + c.len(),
                self.config.max_ctx
            );
        }

        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5F7);
        let mut order: Vec<usize> = (0..pairs.len()).collect();
        order.shuffle(&mut rng);
        let eval_n = ((pairs.len() as f64 * cfg.eval_fraction) as usize).min(pairs.len() / 2);
        let (train_idx, eval_idx) = order.split_at(pairs.len() - eval_n);
        let train_idx = train_idx.to_vec();
        let eval_idx = eval_idx.to_vec();

        let mut opt = AdamW::new(
            &self.params,
            AdamWConfig { weight_decay: cfg.weight_decay, ..Default::default() },
        );
        let mut log = Vec::new();
        let mut cursor = 0usize;
        let mut epoch_order = train_idx.clone();

        for step in 1..=cfg.steps {
            // next batch, reshuffling at epoch boundaries
            let mut batch = Vec::with_capacity(cfg.batch_size);
            for _ in 0..cfg.batch_size {
                if cursor == epoch_order.len() {
                    epoch_order.shuffle(&mut rng);
                    cursor = 0;
                }
                batch.push(epoch_order[cursor]);
                cursor += 1;
            }

            let mut tape = Tape::new();
            let vars = self.bind(&mut tape);
            let inv_b = tape.scalar(1.0 / batch.len() as f64);
            let mut total: Option<Var> = None;
            for &pi in &batch {
                let (prompt, completion) = &pairs[pi];
                let loss = self.sequence_ce(&mut tape, &vars, prompt, completion);
                total = Some(match total {
                    None => loss,
                    Some(acc) => ops::add(&mut tape, acc, loss),
                });
            }
            let loss = ops::mul(&mut tape, total.expect("non-empty batch"), inv_b);
            let loss_val = tape.value(loss).item();
            if !loss_val.is_finite() {
                return Err(NnError::NonFinite(format!("SFT loss diverged at step {step}")));
            }
            let grads = tape.backward(loss);
            self.params.accumulate(&grads, &vars);
            clip_grad_norm(&mut self.params, cfg.clip_norm);
            let lr = warmup_lr(step as u64, cfg.lr, cfg.warmup_steps);
            opt.step(&mut self.params, lr)?;
            self.step += 1;

            let eval_loss = if (step % cfg.eval_every == 0 || step == cfg.steps || step == 1)
                && !eval_idx.is_empty()
            {
                Some(self.mean_ce(pairs, &eval_idx))
            } else {
                None
            };
            log.push(SftLogEntry { step, train_loss: loss_val, eval_loss, lr });
        }
        Ok(log)
    }

    /// Taped per-sequence mean CE over completion positions.
    fn sequence_ce(&self, tape: &mut Tape, vars: &[Var], prompt: &[u16], completion: &[u16]) -> Var {
        let mut tokens = prompt.to_vec();
        tokens.extend_from_slice(completion);
        let logits = self.forward_taped(tape, vars, &tokens);
        // position i predicts tokens[i+1]; completion starts at prompt.len()
        let rows = ops::slice_rows(tape, logits, prompt.len() - 1, completion.len());
        let targets: Vec<i64> = completion.iter().map(|&t| t as i64).collect();
        ops::cross_entropy(tape, rows, &targets)
    }

    /// Eval-mode mean CE over a set of pairs (no tape).
    pub fn mean_ce(&self, pairs: &[SftPair], idx: &[usize]) -> f64 {
        let mut total = 0.0;
        let mut count = 0usize;
        for &i in idx {
            let (prompt, completion) = &pairs[i];
            let (lps, _) = self.log_probs(prompt, completion);
            total -= lps.iter().sum::<f64>();
            count += lps.len();
        }
        total / count.max(1) as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tiny() -> Policy {
        Policy::new(
            PolicyConfig {
                n_layers: 2,
                d_model: 16,
                n_heads: 2,
                d_ff: 32,
                max_ctx: 64,
                tokenizer: TokenizerConfig { max_prompt_len: 48, max_gen_len: 16 },
            },
            11,
        )
    }

    #[test]
    fn tokenize_round_trip_utf8() {
        for s in ["hello", "数据库", "Hiển thị tên", "emoji 🙂 test"] {
            assert_eq!(detokenize(&tokenize(s)), s);
        }
    }

    proptest! {
        #[test]
        fn tokenizer_round_trips_any_string(s in ".*") {
            prop_assert_eq!(detokenize(&tokenize(&s)), s);
        }
    }

    #[test]
    fn taped_and_notape_forwards_agree() {
        let p = tiny();
        let tokens: Vec<u16> = vec![BOS, 104, 105, SEP, 120, 49];
        let mut tape = Tape::new();
        let vars = p.bind(&mut tape);
        let taped = p.forward_taped(&mut tape, &vars, &tokens);
        let taped_rows = tape.value(taped).data().to_vec();
        let fast = p.logits_notape(&tokens);
        for (i, row) in fast.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                let tv = taped_rows[i * VOCAB + j];
                assert!(
                    (tv - v).abs() <= 1e-12 * tv.abs().max(1.0),
                    "row {i} col {j}: taped {tv} vs fast {v}"
                );
            }
        }
    }

    #[test]
    fn distributions_normalize() {
        let p = tiny();
        let prompt = vec![BOS, 104];
        let completion = vec![105, 106, EOS];
        let (_, dists) = p.log_probs(&prompt, &completion);
        for row in &dists {
            let sum: f64 = row.iter().map(|lp| lp.exp()).sum();
            assert!((sum - 1.0).abs() < 1e-9, "sum = {sum}");
        }
    }

    #[test]
    fn forced_single_token_logprob() {
        let p = tiny();
        let prompt = vec![BOS, 104];
        let (lps, dists) = p.log_probs(&prompt, &[105]);
        assert_eq!(lps.len(), 1);
        assert_eq!(lps[0], dists[0][105]);
    }

    #[test]
    fn sampling_is_seed_deterministic() {
        let p = tiny();
        let prompt = vec![BOS, 104, 105];
        let a = p.sample_group(&prompt, 4, 1.0, 99, 8);
        let b = p.sample_group(&prompt, 4, 1.0, 99, 8);
        for (x, y) in a.iter().zip(b.iter()) {
            assert_eq!(x.tokens, y.tokens);
            assert_eq!(x.logprobs, y.logprobs);
        }
    }

    #[test]
    fn zero_temperature_limit_is_greedy() {
        let p = tiny();
        let prompt = vec![BOS, 104, 105];
        let greedy = p.greedy_decode(&prompt, 8);
        let sampled = p.sample_group(&prompt, 3, 1e-9, 4, 8);
        for c in &sampled {
            assert_eq!(c.tokens, greedy);
        }
    }

    #[test]
    fn completions_respect_max_gen() {
        let p = tiny();
        let prompt = vec![BOS];
        for c in p.sample_group(&prompt, 8, 1.5, 1, 10) {
            assert!(c.tokens.len() <= 10);
        }
    }

    #[test]
    fn empirical_frequencies_match_softmax() {
        use rand::SeedableRng;
        let p = tiny();
        let prompt = vec![BOS, 104, 105];
        let (_, logits) = p.prefill(&prompt);
        let mut probs = logits.clone();
        tensor::softmax_row(&mut probs);
        let n = 100_000usize;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut counts = vec![0usize; VOCAB];
        for _ in 0..n {
            counts[sample_from_logits(&logits, 1.0, &mut rng) as usize] += 1;
        }
        // 3-sigma binomial bound on every token with non-trivial mass
        for (i, &p_i) in probs.iter().enumerate() {
            if p_i < 1e-4 {
                continue;
            }
            let sigma = (p_i * (1.0 - p_i) / n as f64).sqrt();
            let freq = counts[i] as f64 / n as f64;
            assert!(
                (freq - p_i).abs() <= 3.0 * sigma + 1e-9,
                "token {i}: freq {freq} vs p {p_i} (sigma {sigma})"
            );
        }
    }

    #[test]
    fn serialize_prompt_layout() {
        let schema = babelsql_rel::fixtures::movies_schema();
        let toks =
            serialize_prompt("show actors", &schema, "en", &TokenizerConfig::default()).unwrap();
        assert_eq!(toks[0], b'e' as u16);
        assert_eq!(toks[1], b'n' as u16);
        assert_eq!(toks[2], SEP);
        assert_eq!(*toks.last().unwrap(), BOS);
        assert_eq!(toks.iter().filter(|&&t| t == SEP).count(), 3);
        let text = detokenize(&toks);
        assert!(text.contains("actor(id,name) ; casting(actorid,movieid)"));
    }

    #[test]
    fn serialize_prompt_rejects_overflow() {
        let schema = babelsql_rel::fixtures::movies_schema();
        let long = "x".repeat(1000);
        let err = serialize_prompt(&long, &schema, "en", &TokenizerConfig::default());
        assert!(err.is_err());
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.bsqc");
        let p = tiny();
        let prompt = vec![BOS, 104];
        let before = p.greedy_decode(&prompt, 8);
        p.save(&path, serde_json::json!({"phase": "test"})).unwrap();
        let (loaded, extra) = Policy::load(&path).unwrap();
        assert_eq!(extra["phase"], "test");
        assert_eq!(loaded.greedy_decode(&prompt, 8), before);
    }

    #[test]
    fn sft_memorizes_tiny_corpus() {
        let mut p = tiny();
        // 4 pairs, single-token answers
        let pairs: Vec<SftPair> = vec![
            (vec![b'a' as u16, BOS], vec![b'1' as u16, EOS]),
            (vec![b'b' as u16, BOS], vec![b'2' as u16, EOS]),
            (vec![b'c' as u16, BOS], vec![b'3' as u16, EOS]),
            (vec![b'd' as u16, BOS], vec![b'4' as u16, EOS]),
        ];
        let cfg = SftConfig {
            steps: 120,
            batch_size: 4,
            lr: 3e-3,
            warmup_steps: 10,
            eval_fraction: 0.0,
            ..Default::default()
        };
        let log = p.sft_train(&pairs, &cfg).unwrap();
        assert!(log.last().unwrap().train_loss < log.first().unwrap().train_loss);
        for (prompt, completion) in &pairs {
            let got = p.greedy_decode(prompt, 4);
            assert_eq!(got, completion[..completion.len() - 1].to_vec());
        }
    }
}
