//! Contrastive text encoder: hashed character n-gram bag, mean pooling, and
//! a 2-layer projection head producing 256-dimensional unit embeddings.
//! Trained with triplet margin loss over cross-lingually mined triples.

use std::collections::HashMap;
use std::path::Path;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::ops;
use crate::optim::{warmup_lr, AdamW, AdamWConfig, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use crate::NnError;

pub const EMBED_DIM: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub ngram_sizes: Vec<usize>,
    pub buckets: usize,
    pub d_enc: usize,
    pub d_proj: usize,
    pub dropout: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            ngram_sizes: vec![2, 3, 4],
            buckets: 1 << 15,
            d_enc: 128,
            d_proj: EMBED_DIM,
            dropout: 0.1,
        }
    }
}

pub struct Encoder {
    pub config: EncoderConfig,
    pub params: ParamStore,
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = 0xcbf29ce484222325u64;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

impl Encoder {
    pub fn new(config: EncoderConfig, seed: u64) -> Encoder {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        params.add("ngram.table", Tensor::randn(&[config.buckets, config.d_enc], 0.02, &mut rng));
        params.add("proj1.w", Tensor::randn(&[config.d_enc, config.d_proj], 0.02, &mut rng));
        params.add("proj1.b", Tensor::zeros(&[config.d_proj]));
        params.add("proj2.w", Tensor::randn(&[config.d_proj, config.d_proj], 0.02, &mut rng));
        params.add("proj2.b", Tensor::zeros(&[config.d_proj]));
        Encoder { config, params }
    }

    /// Hashed n-gram bucket ids for a text. The text is lowercased, its
    /// whitespace collapsed, and wrapped in sentinel characters so that even
    /// single-character inputs produce features.
    pub fn featurize(&self, text: &str) -> Result<Vec<usize>, NnError> {
        let trimmed = text.trim();
        if trimmed.is_empty() {
            return Err(NnError::EmptyInput("cannot embed an empty string".into()));
        }
        let mut normalized = String::with_capacity(trimmed.len() + 2);
        normalized.push('\u{2}');
        let mut last_space = false;
        for ch in trimmed.chars() {
            if ch.is_whitespace() {
                if !last_space {
                    normalized.push(' ');
                }
                last_space = true;
            } else {
                for lc in ch.to_lowercase() {
                    normalized.push(lc);
                }
                last_space = false;
            }
        }
        normalized.push('\u{3}');

        let chars: Vec<char> = normalized.chars().collect();
        let mut ids = Vec::new();
        let mut buf = String::new();
        for &n in &self.config.ngram_sizes {
            if chars.len() < n {
                continue;
            }
            for w in chars.windows(n) {
                buf.clear();
                buf.extend(w.iter());
                ids.push((fnv1a64(buf.as_bytes()) % self.config.buckets as u64) as usize);
            }
        }
        if ids.is_empty() {
            return Err(NnError::EmptyInput("text produced no n-gram features".into()));
        }
        Ok(ids)
    }

    /// Unit embedding in eval mode (deterministic, no dropout).
    pub fn embed(&self, text: &str) -> Result<Vec<f64>, NnError> {
        let ids = self.featurize(text)?;
        let cfg = &self.config;
        let table = self.params.get("ngram.table").data();
        let mut pooled = vec![0.0; cfg.d_enc];
        for &id in &ids {
            let row = &table[id * cfg.d_enc..(id + 1) * cfg.d_enc];
            for (p, &v) in pooled.iter_mut().zip(row.iter()) {
                *p += v;
            }
        }
        let inv = 1.0 / ids.len() as f64;
        for p in pooled.iter_mut() {
            *p *= inv;
        }

        let w1 = self.params.get("proj1.w").data();
        let b1 = self.params.get("proj1.b").data();
        let mut h = b1.to_vec();
        for (k, &x) in pooled.iter().enumerate() {
            if x == 0.0 {
                continue;
            }
            let row = &w1[k * cfg.d_proj..(k + 1) * cfg.d_proj];
            for (o, &w) in h.iter_mut().zip(row.iter()) {
                *o += x * w;
            }
        }
        for v in h.iter_mut() {
            *v = v.max(0.0);
        }

        let w2 = self.params.get("proj2.w").data();
        let b2 = self.params.get("proj2.b").data();
        let mut z = b2.to_vec();
        for (k, &x) in h.iter().enumerate() {
            if x == 0.0 {
                continue;
            }
            let row = &w2[k * cfg.d_proj..(k + 1) * cfg.d_proj];
            for (o, &w) in z.iter_mut().zip(row.iter()) {
                *o += x * w;
            }
        }

        let norm = z.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        for v in z.iter_mut() {
            *v /= norm;
        }
        Ok(z)
    }

    /// Taped embedding for training. `vars` must come from `params.bind`.
    fn embed_taped(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        ids: &[usize],
        dropout_seed: u64,
        train: bool,
    ) -> Var {
        let table = vars[self.params.index_of("ngram.table").unwrap()];
        let w1 = vars[self.params.index_of("proj1.w").unwrap()];
        let b1 = vars[self.params.index_of("proj1.b").unwrap()];
        let w2 = vars[self.params.index_of("proj2.w").unwrap()];
        let b2 = vars[self.params.index_of("proj2.b").unwrap()];

        let rows = ops::embedding_lookup(tape, table, ids);
        let pooled = ops::mean(tape, rows, Some(0));
        let h = ops::matmul(tape, pooled, w1);
        let h = ops::add(tape, h, b1);
        let h = ops::relu(tape, h);
        let h = ops::dropout(tape, h, self.config.dropout, train, dropout_seed);
        let z = ops::matmul(tape, h, w2);
        let z = ops::add(tape, z, b2);
        ops::l2_normalize(tape, z)
    }

    pub fn save(&self, path: &Path, extra_meta: serde_json::Value) -> Result<(), NnError> {
        let meta = serde_json::json!({
            "kind": "encoder",
            "config": self.config,
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

    pub fn load(path: &Path) -> Result<Encoder, NnError> {
        let (meta, tensors) = load_checkpoint(path)?;
        if meta.get("kind").and_then(|k| k.as_str()) != Some("encoder") {
            return Err(NnError::Format(format!("{} is not an encoder checkpoint", path.display())));
        }
        let config: EncoderConfig = serde_json::from_value(
            meta.get("config").cloned().unwrap_or_default(),
        )
        .map_err(|e| NnError::Format(e.to_string()))?;
        let mut params = ParamStore::new();
        for (name, t) in tensors {
            params.add(&name, t);
        }
        for required in ["ngram.table", "proj1.w", "proj1.b", "proj2.w", "proj2.b"] {
            if params.index_of(required).is_none() {
                return Err(NnError::Format(format!("checkpoint missing tensor {required:?}")));
            }
        }
        Ok(Encoder { config, params })
    }
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b.iter()) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    dot / (na.sqrt() * nb.sqrt()).max(1e-12)
}

/// Triplet margin loss over unit embeddings with cosine distance
/// d(x, y) = 1 - cos(x, y):  max(0, d(a,p) - d(a,n) + margin).
pub fn triplet_loss(anchor: &[f64], positive: &[f64], negative: &[f64], margin: f64) -> f64 {
    let d_ap = 1.0 - cosine(anchor, positive);
    let d_an = 1.0 - cosine(anchor, negative);
    (d_ap - d_an + margin).max(0.0)
}

// ---------------------------------------------------------------------------
// triple mining
// ---------------------------------------------------------------------------

/// One dataset row as seen by the miner. `sql` must be the canonical rendered
/// form so that equality means SQL identity.
#[derive(Debug, Clone)]
pub struct MiningItem {
    pub id: String,
    pub lang: String,
    pub question: String,
    pub sql: String,
    pub db_id: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Triple {
    pub anchor: String,
    pub positive: String,
    pub negative: String,
    pub anchor_sql: String,
    pub negative_sql: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairLanguages {
    /// Every cross-language translation pair is a positive.
    All,
    /// Only pairs where one side is English.
    EnPivot,
}

fn trigram_set(s: &str) -> std::collections::HashSet<String> {
    let chars: Vec<char> = s.to_lowercase().chars().collect();
    let mut out = std::collections::HashSet::new();
    if chars.len() < 3 {
        out.insert(chars.iter().collect::<String>());
        return out;
    }
    for w in chars.windows(3) {
        out.insert(w.iter().collect());
    }
    out
}

/// Character-trigram overlap (intersection size) between two strings.
pub fn trigram_overlap(a: &str, b: &str) -> usize {
    let ta = trigram_set(a);
    let tb = trigram_set(b);
    ta.intersection(&tb).count()
}

/// Mines (anchor, positive, negative) triples: positives are translations of
/// the same question (same id, same SQL, different language); negatives hold
/// a different SQL — with probability `hard_fraction` the same-schema
/// question with the highest character-trigram overlap with the anchor,
/// otherwise a uniformly random different-SQL question.
pub fn mine_triples(
    items: &[MiningItem],
    seed: u64,
    hard_fraction: f64,
    pair_languages: PairLanguages,
) -> Result<Vec<Triple>, NnError> {
    let distinct_sqls: std::collections::HashSet<&str> =
        items.iter().map(|i| i.sql.as_str()).collect();
    if distinct_sqls.len() < 2 {
        return Err(NnError::Data(
            "triple mining needs at least two distinct gold SQLs".into(),
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut triples = Vec::new();

    // trigram sets hashed to u64 once per item; the public trigram_overlap
    // stays string-based for oracle use
    let tri_sets: Vec<std::collections::HashSet<u64>> = items
        .iter()
        .map(|i| {
            trigram_set(&i.question)
                .into_iter()
                .map(|t| fnv1a64(t.as_bytes()))
                .collect()
        })
        .collect();

    for (ai, anchor) in items.iter().enumerate() {
        // different-SQL candidate pools, in deterministic dataset order
        let same_schema: Vec<usize> = (0..items.len())
            .filter(|&i| items[i].db_id == anchor.db_id && items[i].sql != anchor.sql)
            .collect();
        let any_schema: Vec<usize> =
            (0..items.len()).filter(|&i| items[i].sql != anchor.sql).collect();
        if any_schema.is_empty() {
            continue;
        }

        // hardest negative for this anchor: highest trigram overlap, ties to
        // the earliest dataset index; computed lazily
        let mut hardest: Option<usize> = None;
        let mut find_hardest = || -> Option<usize> {
            if hardest.is_none() && !same_schema.is_empty() {
                let mut best = same_schema[0];
                let mut best_overlap = tri_sets[ai].intersection(&tri_sets[best]).count();
                for &i in &same_schema[1..] {
                    let ov = tri_sets[ai].intersection(&tri_sets[i]).count();
                    if ov > best_overlap {
                        best = i;
                        best_overlap = ov;
                    }
                }
                hardest = Some(best);
            }
            hardest
        };

        for (pi, positive) in items.iter().enumerate() {
            if pi == ai || positive.id != anchor.id || positive.lang == anchor.lang {
                continue;
            }
            if positive.sql != anchor.sql {
                continue;
            }
            if pair_languages == PairLanguages::EnPivot
                && anchor.lang != "en"
                && positive.lang != "en"
            {
                continue;
            }

            let hard = rng.gen_bool(hard_fraction.clamp(0.0, 1.0));
            let neg_idx = match (hard, find_hardest()) {
                (true, Some(h)) => h,
                _ => any_schema[rng.gen_range(0..any_schema.len())],
            };
            let negative = &items[neg_idx];
            triples.push(Triple {
                anchor: anchor.question.clone(),
                positive: positive.question.clone(),
                negative: negative.question.clone(),
                anchor_sql: anchor.sql.clone(),
                negative_sql: negative.sql.clone(),
            });
        }
    }

    if triples.is_empty() {
        return Err(NnError::Data(
            "no positive pairs found: need parallel questions sharing a gold SQL".into(),
        ));
    }
    Ok(triples)
}

// ---------------------------------------------------------------------------
// training
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EncoderTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub warmup_steps: u64,
    pub margin: f64,
    pub holdout_fraction: f64,
    pub seed: u64,
}

impl Default for EncoderTrainConfig {
    fn default() -> Self {
        EncoderTrainConfig {
            epochs: 2,
            batch_size: 96,
            lr: 1e-3,
            weight_decay: 0.01,
            warmup_steps: 20,
            margin: 0.5,
            holdout_fraction: 0.1,
            seed: 0,
        }
    }
}

/// The paper-reported training hyperparameters for the full-scale encoder
/// (12-layer pretrained backbone); kept selectable for completeness.
pub fn paper_encoder_train_config() -> EncoderTrainConfig {
    EncoderTrainConfig { lr: 2e-5, warmup_steps: 500, ..Default::default() }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EncoderEpochLog {
    pub epoch: usize,
    pub mean_train_loss: f64,
    pub holdout_margin_satisfaction: f64,
    pub holdout_mean_positive_cos: f64,
    pub holdout_mean_negative_cos: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EncoderMetrics {
    pub initial_mean_loss: f64,
    pub epochs: Vec<EncoderEpochLog>,
    pub train_triples: usize,
    pub holdout_triples: usize,
}

/// Margin-satisfaction and cosine statistics of `enc` on a set of triples.
pub fn evaluate_triples(
    enc: &Encoder,
    triples: &[Triple],
    margin: f64,
) -> Result<(f64, f64, f64), NnError> {
    let mut cache: HashMap<&str, Vec<f64>> = HashMap::new();
    let mut satisfied = 0usize;
    let mut pos_cos = 0.0;
    let mut neg_cos = 0.0;
    for t in triples {
        for s in [t.anchor.as_str(), t.positive.as_str(), t.negative.as_str()] {
            if !cache.contains_key(s) {
                cache.insert(s, enc.embed(s)?);
            }
        }
        let a = &cache[t.anchor.as_str()];
        let p = &cache[t.positive.as_str()];
        let n = &cache[t.negative.as_str()];
        let cp = cosine(a, p);
        let cn = cosine(a, n);
        pos_cos += cp;
        neg_cos += cn;
        // d(a,n) - d(a,p) >= margin  <=>  cos(a,p) - cos(a,n) >= margin
        if cp - cn >= margin {
            satisfied += 1;
        }
    }
    let n = triples.len().max(1) as f64;
    Ok((satisfied as f64 / n, pos_cos / n, neg_cos / n))
}

impl Encoder {
    /// Triplet-loss training. Splits off a holdout set, logs per-epoch mean
    /// loss and holdout statistics, and errors out on divergence.
    pub fn train(
        &mut self,
        triples: &[Triple],
        cfg: &EncoderTrainConfig,
    ) -> Result<EncoderMetrics, NnError> {
        if triples.is_empty() {
            return Err(NnError::Data("no triples to train on".into()));
        }
        let mut order: Vec<usize> = (0..triples.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xE17C0DE);
        order.shuffle(&mut rng);
        let holdout_n = ((triples.len() as f64 * cfg.holdout_fraction) as usize)
            .min(triples.len().saturating_sub(1));
        let (train_idx, holdout_idx) = order.split_at(triples.len() - holdout_n);
        let holdout: Vec<Triple> = holdout_idx.iter().map(|&i| triples[i].clone()).collect();

        // feature ids per distinct string
        let mut feat: HashMap<&str, Vec<usize>> = HashMap::new();
        for t in triples {
            for s in [t.anchor.as_str(), t.positive.as_str(), t.negative.as_str()] {
                if !feat.contains_key(s) {
                    feat.insert(s, self.featurize(s)?);
                }
            }
        }

        let mut opt = AdamW::new(
            &self.params,
            AdamWConfig { weight_decay: cfg.weight_decay, ..Default::default() },
        );
        let mut metrics = EncoderMetrics {
            initial_mean_loss: 0.0,
            epochs: Vec::new(),
            train_triples: train_idx.len(),
            holdout_triples: holdout.len(),
        };

        // initial loss over the first batch-worth of triples, eval mode
        {
            let probe = &train_idx[..train_idx.len().min(cfg.batch_size)];
            let mut total = 0.0;
            for &ti in probe {
                let t = &triples[ti];
                let a = self.embed(&t.anchor)?;
                let p = self.embed(&t.positive)?;
                let n = self.embed(&t.negative)?;
                total += triplet_loss(&a, &p, &n, cfg.margin);
            }
            metrics.initial_mean_loss = total / probe.len().max(1) as f64;
        }

        let mut step: u64 = 0;
        let mut shuffled: Vec<usize> = train_idx.to_vec();
        for epoch in 0..cfg.epochs {
            shuffled.shuffle(&mut rng);
            let mut epoch_loss = 0.0;
            let mut batches = 0usize;
            for chunk in shuffled.chunks(cfg.batch_size) {
                step += 1;
                let mut tape = Tape::new();
                let vars = self.params.bind(&mut tape);
                let inv_b = tape.scalar(1.0 / chunk.len() as f64);
                let margin = tape.scalar(cfg.margin);
                let one = tape.scalar(1.0);
                let mut total: Option<Var> = None;
                for (k, &ti) in chunk.iter().enumerate() {
                    let t = &triples[ti];
                    let ds = cfg.seed
                        .wrapping_mul(0x9E3779B97F4A7C15)
                        .wrapping_add(step * 1_000_003 + k as u64);
                    let a = self.embed_taped(&mut tape, &vars, &feat[t.anchor.as_str()], ds, true);
                    let p = self.embed_taped(
                        &mut tape,
                        &vars,
                        &feat[t.positive.as_str()],
                        ds.wrapping_add(1),
                        true,
                    );
                    let n = self.embed_taped(
                        &mut tape,
                        &vars,
                        &feat[t.negative.as_str()],
                        ds.wrapping_add(2),
                        true,
                    );
                    let cos_ap = ops::cosine_similarity(&mut tape, a, p);
                    let cos_an = ops::cosine_similarity(&mut tape, a, n);
                    let d_ap = ops::sub(&mut tape, one, cos_ap);
                    let d_an = ops::sub(&mut tape, one, cos_an);
                    let gap = ops::sub(&mut tape, d_ap, d_an);
                    let shifted = ops::add(&mut tape, gap, margin);
                    let loss = ops::relu(&mut tape, shifted);
                    total = Some(match total {
                        None => loss,
                        Some(acc) => ops::add(&mut tape, acc, loss),
                    });
                }
                let total = total.expect("non-empty batch");
                let batch_loss = ops::mul(&mut tape, total, inv_b);
                let loss_val = tape.value(batch_loss).item();
                if !loss_val.is_finite() {
                    return Err(NnError::NonFinite(format!(
                        "triplet loss diverged at step {step} (epoch {epoch})"
                    )));
                }
                epoch_loss += loss_val;
                batches += 1;
                let grads = tape.backward(batch_loss);
                self.params.accumulate(&grads, &vars);
                opt.step(&mut self.params, warmup_lr(step, cfg.lr, cfg.warmup_steps))?;
            }

            let (sat, pos, neg) = evaluate_triples(self, &holdout, cfg.margin)?;
            metrics.epochs.push(EncoderEpochLog {
                epoch,
                mean_train_loss: epoch_loss / batches.max(1) as f64,
                holdout_margin_satisfaction: sat,
                holdout_mean_positive_cos: pos,
                holdout_mean_negative_cos: neg,
            });
        }
        Ok(metrics)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn enc() -> Encoder {
        Encoder::new(EncoderConfig::default(), 7)
    }

    #[test]
    fn embed_is_unit_norm_and_deterministic() {
        let e = enc();
        let a = e.embed("show all actors").unwrap();
        let b = e.embed("show all actors").unwrap();
        assert_eq!(a, b);
        let norm: f64 = a.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-9);
        assert_eq!(a.len(), EMBED_DIM);
    }

    #[test]
    fn self_cosine_is_one() {
        let e = enc();
        let a = e.embed("Hiển thị tên của tất cả các diễn viên").unwrap();
        assert!((cosine(&a, &a) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn empty_input_errors() {
        let e = enc();
        assert!(e.embed("   ").is_err());
        assert!(e.embed("").is_err());
    }

    #[test]
    fn single_char_embeds() {
        let e = enc();
        let v = e.embed("x").unwrap();
        let norm: f64 = v.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-9);
    }

    #[test]
    fn unit_norm_across_scripts() {
        let e = enc();
        for s in ["数据库中的演员", "データベースの俳優", "diễn viên", "café", "ac%tor_3"] {
            let v = e.embed(s).unwrap();
            let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-9, "{s}");
        }
    }

    #[test]
    fn triplet_loss_hand_values() {
        // construct unit vectors with exact cosines
        let with_cos = |c: f64| -> (Vec<f64>, Vec<f64>) {
            let a = vec![1.0, 0.0];
            let b = vec![c, (1.0 - c * c).sqrt()];
            (a, b)
        };
        let (a1, p) = with_cos(0.9); // d(a,p) = 0.1
        let (_, n) = with_cos(0.1); // d(a,n) = 0.9
        assert!(triplet_loss(&a1, &p, &n, 0.5).abs() < 1e-12);

        let (a2, x) = with_cos(0.5);
        assert!((triplet_loss(&a2, &x, &x, 0.5) - 0.5).abs() < 1e-12);

        let (a3, p3) = with_cos(0.4); // d = 0.6
        let (_, n3) = with_cos(0.8); // d = 0.2
        assert!((triplet_loss(&a3, &p3, &n3, 0.5) - 0.9).abs() < 1e-12);
    }

    #[test]
    fn triplet_loss_nonnegative_and_zero_beyond_margin() {
        let a = vec![1.0, 0.0];
        let p = vec![1.0, 0.0];
        let n = vec![-1.0, 0.0]; // d(a,p) = 0, d(a,n) = 2
        assert_eq!(triplet_loss(&a, &p, &n, 0.5), 0.0);
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("enc.bsqc");
        let e = enc();
        let before = e.embed("une question en français").unwrap();
        e.save(&path, serde_json::json!({})).unwrap();
        let loaded = Encoder::load(&path).unwrap();
        let after = loaded.embed("une question en français").unwrap();
        assert_eq!(before, after);
    }

    fn items() -> Vec<MiningItem> {
        let mk = |id: &str, lang: &str, q: &str, sql: &str| MiningItem {
            id: id.into(),
            lang: lang.into(),
            question: q.into(),
            sql: sql.into(),
            db_id: "movies".into(),
        };
        vec![
            mk("q1", "en", "show all actors", "SELECT actor.name FROM actor"),
            mk("q1", "vi", "hiển thị diễn viên", "SELECT actor.name FROM actor"),
            mk("q2", "en", "count the actors", "SELECT COUNT(*) FROM actor"),
            mk("q2", "vi", "đếm diễn viên", "SELECT COUNT(*) FROM actor"),
            mk("q3", "en", "show all casting rows", "SELECT * FROM casting"),
        ]
    }

    #[test]
    fn mining_enumerates_translation_orientations() {
        // q1 and q2 each have 2 languages -> 2 orientations each = 4 triples
        let triples = mine_triples(&items(), 1, 0.0, PairLanguages::All).unwrap();
        assert_eq!(triples.len(), 4);
        for t in &triples {
            assert_ne!(t.anchor_sql, t.negative_sql);
        }
    }

    #[test]
    fn hard_negatives_maximize_trigram_overlap() {
        let triples = mine_triples(&items(), 3, 1.0, PairLanguages::All).unwrap();
        for t in &triples {
            // brute-force oracle over all different-SQL questions of the
            // same schema
            let best = items()
                .iter()
                .filter(|i| i.sql != t.anchor_sql)
                .map(|i| trigram_overlap(&t.anchor, &i.question))
                .max()
                .unwrap();
            assert_eq!(trigram_overlap(&t.anchor, &t.negative), best);
        }
    }

    #[test]
    fn mining_requires_two_sqls() {
        let mut single = items();
        single.retain(|i| i.id == "q1");
        assert!(mine_triples(&single, 1, 0.5, PairLanguages::All).is_err());
    }

    #[test]
    fn en_pivot_restricts_pairs() {
        let all = mine_triples(&items(), 1, 0.0, PairLanguages::All).unwrap();
        let pivot = mine_triples(&items(), 1, 0.0, PairLanguages::EnPivot).unwrap();
        assert!(pivot.len() <= all.len());
        let fixture = items();
        let en_qs: Vec<&str> = fixture
            .iter()
            .filter(|i| i.lang == "en")
            .map(|i| i.question.as_str())
            .collect();
        for t in &pivot {
            // at least one side must be the English question of its pair
            assert!(
                en_qs.contains(&t.anchor.as_str()) || en_qs.contains(&t.positive.as_str())
            );
        }
    }

    #[test]
    fn mining_is_deterministic() {
        let a = mine_triples(&items(), 9, 0.5, PairLanguages::All).unwrap();
        let b = mine_triples(&items(), 9, 0.5, PairLanguages::All).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn training_reduces_loss_on_tiny_corpus() {
        let triples = mine_triples(&items(), 1, 0.5, PairLanguages::All).unwrap();
        let mut e = Encoder::new(
            EncoderConfig { buckets: 1 << 10, d_enc: 32, d_proj: 32, ..Default::default() },
            3,
        );
        let cfg = EncoderTrainConfig {
            epochs: 8,
            batch_size: 4,
            warmup_steps: 2,
            holdout_fraction: 0.0,
            ..Default::default()
        };
        let metrics = e.train(&triples, &cfg).unwrap();
        let last = metrics.epochs.last().unwrap();
        assert!(
            last.mean_train_loss < metrics.initial_mean_loss,
            "loss should drop: {} -> {}",
            metrics.initial_mean_loss,
            last.mean_train_loss
        );
    }
}
