//! Named parameter store, AdamW with decoupled weight decay, global-norm
//! gradient clipping, and the linear warmup schedule.

use crate::tape::{Grads, Tape, Var};
use crate::tensor::Tensor;
use crate::NnError;

pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
}

#[derive(Default)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> ParamStore {
        ParamStore { params: Vec::new() }
    }

    pub fn add(&mut self, name: &str, value: Tensor) -> usize {
        assert!(
            self.index_of(name).is_none(),
            "duplicate parameter name {name:?}"
        );
        let grad = Tensor::zeros(value.shape());
        self.params.push(Param { name: name.to_string(), value, grad });
        self.params.len() - 1
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    pub fn get(&self, name: &str) -> &Tensor {
        let i = self.index_of(name).unwrap_or_else(|| panic!("no parameter {name:?}"));
        &self.params[i].value
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn total_elements(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().fill(0.0);
        }
    }

    /// Registers every parameter as a tape leaf, in store order.
    pub fn bind(&self, tape: &mut Tape) -> Vec<Var> {
        self.params.iter().map(|p| tape.leaf(&p.value)).collect()
    }

    /// Adds tape gradients into the store's accumulators.
    pub fn accumulate(&mut self, grads: &Grads, vars: &[Var]) {
        assert_eq!(vars.len(), self.params.len());
        for (p, &v) in self.params.iter_mut().zip(vars.iter()) {
            if let Some(g) = grads.wrt(v) {
                for (acc, &gv) in p.grad.data_mut().iter_mut().zip(g.data().iter()) {
                    *acc += gv;
                }
            }
        }
    }

    /// Byte-stable fingerprint of all parameter values, for frozen-weights
    /// assertions.
    pub fn fingerprint(&self) -> u64 {
        let mut h = 0xcbf29ce484222325u64;
        for p in &self.params {
            for b in p.name.as_bytes() {
                h ^= *b as u64;
                h = h.wrapping_mul(0x100000001b3);
            }
            for v in p.value.data() {
                for b in v.to_le_bytes() {
                    h ^= b as u64;
                    h = h.wrapping_mul(0x100000001b3);
                }
            }
        }
        h
    }
}

#[derive(Debug, Clone, Copy)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.01 }
    }
}

/// AdamW: adaptive moments on gradients, weight decay applied directly to the
/// parameters (never through the moment buffers).
pub struct AdamW {
    cfg: AdamWConfig,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    step: u64,
}

impl AdamW {
    pub fn new(store: &ParamStore, cfg: AdamWConfig) -> AdamW {
        AdamW {
            cfg,
            m: store.params().iter().map(|p| Tensor::zeros(p.value.shape())).collect(),
            v: store.params().iter().map(|p| Tensor::zeros(p.value.shape())).collect(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update from the accumulated gradients, then clears them.
    pub fn step(&mut self, store: &mut ParamStore, lr: f64) -> Result<(), NnError> {
        for p in store.params() {
            if !p.grad.is_finite() {
                return Err(NnError::NonFinite(format!(
                    "gradient of {:?} is not finite",
                    p.name
                )));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.cfg.beta1.powi(t);
        let bc2 = 1.0 - self.cfg.beta2.powi(t);
        for (i, p) in store.params_mut().iter_mut().enumerate() {
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            let w = p.value.data_mut();
            let g = p.grad.data();
            for j in 0..w.len() {
                m[j] = self.cfg.beta1 * m[j] + (1.0 - self.cfg.beta1) * g[j];
                v[j] = self.cfg.beta2 * v[j] + (1.0 - self.cfg.beta2) * g[j] * g[j];
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                w[j] -= lr * (mhat / (vhat.sqrt() + self.cfg.eps));
                w[j] -= lr * self.cfg.weight_decay * w[j];
            }
        }
        store.zero_grads();
        Ok(())
    }
}

/// Scales all gradients so their global L2 norm is at most `max_norm`.
/// Returns the pre-clip norm.
pub fn clip_grad_norm(store: &mut ParamStore, max_norm: f64) -> f64 {
    let mut sq = 0.0;
    for p in store.params() {
        for &g in p.grad.data() {
            sq += g * g;
        }
    }
    let norm = sq.sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        for p in store.params_mut() {
            for g in p.grad.data_mut() {
                *g *= scale;
            }
        }
    }
    norm
}

/// Linear warmup: 0 at step 0, `base_lr` from `warmup_steps` onward.
pub fn warmup_lr(step: u64, base_lr: f64, warmup_steps: u64) -> f64 {
    if warmup_steps == 0 || step >= warmup_steps {
        base_lr
    } else {
        base_lr * step as f64 / warmup_steps as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_param(v: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.add("w", Tensor::scalar(v));
        s
    }

    #[test]
    fn zero_grad_zero_decay_leaves_params() {
        let mut store = single_param(1.5);
        let mut opt = AdamW::new(&store, AdamWConfig { weight_decay: 0.0, ..Default::default() });
        opt.step(&mut store, 0.1).unwrap();
        assert_eq!(store.get("w").item(), 1.5);
    }

    #[test]
    fn decoupled_decay_formula() {
        // grad = 0, weight_decay = 0.01, lr = 0.1  =>  w <- w * (1 - 0.001)
        let mut store = single_param(1.0);
        let mut opt = AdamW::new(&store, AdamWConfig::default());
        opt.step(&mut store, 0.1).unwrap();
        assert!((store.get("w").item() - 0.999).abs() < 1e-15);
    }

    #[test]
    fn descends_on_quadratic() {
        // f(w) = w^2, df/dw = 2w, start at w = 1
        let mut store = single_param(1.0);
        let mut opt = AdamW::new(&store, AdamWConfig { weight_decay: 0.0, ..Default::default() });
        let mut w = 1.0f64;
        for _ in 0..10 {
            store.params_mut()[0].grad = Tensor::scalar(2.0 * w);
            opt.step(&mut store, 0.05).unwrap();
            w = store.get("w").item();
        }
        assert!(w * w < 1.0);
    }

    #[test]
    fn non_finite_grad_errors() {
        let mut store = single_param(1.0);
        store.params_mut()[0].grad = Tensor::scalar(f64::NAN);
        let mut opt = AdamW::new(&store, AdamWConfig::default());
        assert!(opt.step(&mut store, 0.1).is_err());
    }

    #[test]
    fn clip_grad_norm_scales() {
        let mut store = ParamStore::new();
        store.add("a", Tensor::vector(vec![3.0, 0.0]));
        store.add("b", Tensor::vector(vec![0.0, 4.0]));
        store.params_mut()[0].grad = Tensor::vector(vec![3.0, 0.0]);
        store.params_mut()[1].grad = Tensor::vector(vec![0.0, 4.0]);
        let norm = clip_grad_norm(&mut store, 1.0);
        assert!((norm - 5.0).abs() < 1e-12);
        assert!((store.params()[0].grad.data()[0] - 0.6).abs() < 1e-12);
        // below the cap: untouched
        let norm2 = clip_grad_norm(&mut store, 10.0);
        assert!(norm2 <= 1.0 + 1e-12);
        assert!((store.params()[1].grad.data()[1] - 0.8).abs() < 1e-12);
    }

    #[test]
    fn clip_all_zero_grads_noop() {
        let mut store = single_param(1.0);
        assert_eq!(clip_grad_norm(&mut store, 1.0), 0.0);
    }

    #[test]
    fn warmup_schedule() {
        assert_eq!(warmup_lr(0, 1.0, 100), 0.0);
        assert_eq!(warmup_lr(50, 1.0, 100), 0.5);
        assert_eq!(warmup_lr(100, 1.0, 100), 1.0);
        assert_eq!(warmup_lr(5000, 1.0, 100), 1.0);
        assert_eq!(warmup_lr(0, 1.0, 0), 1.0);
    }
}
