//! Dynamic reverse-mode tape. Every op pushes a node holding its forward
//! value and a backward closure; the tape is dropped after `backward`.

use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

type BackFn = Box<dyn Fn(&[Tensor], &Tensor, &mut GradStore)>;

pub struct Tape {
    values: Vec<Tensor>,
    needs_grad: Vec<bool>,
    backs: Vec<Option<BackFn>>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Tape {
        Tape { values: Vec::new(), needs_grad: Vec::new(), backs: Vec::new() }
    }

    /// Differentiable leaf (copies the tensor in).
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        self.push(t.clone(), true, None)
    }

    /// Non-differentiable input; backward never flows into it.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, false, None)
    }

    pub fn scalar(&mut self, v: f64) -> Var {
        self.constant(Tensor::scalar(v))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.values[v.0]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub(crate) fn needs_grad(&self, v: Var) -> bool {
        self.needs_grad[v.0]
    }

    pub(crate) fn push(&mut self, value: Tensor, needs_grad: bool, back: Option<BackFn>) -> Var {
        self.values.push(value);
        self.needs_grad.push(needs_grad);
        self.backs.push(back);
        Var(self.values.len() - 1)
    }

    /// Reverse pass from a scalar loss. Gradients are accumulated for every
    /// node that requires them; use [`Grads::wrt`] to read leaf gradients.
    pub fn backward(&mut self, loss: Var) -> Grads {
        assert_eq!(
            self.values[loss.0].numel(),
            1,
            "backward needs a scalar loss, got shape {:?}",
            self.values[loss.0].shape()
        );
        let mut grads = GradStore { slots: vec![None; self.values.len()] };
        grads.slots[loss.0] = Some(Tensor::full(self.values[loss.0].shape(), 1.0));

        for i in (0..self.values.len()).rev() {
            if !self.needs_grad[i] {
                continue;
            }
            let Some(back) = self.backs[i].take() else { continue };
            let Some(out_grad) = grads.slots[i].take() else { continue };
            back(&self.values, &out_grad, &mut grads);
            grads.slots[i] = Some(out_grad);
        }
        Grads { slots: grads.slots }
    }
}

pub(crate) struct GradStore {
    slots: Vec<Option<Tensor>>,
}

impl GradStore {
    /// Gradient accumulator for a node, zero-initialized on first touch.
    pub fn slot_mut(&mut self, id: usize, shape: &[usize]) -> &mut Tensor {
        self.slots[id].get_or_insert_with(|| Tensor::zeros(shape))
    }
}

pub struct Grads {
    slots: Vec<Option<Tensor>>,
}

impl Grads {
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.slots[v.0].as_ref()
    }
}
