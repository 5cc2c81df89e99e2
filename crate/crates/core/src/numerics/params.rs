use rand::Rng;

use super::graph::Gradients;
use super::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named trainable tensors. Registration order is the binding order into a
/// [`Graph`](super::Graph).
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        debug_assert!(
            !self.names.contains(&name),
            "duplicate parameter name {name}"
        );
        self.names.push(name);
        self.tensors.push(value);
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// Adds the graph gradients of the bound parameters into each tensor's
    /// gradient slot.
    pub fn accumulate(&mut self, grads: &Gradients) {
        for (i, t) in self.tensors.iter_mut().enumerate() {
            if let Some(g) = grads.get(super::Var(i)) {
                t.accumulate_grad(g);
            }
        }
    }

    pub fn zero_grads(&mut self) {
        self.tensors.iter_mut().for_each(Tensor::zero_grad);
    }

    pub fn any_grad(&self) -> bool {
        self.tensors.iter().any(|t| t.grad().is_some())
    }
}

/// Xavier/Glorot uniform initialization for a `[fan_out, fan_in, ...]` weight.
pub fn xavier_uniform(shape: &[usize], rng: &mut impl Rng) -> Tensor {
    let receptive: usize = shape.iter().skip(2).product();
    let fan_out = shape[0] * receptive;
    let fan_in = shape.get(1).copied().unwrap_or(1) * receptive;
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Tensor::from_fn(shape, |_| rng.random_range(-a..a))
}

pub fn uniform(shape: &[usize], bound: f64, rng: &mut impl Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-bound..bound))
}
