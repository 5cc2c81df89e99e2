//! Minimal reverse-mode tape over dense tensors.
//!
//! Every node stores its forward value. Nodes created while gradient
//! tracking is enabled, and that depend on at least one tracked leaf, also
//! store a closure mapping the node's output gradient to one gradient per
//! parent. Leaves pushed first (see [`Graph::from_params`]) line up with
//! [`ParamId`](super::ParamId)s so model code can address weights directly.

use super::params::{ParamId, ParamStore};
use super::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

pub(crate) type BackwardFn = Box<dyn Fn(&[f64]) -> Vec<Vec<f64>>>;

struct Node {
    value: Tensor,
    parents: Vec<usize>,
    backward: Option<BackwardFn>,
    tracked: bool,
}

pub struct Graph {
    nodes: Vec<Node>,
    grad_enabled: bool,
    n_params: usize,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grad_enabled: true,
            n_params: 0,
        }
    }

    /// A graph that records no backward closures.
    pub fn no_grad() -> Self {
        Self {
            grad_enabled: false,
            ..Self::new()
        }
    }

    /// Builds a graph whose first leaves are the store's parameters, in order.
    pub fn from_params(store: &ParamStore, grad_enabled: bool) -> Self {
        let mut g = Self {
            grad_enabled,
            ..Self::new()
        };
        for t in store.tensors() {
            g.leaf(t.clone());
        }
        g.n_params = store.len();
        g
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Number of nodes holding a backward closure.
    pub fn tracked_ops(&self) -> usize {
        self.nodes.iter().filter(|n| n.backward.is_some()).count()
    }

    pub fn param(&self, id: ParamId) -> Var {
        assert!(
            id.0 < self.n_params,
            "param {} not bound in this graph",
            id.0
        );
        Var(id.0)
    }

    /// A differentiable input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        let tracked = self.grad_enabled;
        self.nodes.push(Node {
            value: strip(value),
            parents: Vec::new(),
            backward: None,
            tracked,
        });
        Var(self.nodes.len() - 1)
    }

    /// A non-differentiable input.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value: strip(value),
            parents: Vec::new(),
            backward: None,
            tracked: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn data(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    pub fn is_tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    /// Cuts the gradient path: returns a constant copy of `v`.
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.value(v).clone();
        self.constant(t)
    }

    /// Records an op. `backward` receives the output gradient and returns
    /// one gradient per parent (same lengths as the parents' values).
    pub fn push_op<F>(&mut self, value: Tensor, parents: &[Var], backward: F) -> Var
    where
        F: Fn(&[f64]) -> Vec<Vec<f64>> + 'static,
    {
        let tracked = self.grad_enabled && parents.iter().any(|p| self.nodes[p.0].tracked);
        let node = Node {
            value: strip(value),
            parents: parents.iter().map(|p| p.0).collect(),
            backward: if tracked {
                Some(Box::new(backward))
            } else {
                None
            },
            tracked,
        };
        self.nodes.push(node);
        Var(self.nodes.len() - 1)
    }

    /// Reverse sweep from a single-element `loss`.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(
            self.value(loss).numel(),
            1,
            "backward expects a scalar loss"
        );
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        if !self.nodes[loss.0].tracked {
            return Gradients { grads };
        }
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g_out) = grads[i].take() else {
                continue;
            };
            let node = &self.nodes[i];
            if let Some(bw) = &node.backward {
                let parent_grads = bw(&g_out);
                debug_assert_eq!(parent_grads.len(), node.parents.len());
                for (&p, pg) in node.parents.iter().zip(parent_grads) {
                    if !self.nodes[p].tracked {
                        continue;
                    }
                    debug_assert_eq!(pg.len(), self.nodes[p].value.numel());
                    match &mut grads[p] {
                        Some(acc) => acc.iter_mut().zip(&pg).for_each(|(a, b)| *a += b),
                        slot @ None => *slot = Some(pg),
                    }
                }
            }
            // leaves keep their gradient
            if node.backward.is_none() {
                grads[i] = Some(g_out);
            }
        }
        Gradients { grads }
    }
}

fn strip(mut t: Tensor) -> Tensor {
    t.zero_grad();
    t
}

/// Gradients of a scalar with respect to every tracked leaf.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient of `v`, zeros if `v` did not influence the loss.
    pub fn get_or_zero(&self, v: Var, numel: usize) -> Vec<f64> {
        self.get(v).map(|g| g.to_vec()).unwrap_or_else(|| vec![0.0; numel])
    }
}
