//! Dense tensors, a reverse-mode tape, differentiable primitives, and the
//! finite-difference gradient checker.

mod gradcheck;
mod graph;
mod ops;
mod params;
mod sample;
mod serialize;
mod tensor;

pub use gradcheck::{grad_check, grad_check_params, rel_error, GradCheckOptions, GradCheckReport};
pub use graph::{Gradients, Graph, Var};
pub use ops::sigmoid;
pub(crate) use ops::softmax_rows;
pub use params::{uniform, xavier_uniform, ParamId, ParamStore};
pub use sample::bilinear_sample;
pub(crate) use sample::{sample_at, splat_at};
pub use serialize::{load_tensor, read_tensor, save_tensor, write_tensor, DType};
pub use tensor::Tensor;

/// Softmax over the last axis of a plain tensor.
pub fn softmax(logits: &Tensor) -> crate::Result<Tensor> {
    logits.ensure_finite("softmax logits")?;
    Tensor::new(logits.shape(), softmax_rows(logits.data(), logits.last_dim()))
}

/// A dense affine map `y = W x + b` whose weights live in a [`ParamStore`].
#[derive(Debug, Clone, Copy)]
pub struct LinearMap {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl LinearMap {
    /// Registers a Xavier-initialized map with zero bias.
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        bias: bool,
        rng: &mut impl rand::Rng,
    ) -> Self {
        let weight = store.register(format!("{name}.weight"), xavier_uniform(&[out_dim, in_dim], rng));
        let bias = bias.then(|| store.register(format!("{name}.bias"), Tensor::zeros(&[out_dim])));
        Self {
            weight,
            bias,
            in_dim,
            out_dim,
        }
    }

    /// Registers an all-zero map.
    pub fn zeros(store: &mut ParamStore, name: &str, in_dim: usize, out_dim: usize, bias: bool) -> Self {
        let weight = store.register(format!("{name}.weight"), Tensor::zeros(&[out_dim, in_dim]));
        let bias = bias.then(|| store.register(format!("{name}.bias"), Tensor::zeros(&[out_dim])));
        Self {
            weight,
            bias,
            in_dim,
            out_dim,
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let w = g.param(self.weight);
        let b = self.bias.map(|b| g.param(b));
        g.linear(x, w, b)
    }

    /// Applies the map to `x [N, in]` outside of any graph.
    pub fn apply(&self, store: &ParamStore, x: &Tensor) -> Tensor {
        let w = store.get(self.weight).data();
        let n = x.numel() / self.in_dim;
        let mut y = matmul_raw_t(x.data(), w, n, self.in_dim, self.out_dim);
        if let Some(b) = self.bias {
            let b = store.get(b).data();
            for r in y.chunks_mut(self.out_dim) {
                r.iter_mut().zip(b).for_each(|(a, b)| *a += b);
            }
        }
        Tensor::new(&[n, self.out_dim], y).expect("linear output")
    }
}

/// `x [n, k] · wᵀ` with `w [m, k]`.
fn matmul_raw_t(x: &[f64], w: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut y = vec![0.0; n * m];
    for i in 0..n {
        for o in 0..m {
            y[i * m + o] = x[i * k..(i + 1) * k]
                .iter()
                .zip(&w[o * k..(o + 1) * k])
                .map(|(a, b)| a * b)
                .sum();
        }
    }
    y
}
