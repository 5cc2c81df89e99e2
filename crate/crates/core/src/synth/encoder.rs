use rand::Rng;

use crate::numerics::{xavier_uniform, Graph, ParamId, ParamStore, Tensor, Var};

/// Optional learnable two-layer 3×3 conv applied to rendered maps.
#[derive(Debug, Clone, Copy)]
pub struct FeatureEncoder {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl FeatureEncoder {
    pub fn new(store: &mut ParamStore, name: &str, in_channels: usize, hidden: usize, out_channels: usize, rng: &mut impl Rng) -> Self {
        Self {
            w1: store.register(format!("{name}.conv1.weight"), xavier_uniform(&[hidden, in_channels, 3, 3], rng)),
            b1: store.register(format!("{name}.conv1.bias"), Tensor::zeros(&[hidden])),
            w2: store.register(format!("{name}.conv2.weight"), xavier_uniform(&[out_channels, hidden, 3, 3], rng)),
            b2: store.register(format!("{name}.conv2.bias"), Tensor::zeros(&[out_channels])),
            in_channels,
            out_channels,
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let (w1, b1, w2, b2) = (g.param(self.w1), g.param(self.b1), g.param(self.w2), g.param(self.b2));
        let h = g.conv2d(x, w1, Some(b1));
        let h = g.relu(h);
        g.conv2d(h, w2, Some(b2))
    }
}
