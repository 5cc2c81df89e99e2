use rand::Rng;

use crate::numerics::{xavier_uniform, Graph, ParamId, ParamStore, Tensor, Var};

use super::grid::BevGridSpec;

/// Focal-loss prior: initial heatmap probability of 0.1.
const HEAD_PRIOR_BIAS: f64 = -2.19;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BevEncoderConfig {
    /// Channels of the image feature maps entering volumetric sampling.
    pub feat_channels: usize,
    /// Grid cells along z.
    pub depth: usize,
    /// Channels of `F_BEV`.
    pub channels: usize,
    pub hidden: usize,
    /// 3×3 conv layers before the 1×1 heatmap head.
    pub n_conv: usize,
    /// Append normalized BEV x/y coordinate planes to the heatmap input.
    pub coord_channels: bool,
}

/// The 1×1 height-compression conv and the lightweight heatmap CNN.
#[derive(Debug, Clone)]
pub struct BevEncoder {
    pub cfg: BevEncoderConfig,
    pub compress_w: ParamId,
    pub compress_b: ParamId,
    pub convs: Vec<(ParamId, ParamId)>,
    pub head_w: ParamId,
    pub head_b: ParamId,
}

impl BevEncoder {
    pub fn new(store: &mut ParamStore, name: &str, cfg: BevEncoderConfig, rng: &mut impl Rng) -> Self {
        let cin = cfg.feat_channels * cfg.depth;
        let compress_w = store.register(
            format!("{name}.compress.weight"),
            xavier_uniform(&[cfg.channels, cin, 1, 1], rng),
        );
        let compress_b = store.register(format!("{name}.compress.bias"), Tensor::zeros(&[cfg.channels]));
        let mut convs = Vec::new();
        let mut c_in = cfg.channels + if cfg.coord_channels { 2 } else { 0 };
        for l in 0..cfg.n_conv {
            let w = store.register(
                format!("{name}.conv{l}.weight"),
                xavier_uniform(&[cfg.hidden, c_in, 3, 3], rng),
            );
            let b = store.register(format!("{name}.conv{l}.bias"), Tensor::zeros(&[cfg.hidden]));
            convs.push((w, b));
            c_in = cfg.hidden;
        }
        let head_w = store.register(format!("{name}.head.weight"), xavier_uniform(&[1, c_in, 1, 1], rng));
        let head_b = store.register(format!("{name}.head.bias"), Tensor::full(&[1], HEAD_PRIOR_BIAS));
        Self {
            cfg,
            compress_w,
            compress_b,
            convs,
            head_w,
            head_b,
        }
    }

    /// `F_V [C_feat, D, H, W]` → `F_BEV [C, H, W]` by stacking z into
    /// channels and applying a 1×1 conv.
    pub fn compress(&self, g: &mut Graph, fv: Var) -> Var {
        let s = g.shape(fv).to_vec();
        let stacked = g.reshape(fv, &[s[0] * s[1], s[2], s[3]]);
        let w = g.param(self.compress_w);
        let b = g.param(self.compress_b);
        g.conv2d(stacked, w, Some(b))
    }

    /// Heatmap logits `[H, W]` from `F_BEV`.
    pub fn heatmap_logits(&self, g: &mut Graph, fbev: Var, spec: &BevGridSpec) -> Var {
        let mut x = fbev;
        if self.cfg.coord_channels {
            let coords = g.constant(coord_planes(spec));
            let (c, h, w) = (g.shape(fbev)[0], spec.height(), spec.width());
            let a = g.reshape(fbev, &[c, h * w]);
            let b = g.reshape(coords, &[2, h * w]);
            let at = g.transpose(a);
            let bt = g.transpose(b);
            let cat = g.concat_cols(&[at, bt]);
            let back = g.transpose(cat);
            x = g.reshape(back, &[c + 2, h, w]);
        }
        for &(w, b) in &self.convs {
            let (w, b) = (g.param(w), g.param(b));
            let y = g.conv2d(x, w, Some(b));
            x = g.relu(y);
        }
        let (w, b) = (g.param(self.head_w), g.param(self.head_b));
        let y = g.conv2d(x, w, Some(b));
        let s = g.shape(y).to_vec();
        g.reshape(y, &[s[1], s[2]])
    }
}

/// `[2, H, W]`: normalized x and y of every BEV cell center.
pub fn coord_planes(spec: &BevGridSpec) -> Tensor {
    let (h, w) = (spec.height(), spec.width());
    let mut t = Tensor::zeros(&[2, h, w]);
    for j in 0..h {
        for i in 0..w {
            let c = spec.cell_center(0, j, i);
            let n = spec.normalize(c);
            t.set(&[0, j, i], n[0]);
            t.set(&[1, j, i], n[1]);
        }
    }
    t
}
