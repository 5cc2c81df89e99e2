//! Sparse camera cross-attention kernels, multi-head attention, and the
//! temporal variants built on them.

mod cross_frame;
mod mha;
mod pca;
mod sca;

pub use cross_frame::{pca_cross_frame, CrossFrameOutput, PastFrame};
pub use mha::{mha, rectify_past_queries, temporal_self_attention, MhaWeights, TemporalQueries};
pub use pca::{pca_forward, AttnConfig, OffsetSpace, PcaOutput, PcaWeights};
pub use sca::sca2d_forward;

use crate::numerics::{Graph, Tensor, Var};

impl Graph {
    /// Per-head weighted sum of sampled values.
    ///
    /// `a [N, H·L·S]` has columns ordered `(head, level, point)`; `v [L·N·H·S, C]`
    /// has rows ordered `(level, query, head, point)`. Head `h` only reads its
    /// own channel block `h·C/H .. (h+1)·C/H`, so the result is `[N, C]`.
    pub fn head_weighted_sum(&mut self, a: Var, v: Var, heads: usize, levels: usize, points: usize) -> Var {
        let n = self.value(a).numel() / (heads * levels * points);
        let c = self.value(v).last_dim();
        assert_eq!(self.value(a).last_dim(), heads * levels * points, "attention width");
        assert_eq!(self.value(v).numel(), levels * n * heads * points * c, "value rows");
        assert_eq!(c % heads, 0, "heads must divide channels");
        let dh = c / heads;
        let ad = self.data(a).to_vec();
        let vd = self.data(v).to_vec();
        let row = move |l: usize, i: usize, h: usize, s: usize| ((l * n + i) * heads + h) * points + s;
        let col = move |h: usize, l: usize, s: usize| (h * levels + l) * points + s;
        let width = heads * levels * points;
        let mut y = vec![0.0; n * c];
        for i in 0..n {
            for h in 0..heads {
                let dst = &mut y[i * c + h * dh..i * c + (h + 1) * dh];
                for l in 0..levels {
                    for s in 0..points {
                        let w = ad[i * width + col(h, l, s)];
                        let r = row(l, i, h, s) * c + h * dh;
                        for (o, x) in dst.iter_mut().zip(&vd[r..r + dh]) {
                            *o += w * x;
                        }
                    }
                }
            }
        }
        let out = Tensor::new(&[n, c], y).expect("head sum shape");
        self.push_op(out, &[a, v], move |g| {
            let mut ga = vec![0.0; n * width];
            let mut gv = vec![0.0; vd.len()];
            for i in 0..n {
                for h in 0..heads {
                    let gr = &g[i * c + h * dh..i * c + (h + 1) * dh];
                    for l in 0..levels {
                        for s in 0..points {
                            let k = i * width + col(h, l, s);
                            let r = row(l, i, h, s) * c + h * dh;
                            ga[k] = gr.iter().zip(&vd[r..r + dh]).map(|(x, y)| x * y).sum();
                            for (dst, gv_) in gv[r..r + dh].iter_mut().zip(gr) {
                                *dst = ad[k] * gv_;
                            }
                        }
                    }
                }
            }
            vec![ga, gv]
        })
    }
}
