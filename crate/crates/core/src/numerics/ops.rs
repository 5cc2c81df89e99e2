//! Differentiable primitives recorded on a [`Graph`].

use super::graph::{Graph, Var};
use super::tensor::Tensor;

fn t(shape: &[usize], data: Vec<f64>) -> Tensor {
    Tensor::new(shape, data).expect("op produced inconsistent shape")
}

impl Graph {
    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, df: fn(f64, f64) -> f64) -> Var {
        let x = self.data(a).to_vec();
        let y: Vec<f64> = x.iter().map(|&v| f(v)).collect();
        let out = t(self.shape(a), y.clone());
        self.push_op(out, &[a], move |g| {
            vec![g
                .iter()
                .zip(x.iter().zip(&y))
                .map(|(g, (&x, &y))| g * df(x, y))
                .collect()]
        })
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(0.0), |x, _| if x > 0.0 { 1.0 } else { 0.0 })
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, |_, y| y * (1.0 - y))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, |_, y| 1.0 - y * y)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, f64::exp, |_, y| y)
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, f64::ln, |x, _| 1.0 / x)
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(a, f64::abs, |x, _| {
            if x > 0.0 {
                1.0
            } else if x < 0.0 {
                -1.0
            } else {
                0.0
            }
        })
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, |x| x * x, |x, _| 2.0 * x)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let y = self.data(a).iter().map(|v| v * s).collect();
        let out = t(self.shape(a), y);
        self.push_op(out, &[a], move |g| vec![g.iter().map(|v| v * s).collect()])
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let y = self.data(a).iter().map(|v| v + s).collect();
        let out = t(self.shape(a), y);
        self.push_op(out, &[a], |g| vec![g.to_vec()])
    }

    fn binary_check(&self, a: Var, b: Var, op: &str) {
        assert_eq!(
            self.shape(a),
            self.shape(b),
            "{op}: shape mismatch {:?} vs {:?}",
            self.shape(a),
            self.shape(b)
        );
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary_check(a, b, "add");
        let y = self.data(a).iter().zip(self.data(b)).map(|(x, y)| x + y).collect();
        let out = t(self.shape(a), y);
        self.push_op(out, &[a, b], |g| vec![g.to_vec(), g.to_vec()])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary_check(a, b, "sub");
        let y = self.data(a).iter().zip(self.data(b)).map(|(x, y)| x - y).collect();
        let out = t(self.shape(a), y);
        self.push_op(out, &[a, b], |g| vec![g.to_vec(), g.iter().map(|v| -v).collect()])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary_check(a, b, "mul");
        let xa = self.data(a).to_vec();
        let xb = self.data(b).to_vec();
        let y = xa.iter().zip(&xb).map(|(x, y)| x * y).collect();
        let out = t(self.shape(a), y);
        self.push_op(out, &[a, b], move |g| {
            vec![
                g.iter().zip(&xb).map(|(g, b)| g * b).collect(),
                g.iter().zip(&xa).map(|(g, a)| g * a).collect(),
            ]
        })
    }

    /// Elementwise product with a constant of the same length.
    pub fn mul_const(&mut self, a: Var, c: Vec<f64>) -> Var {
        assert_eq!(self.value(a).numel(), c.len(), "mul_const length");
        let y = self.data(a).iter().zip(&c).map(|(x, c)| x * c).collect();
        let out = t(self.shape(a), y);
        self.push_op(out, &[a], move |g| vec![g.iter().zip(&c).map(|(g, c)| g * c).collect()])
    }

    /// `x [N, C] + b [C]` broadcast over rows.
    pub fn add_row(&mut self, x: Var, b: Var) -> Var {
        let c = self.value(x).last_dim();
        assert_eq!(self.value(b).numel(), c, "add_row width");
        let bd = self.data(b).to_vec();
        let y = self
            .data(x)
            .chunks(c)
            .flat_map(|r| r.iter().zip(&bd).map(|(x, b)| x + b).collect::<Vec<_>>())
            .collect();
        let out = t(self.shape(x), y);
        self.push_op(out, &[x, b], move |g| {
            let mut gb = vec![0.0; c];
            for r in g.chunks(c) {
                gb.iter_mut().zip(r).for_each(|(a, b)| *a += b);
            }
            vec![g.to_vec(), gb]
        })
    }

    /// Multiplies row `i` of `x [N, C]` by the constant `w[i]`.
    pub fn scale_rows(&mut self, x: Var, w: Vec<f64>) -> Var {
        let c = self.value(x).last_dim();
        assert_eq!(self.value(x).numel(), w.len() * c, "scale_rows length");
        let y = self
            .data(x)
            .chunks(c)
            .zip(&w)
            .flat_map(|(r, &s)| r.iter().map(move |v| v * s))
            .collect();
        let out = t(self.shape(x), y);
        self.push_op(out, &[x], move |g| {
            vec![g
                .chunks(c)
                .zip(&w)
                .flat_map(|(r, &s)| r.iter().map(move |v| v * s))
                .collect()]
        })
    }

    /// `a [M, K] @ b [K, N]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (m, k) = dims2(self.shape(a));
        let (k2, n) = dims2(self.shape(b));
        assert_eq!(k, k2, "matmul inner dims {k} vs {k2}");
        let ad = self.data(a).to_vec();
        let bd = self.data(b).to_vec();
        let y = matmul_raw(&ad, &bd, m, k, n);
        self.push_op(t(&[m, n], y), &[a, b], move |g| {
            // dA = G Bᵀ, dB = Aᵀ G
            let mut ga = vec![0.0; m * k];
            for i in 0..m {
                for j in 0..n {
                    let gij = g[i * n + j];
                    if gij == 0.0 {
                        continue;
                    }
                    for p in 0..k {
                        ga[i * k + p] += gij * bd[p * n + j];
                    }
                }
            }
            let mut gb = vec![0.0; k * n];
            for i in 0..m {
                for p in 0..k {
                    let aip = ad[i * k + p];
                    if aip == 0.0 {
                        continue;
                    }
                    let row = &g[i * n..(i + 1) * n];
                    for (dst, gv) in gb[p * n..(p + 1) * n].iter_mut().zip(row) {
                        *dst += aip * gv;
                    }
                }
            }
            vec![ga, gb]
        })
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let (m, n) = dims2(self.shape(a));
        let ad = self.data(a);
        let mut y = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                y[j * m + i] = ad[i * n + j];
            }
        }
        self.push_op(t(&[n, m], y), &[a], move |g| {
            let mut ga = vec![0.0; m * n];
            for i in 0..m {
                for j in 0..n {
                    ga[i * n + j] = g[j * m + i];
                }
            }
            vec![ga]
        })
    }

    /// `x [N, in] Wᵀ + b` with `w [out, in]`, `b [out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Var {
        let (out_dim, in_dim) = dims2(self.shape(w));
        let xv = self.value(x);
        assert_eq!(xv.last_dim(), in_dim, "linear: input width {} vs weight {in_dim}", xv.last_dim());
        let n = xv.numel() / in_dim;
        let xd = xv.data().to_vec();
        let wd = self.data(w).to_vec();
        let bd = b.map(|b| self.data(b).to_vec());
        let mut y = vec![0.0; n * out_dim];
        for i in 0..n {
            let xr = &xd[i * in_dim..(i + 1) * in_dim];
            for o in 0..out_dim {
                let wr = &wd[o * in_dim..(o + 1) * in_dim];
                let mut acc = bd.as_ref().map_or(0.0, |b| b[o]);
                for (a, b) in xr.iter().zip(wr) {
                    acc += a * b;
                }
                y[i * out_dim + o] = acc;
            }
        }
        let mut shape = self.shape(x).to_vec();
        *shape.last_mut().unwrap() = out_dim;
        let has_bias = b.is_some();
        let mut parents = vec![x, w];
        parents.extend(b);
        self.push_op(t(&shape, y), &parents, move |g| {
            let mut gx = vec![0.0; n * in_dim];
            let mut gw = vec![0.0; out_dim * in_dim];
            let mut gb = vec![0.0; out_dim];
            for i in 0..n {
                let xr = &xd[i * in_dim..(i + 1) * in_dim];
                let gxr = &mut gx[i * in_dim..(i + 1) * in_dim];
                for o in 0..out_dim {
                    let go = g[i * out_dim + o];
                    if go == 0.0 {
                        continue;
                    }
                    gb[o] += go;
                    let wr = &wd[o * in_dim..(o + 1) * in_dim];
                    let gwr = &mut gw[o * in_dim..(o + 1) * in_dim];
                    for p in 0..in_dim {
                        gxr[p] += go * wr[p];
                        gwr[p] += go * xr[p];
                    }
                }
            }
            let mut out = vec![gx, gw];
            if has_bias {
                out.push(gb);
            }
            out
        })
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        let n = self.value(a).numel();
        self.push_op(Tensor::scalar(s), &[a], move |g| vec![vec![g[0]; n]])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).numel();
        let s = self.sum(a);
        self.scale(s, 1.0 / n.max(1) as f64)
    }

    /// Numerically stable softmax over the last axis.
    pub fn softmax(&mut self, a: Var) -> Var {
        let c = self.value(a).last_dim();
        let y = softmax_rows(self.data(a), c);
        let out = t(self.shape(a), y.clone());
        self.push_op(out, &[a], move |g| {
            let mut gx = vec![0.0; y.len()];
            for ((yr, gr), dst) in y.chunks(c).zip(g.chunks(c)).zip(gx.chunks_mut(c)) {
                let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                for ((d, yv), gv) in dst.iter_mut().zip(yr).zip(gr) {
                    *d = yv * (gv - dot);
                }
            }
            vec![gx]
        })
    }

    /// Layer normalization over the last axis with affine `gamma`, `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Var {
        let c = self.value(x).last_dim();
        let xd = self.data(x).to_vec();
        let gd = self.data(gamma).to_vec();
        let bd = self.data(beta).to_vec();
        let rows = xd.len() / c;
        let mut xhat = vec![0.0; xd.len()];
        let mut inv_std = vec![0.0; rows];
        let mut y = vec![0.0; xd.len()];
        for r in 0..rows {
            let xr = &xd[r * c..(r + 1) * c];
            let mu = xr.iter().sum::<f64>() / c as f64;
            let var = xr.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / c as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[r] = is;
            for j in 0..c {
                let h = (xr[j] - mu) * is;
                xhat[r * c + j] = h;
                y[r * c + j] = h * gd[j] + bd[j];
            }
        }
        let out = t(self.shape(x), y);
        self.push_op(out, &[x, gamma, beta], move |g| {
            let mut gx = vec![0.0; xd.len()];
            let mut gg = vec![0.0; c];
            let mut gb = vec![0.0; c];
            for r in 0..rows {
                let gr = &g[r * c..(r + 1) * c];
                let hr = &xhat[r * c..(r + 1) * c];
                let mut dh = vec![0.0; c];
                for j in 0..c {
                    gg[j] += gr[j] * hr[j];
                    gb[j] += gr[j];
                    dh[j] = gr[j] * gd[j];
                }
                let mean_dh = dh.iter().sum::<f64>() / c as f64;
                let mean_dh_h = dh.iter().zip(hr).map(|(a, b)| a * b).sum::<f64>() / c as f64;
                for j in 0..c {
                    gx[r * c + j] = inv_std[r] * (dh[j] - mean_dh - hr[j] * mean_dh_h);
                }
            }
            vec![gx, gg, gb]
        })
    }

    /// Same data, new shape.
    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Var {
        let v = self.value(a).clone().reshape(shape).expect("reshape");
        self.push_op(v, &[a], |g| vec![g.to_vec()])
    }

    /// Columns `[start, start + len)` of a 2-D view `[N, C]`.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let c = self.value(a).last_dim();
        assert!(start + len <= c, "slice_cols out of range");
        let rows = self.value(a).numel() / c;
        let y: Vec<f64> = self
            .data(a)
            .chunks(c)
            .flat_map(|r| r[start..start + len].iter().copied())
            .collect();
        self.push_op(t(&[rows, len], y), &[a], move |g| {
            let mut ga = vec![0.0; rows * c];
            for r in 0..rows {
                ga[r * c + start..r * c + start + len].copy_from_slice(&g[r * len..(r + 1) * len]);
            }
            vec![ga]
        })
    }

    /// Concatenates 2-D tensors with equal row counts along columns.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let rows = self.value(parts[0]).numel() / self.value(parts[0]).last_dim();
        let widths: Vec<usize> = parts.iter().map(|&p| self.value(p).last_dim()).collect();
        for &p in parts {
            assert_eq!(self.value(p).numel() / self.value(p).last_dim(), rows, "concat_cols rows");
        }
        let total: usize = widths.iter().sum();
        let mut y = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                y.extend_from_slice(&self.data(p)[r * w..(r + 1) * w]);
            }
        }
        self.push_op(t(&[rows, total], y), parts, move |g| {
            let mut out: Vec<Vec<f64>> = widths.iter().map(|&w| Vec::with_capacity(rows * w)).collect();
            for r in 0..rows {
                let mut off = r * total;
                for (dst, &w) in out.iter_mut().zip(&widths) {
                    dst.extend_from_slice(&g[off..off + w]);
                    off += w;
                }
            }
            out
        })
    }

    /// Stacks 2-D tensors with equal widths along rows.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let c = self.value(parts[0]).last_dim();
        let sizes: Vec<usize> = parts.iter().map(|&p| self.value(p).numel()).collect();
        let mut y = Vec::with_capacity(sizes.iter().sum());
        for &p in parts {
            assert_eq!(self.value(p).last_dim(), c, "concat_rows width");
            y.extend_from_slice(self.data(p));
        }
        let rows = y.len() / c;
        self.push_op(t(&[rows, c], y), parts, move |g| {
            let mut off = 0;
            sizes
                .iter()
                .map(|&s| {
                    let v = g[off..off + s].to_vec();
                    off += s;
                    v
                })
                .collect()
        })
    }

    /// Selects rows of `x [N, C]` (repeats allowed).
    pub fn gather_rows(&mut self, x: Var, idx: Vec<usize>) -> Var {
        let c = self.value(x).last_dim();
        let n = self.value(x).numel() / c;
        let xd = self.data(x);
        let mut y = Vec::with_capacity(idx.len() * c);
        for &i in &idx {
            assert!(i < n, "gather_rows index {i} >= {n}");
            y.extend_from_slice(&xd[i * c..(i + 1) * c]);
        }
        self.push_op(t(&[idx.len(), c], y), &[x], move |g| {
            let mut gx = vec![0.0; n * c];
            for (k, &i) in idx.iter().enumerate() {
                gx[i * c..(i + 1) * c]
                    .iter_mut()
                    .zip(&g[k * c..(k + 1) * c])
                    .for_each(|(a, b)| *a += b);
            }
            vec![gx]
        })
    }

    /// `out[n] = Σ_g w[n, g] · v[n·G + g]` for `w [N, G]`, `v [N·G, D]`.
    pub fn weighted_group_sum(&mut self, w: Var, v: Var) -> Var {
        let (n, groups) = dims2(self.shape(w));
        let d = self.value(v).last_dim();
        assert_eq!(self.value(v).numel(), n * groups * d, "weighted_group_sum sizes");
        let wd = self.data(w).to_vec();
        let vd = self.data(v).to_vec();
        let mut y = vec![0.0; n * d];
        for i in 0..n {
            for gi in 0..groups {
                let a = wd[i * groups + gi];
                let row = &vd[(i * groups + gi) * d..(i * groups + gi + 1) * d];
                for (dst, x) in y[i * d..(i + 1) * d].iter_mut().zip(row) {
                    *dst += a * x;
                }
            }
        }
        self.push_op(t(&[n, d], y), &[w, v], move |g| {
            let mut gw = vec![0.0; n * groups];
            let mut gv = vec![0.0; n * groups * d];
            for i in 0..n {
                let gr = &g[i * d..(i + 1) * d];
                for gi in 0..groups {
                    let k = i * groups + gi;
                    let row = &vd[k * d..(k + 1) * d];
                    gw[k] = gr.iter().zip(row).map(|(a, b)| a * b).sum();
                    let a = wd[k];
                    for (dst, gv_) in gv[k * d..(k + 1) * d].iter_mut().zip(gr) {
                        *dst = a * gv_;
                    }
                }
            }
            vec![gw, gv]
        })
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn dims2(shape: &[usize]) -> (usize, usize) {
    match shape {
        [m, n] => (*m, *n),
        [n] => (1, *n),
        _ => {
            let n = *shape.last().unwrap();
            (shape.iter().product::<usize>() / n, n)
        }
    }
}

pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut y = vec![0.0; m * n];
    for i in 0..m {
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (dst, bv) in y[i * n..(i + 1) * n].iter_mut().zip(brow) {
                *dst += aip * bv;
            }
        }
    }
    y
}

pub(crate) fn softmax_rows(x: &[f64], c: usize) -> Vec<f64> {
    let mut y = Vec::with_capacity(x.len());
    for r in x.chunks(c) {
        let m = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = r.iter().map(|v| (v - m).exp()).collect();
        let s: f64 = e.iter().sum();
        y.extend(e.into_iter().map(|v| v / s));
    }
    y
}
