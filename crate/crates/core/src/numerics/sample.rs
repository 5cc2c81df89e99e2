//! Bilinear sampling with zero padding, and same-padded 2-D convolution.

use super::graph::{Graph, Var};
use super::ops::matmul_raw;
use super::tensor::Tensor;
use crate::error::{shape_err, Error, Result};

/// Corner taps of a bilinear lookup: `(x, y, weight)` for in-bounds texels.
struct Taps {
    x0: isize,
    y0: isize,
    wx: f64,
    wy: f64,
}

impl Taps {
    fn new(u: f64, v: f64) -> Self {
        let xf = u.floor();
        let yf = v.floor();
        Self {
            x0: xf as isize,
            y0: yf as isize,
            wx: u - xf,
            wy: v - yf,
        }
    }
}

#[inline]
fn texel(data: &[f64], c: usize, h: usize, w: usize, x: isize, y: isize) -> Option<f64> {
    if x < 0 || y < 0 || x as usize >= w || y as usize >= h {
        None
    } else {
        Some(data[(c * h + y as usize) * w + x as usize])
    }
}

fn check_map(map: &Tensor) -> Result<(usize, usize, usize)> {
    match map.shape() {
        &[c, h, w] if c * h * w > 0 => Ok((c, h, w)),
        &[_, _, _] => Err(Error::Empty("feature map")),
        s => Err(shape_err(format!("feature map must be [C,H,W], got {s:?}"))),
    }
}

/// Samples every channel of `map [C, H, W]` at continuous pixel position
/// `(u, v)` (`u` along width). Texels outside the map read as zero.
pub fn bilinear_sample(map: &Tensor, u: f64, v: f64) -> Result<Vec<f64>> {
    let (c, h, w) = check_map(map)?;
    if !u.is_finite() || !v.is_finite() {
        return Err(Error::NonFinite("sampling coordinate"));
    }
    let mut out = vec![0.0; c];
    sample_into(map.data(), h, w, u, v, &mut out);
    Ok(out)
}

fn sample_into(data: &[f64], h: usize, w: usize, u: f64, v: f64, out: &mut [f64]) {
    let tp = Taps::new(u, v);
    // far outside: nothing to read
    if tp.x0 < -1 || tp.y0 < -1 || tp.x0 >= w as isize || tp.y0 >= h as isize {
        out.fill(0.0);
        return;
    }
    let corners = [
        (tp.x0, tp.y0, (1.0 - tp.wx) * (1.0 - tp.wy)),
        (tp.x0 + 1, tp.y0, tp.wx * (1.0 - tp.wy)),
        (tp.x0, tp.y0 + 1, (1.0 - tp.wx) * tp.wy),
        (tp.x0 + 1, tp.y0 + 1, tp.wx * tp.wy),
    ];
    for (ch, o) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for &(x, y, wt) in &corners {
            if let Some(val) = texel(data, ch, h, w, x, y) {
                acc += wt * val;
            }
        }
        *o = acc;
    }
}

impl Graph {
    /// Samples `map [C, H, W]` at each row of `uv [P, 2]`; returns `[P, C]`.
    /// Differentiable with respect to both the map and the coordinates.
    pub fn bilinear_sample(&mut self, map: Var, uv: Var) -> Result<Var> {
        let (c, h, w) = check_map(self.value(map))?;
        let uvt = self.value(uv);
        if uvt.last_dim() != 2 {
            return Err(shape_err(format!("uv must be [P,2], got {:?}", uvt.shape())));
        }
        uvt.ensure_finite("sampling coordinates")?;
        let p = uvt.numel() / 2;
        let uvd = uvt.data().to_vec();
        let md = self.data(map).to_vec();
        let mut y = vec![0.0; p * c];
        for i in 0..p {
            sample_into(&md, h, w, uvd[2 * i], uvd[2 * i + 1], &mut y[i * c..(i + 1) * c]);
        }
        let out = Tensor::new(&[p, c], y)?;
        Ok(self.push_op(out, &[map, uv], move |g| {
            let mut gm = vec![0.0; c * h * w];
            let mut guv = vec![0.0; p * 2];
            for i in 0..p {
                let tp = Taps::new(uvd[2 * i], uvd[2 * i + 1]);
                if tp.x0 < -1 || tp.y0 < -1 || tp.x0 >= w as isize || tp.y0 >= h as isize {
                    continue;
                }
                let gr = &g[i * c..(i + 1) * c];
                let (wx, wy) = (tp.wx, tp.wy);
                let corners = [
                    (tp.x0, tp.y0, (1.0 - wx) * (1.0 - wy), -(1.0 - wy), -(1.0 - wx)),
                    (tp.x0 + 1, tp.y0, wx * (1.0 - wy), 1.0 - wy, -wx),
                    (tp.x0, tp.y0 + 1, (1.0 - wx) * wy, -wy, 1.0 - wx),
                    (tp.x0 + 1, tp.y0 + 1, wx * wy, wy, wx),
                ];
                for &(x, y, wt, dwdu, dwdv) in &corners {
                    if x < 0 || y < 0 || x as usize >= w || y as usize >= h {
                        continue;
                    }
                    let (xu, yu) = (x as usize, y as usize);
                    for (ch, &gv) in gr.iter().enumerate() {
                        let idx = (ch * h + yu) * w + xu;
                        gm[idx] += wt * gv;
                        guv[2 * i] += dwdu * md[idx] * gv;
                        guv[2 * i + 1] += dwdv * md[idx] * gv;
                    }
                }
            }
            vec![gm, guv]
        }))
    }

    /// Stride-1, zero-padded ("same") convolution.
    /// `x [Cin, H, W]`, `w [Cout, Cin, K, K]` with odd `K`, `b [Cout]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>) -> Var {
        let (cin, h, wd) = match self.shape(x) {
            &[a, b, c] => (a, b, c),
            s => panic!("conv2d input must be [C,H,W], got {s:?}"),
        };
        let (cout, cin2, k) = match self.shape(w) {
            &[a, b, c, d] if c == d && c % 2 == 1 => (a, b, c),
            s => panic!("conv2d weight must be [Cout,Cin,K,K] with odd K, got {s:?}"),
        };
        assert_eq!(cin, cin2, "conv2d channel mismatch");
        let hw = h * wd;
        let rows = cin * k * k;
        let col = im2col(self.data(x), cin, h, wd, k);
        let wdat = self.data(w).to_vec();
        let mut y = matmul_raw(&wdat, &col, cout, rows, hw);
        if let Some(b) = b {
            for (yo, &bo) in y.chunks_mut(hw).zip(self.data(b)) {
                yo.iter_mut().for_each(|v| *v += bo);
            }
        }
        let out = Tensor::new(&[cout, h, wd], y).expect("conv2d shape");
        let has_bias = b.is_some();
        let mut parents = vec![x, w];
        parents.extend(b);
        self.push_op(out, &parents, move |g| {
            let mut gw = vec![0.0; cout * rows];
            for (o, go) in g.chunks(hw).enumerate() {
                for (r, cr) in col.chunks(hw).enumerate() {
                    gw[o * rows + r] = dot(go, cr);
                }
            }
            let mut wt = vec![0.0; rows * cout];
            for o in 0..cout {
                for r in 0..rows {
                    wt[r * cout + o] = wdat[o * rows + r];
                }
            }
            let gcol = matmul_raw(&wt, g, rows, cout, hw);
            let mut out = vec![col2im(&gcol, cin, h, wd, k), gw];
            if has_bias {
                out.push(g.chunks(hw).map(|go| go.iter().sum()).collect());
            }
            out
        })
    }
}

/// Row `(i, ky, kx)` of the result holds channel `i` shifted by the kernel
/// tap, zero outside the map: `[Cin·K·K, H·W]`.
fn im2col(x: &[f64], cin: usize, h: usize, w: usize, k: usize) -> Vec<f64> {
    let hw = h * w;
    let r = (k / 2) as isize;
    let mut col = vec![0.0; cin * k * k * hw];
    for i in 0..cin {
        let xi = &x[i * hw..(i + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = &mut col[((i * k + ky) * k + kx) * hw..][..hw];
                let (dy, dx) = (ky as isize - r, kx as isize - r);
                let xlo = (-dx).max(0) as usize;
                let xhi = (w as isize - dx).clamp(0, w as isize) as usize;
                if xlo >= xhi {
                    continue;
                }
                for yy in 0..h {
                    let sy = yy as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let s0 = sy as usize * w + (xlo as isize + dx) as usize;
                    row[yy * w + xlo..yy * w + xhi].copy_from_slice(&xi[s0..s0 + (xhi - xlo)]);
                }
            }
        }
    }
    col
}

/// Adjoint of [`im2col`].
fn col2im(col: &[f64], cin: usize, h: usize, w: usize, k: usize) -> Vec<f64> {
    let hw = h * w;
    let r = (k / 2) as isize;
    let mut x = vec![0.0; cin * hw];
    for i in 0..cin {
        let xi = &mut x[i * hw..(i + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = &col[((i * k + ky) * k + kx) * hw..][..hw];
                let (dy, dx) = (ky as isize - r, kx as isize - r);
                let xlo = (-dx).max(0) as usize;
                let xhi = (w as isize - dx).clamp(0, w as isize) as usize;
                if xlo >= xhi {
                    continue;
                }
                for yy in 0..h {
                    let sy = yy as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let s0 = sy as usize * w + (xlo as isize + dx) as usize;
                    for (d, v) in xi[s0..s0 + (xhi - xlo)].iter_mut().zip(&row[yy * w + xlo..yy * w + xhi]) {
                        *d += v;
                    }
                }
            }
        }
    }
    x
}

/// Samples one location of a `[C, H, W]` buffer into `out` (length `C`).
pub(crate) fn sample_at(data: &[f64], h: usize, w: usize, u: f64, v: f64, out: &mut [f64]) {
    sample_into(data, h, w, u, v, out)
}

/// Adjoint of [`sample_at`] with respect to the map: adds `g[c] * weight`
/// into each tap of `grad` (`[C, H, W]`).
pub(crate) fn splat_at(grad: &mut [f64], h: usize, w: usize, u: f64, v: f64, g: &[f64], scale: f64) {
    let tp = Taps::new(u, v);
    if tp.x0 < -1 || tp.y0 < -1 || tp.x0 >= w as isize || tp.y0 >= h as isize {
        return;
    }
    let corners = [
        (tp.x0, tp.y0, (1.0 - tp.wx) * (1.0 - tp.wy)),
        (tp.x0 + 1, tp.y0, tp.wx * (1.0 - tp.wy)),
        (tp.x0, tp.y0 + 1, (1.0 - tp.wx) * tp.wy),
        (tp.x0 + 1, tp.y0 + 1, tp.wx * tp.wy),
    ];
    for &(x, y, wt) in &corners {
        if x < 0 || y < 0 || x as usize >= w || y as usize >= h {
            continue;
        }
        let off = y as usize * w + x as usize;
        for (ch, gv) in g.iter().enumerate() {
            grad[ch * h * w + off] += scale * wt * gv;
        }
    }
}

/// Dot product with four independent accumulators so the loop vectorizes.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..4 {
            acc[l] += x[l] * y[l];
        }
    }
    let tail: f64 = ra.iter().zip(rb).map(|(x, y)| x * y).sum();
    acc[0] + acc[1] + acc[2] + acc[3] + tail
}
