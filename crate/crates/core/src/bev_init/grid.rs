use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{project, CameraRig};
use crate::numerics::{sample_at, splat_at, Graph, Tensor, Var};

/// Metric extent and cell counts of the volumetric sampling grid.
///
/// Cells are indexed `(d, j, i)` with `d` along z, `j` along y and `i` along
/// x; the flat index is `(d * H + j) * W + i`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BevGridSpec {
    pub x_range: [f64; 2],
    pub y_range: [f64; 2],
    pub z_range: [f64; 2],
    /// (D, H, W): cells along z, y, x.
    pub resolution: [usize; 3],
}

impl BevGridSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, r) in [("x", self.x_range), ("y", self.y_range), ("z", self.z_range)] {
            if !(r[1] > r[0]) || !r[0].is_finite() || !r[1].is_finite() {
                return Err(Error::Config(format!("{name}_range must be increasing, got {r:?}")));
            }
        }
        if self.resolution.contains(&0) {
            return Err(Error::Config("grid resolution must be positive".into()));
        }
        Ok(())
    }

    pub fn depth(&self) -> usize {
        self.resolution[0]
    }

    pub fn height(&self) -> usize {
        self.resolution[1]
    }

    pub fn width(&self) -> usize {
        self.resolution[2]
    }

    pub fn n_bev_cells(&self) -> usize {
        self.height() * self.width()
    }

    pub fn n_cells(&self) -> usize {
        self.resolution.iter().product()
    }

    pub fn cell_size(&self) -> [f64; 3] {
        [
            (self.x_range[1] - self.x_range[0]) / self.width() as f64,
            (self.y_range[1] - self.y_range[0]) / self.height() as f64,
            (self.z_range[1] - self.z_range[0]) / self.depth() as f64,
        ]
    }

    pub fn cell_center(&self, d: usize, j: usize, i: usize) -> [f64; 3] {
        let [sx, sy, sz] = self.cell_size();
        [
            self.x_range[0] + (i as f64 + 0.5) * sx,
            self.y_range[0] + (j as f64 + 0.5) * sy,
            self.z_range[0] + (d as f64 + 0.5) * sz,
        ]
    }

    /// Metric BEV center of cell `(j, i)`.
    pub fn bev_center(&self, j: usize, i: usize) -> [f64; 2] {
        let c = self.cell_center(0, j, i);
        [c[0], c[1]]
    }

    /// BEV cell `(j, i)` containing `(x, y)`, clamped to the grid.
    pub fn bev_cell_of(&self, x: f64, y: f64) -> (usize, usize) {
        let [sx, sy, _] = self.cell_size();
        let i = ((x - self.x_range[0]) / sx).floor().clamp(0.0, (self.width() - 1) as f64) as usize;
        let j = ((y - self.y_range[0]) / sy).floor().clamp(0.0, (self.height() - 1) as f64) as usize;
        (j, i)
    }

    pub fn z_mid(&self) -> f64 {
        0.5 * (self.z_range[0] + self.z_range[1])
    }

    pub fn contains_bev(&self, x: f64, y: f64) -> bool {
        x >= self.x_range[0] && x <= self.x_range[1] && y >= self.y_range[0] && y <= self.y_range[1]
    }

    pub fn clamp_point(&self, p: [f64; 3]) -> [f64; 3] {
        [
            p[0].clamp(self.x_range[0], self.x_range[1]),
            p[1].clamp(self.y_range[0], self.y_range[1]),
            p[2].clamp(self.z_range[0], self.z_range[1]),
        ]
    }

    /// Maps a point into `[-1, 1]³` over the perception range.
    pub fn normalize(&self, p: [f64; 3]) -> [f64; 3] {
        let n = |v: f64, r: [f64; 2]| 2.0 * (v - r[0]) / (r[1] - r[0]) - 1.0;
        [n(p[0], self.x_range), n(p[1], self.y_range), n(p[2], self.z_range)]
    }
}

/// Every grid cell center projected into every view (image pixels).
#[derive(Debug, Clone)]
pub struct ProjectedGrid {
    pub spec: BevGridSpec,
    pub n_views: usize,
    /// `uv[cell * n_views + view]`
    pub uv: Vec<[f64; 2]>,
    pub valid: Vec<bool>,
}

impl ProjectedGrid {
    pub fn uv(&self, cell: usize, view: usize) -> Option<[f64; 2]> {
        let k = cell * self.n_views + view;
        self.valid[k].then_some(self.uv[k])
    }

    pub fn n_valid(&self, cell: usize) -> usize {
        self.valid[cell * self.n_views..(cell + 1) * self.n_views]
            .iter()
            .filter(|&&v| v)
            .count()
    }
}

pub fn build_projected_grid(spec: &BevGridSpec, rig: &CameraRig) -> Result<ProjectedGrid> {
    spec.validate()?;
    let n_views = rig.n_views();
    let mut uv = Vec::with_capacity(spec.n_cells() * n_views);
    let mut valid = Vec::with_capacity(spec.n_cells() * n_views);
    let [dd, hh, ww] = spec.resolution;
    for d in 0..dd {
        for j in 0..hh {
            for i in 0..ww {
                for p in project(rig, spec.cell_center(d, j, i)) {
                    uv.push(if p.valid { p.uv } else { [f64::NAN; 2] });
                    valid.push(p.valid);
                }
            }
        }
    }
    Ok(ProjectedGrid {
        spec: *spec,
        n_views,
        uv,
        valid,
    })
}

/// Average of bilinear samples over the valid views of every cell.
/// `features[n]` is view `n`'s map `[C, Hf, Wf]`; `scales[n]` converts image
/// pixels into that map's pixels. Returns `F_V [C, D, H, W]`; cells without
/// a valid view are zero.
pub fn volumetric_sample_var(
    g: &mut Graph,
    features: &[Var],
    scales: &[(f64, f64)],
    grid: &ProjectedGrid,
) -> Result<Var> {
    if features.len() != grid.n_views || scales.len() != grid.n_views {
        return Err(Error::Shape(format!(
            "{} feature maps for a {}-view grid",
            features.len(),
            grid.n_views
        )));
    }
    let mut dims = Vec::with_capacity(features.len());
    for &f in features {
        match *g.shape(f) {
            [c, h, w] if c * h * w > 0 => dims.push((c, h, w)),
            ref s => return Err(Error::Shape(format!("feature map must be [C,H,W], got {s:?}"))),
        }
    }
    let c = dims[0].0;
    if dims.iter().any(|d| d.0 != c) {
        return Err(Error::Shape("views disagree on channel count".into()));
    }
    let n_cells = grid.spec.n_cells();
    let nv = grid.n_views;
    let maps: Vec<Vec<f64>> = features.iter().map(|&f| g.data(f).to_vec()).collect();
    // (cell, view, u, v) of every valid tap, and per-cell 1/|V_valid|
    let mut taps: Vec<(usize, usize, f64, f64)> = Vec::new();
    let mut inv_count = vec![0.0; n_cells];
    for cell in 0..n_cells {
        let n = grid.n_valid(cell);
        if n == 0 {
            continue;
        }
        inv_count[cell] = 1.0 / n as f64;
        for view in 0..nv {
            if let Some(uv) = grid.uv(cell, view) {
                let (su, sv) = scales[view];
                taps.push((cell, view, uv[0] * su, uv[1] * sv));
            }
        }
    }
    let mut out = vec![0.0; c * n_cells];
    let mut buf = vec![0.0; c];
    for &(cell, view, u, v) in &taps {
        let (_, h, w) = dims[view];
        sample_at(&maps[view], h, w, u, v, &mut buf);
        for ch in 0..c {
            out[ch * n_cells + cell] += inv_count[cell] * buf[ch];
        }
    }
    let [dd, hh, ww] = grid.spec.resolution;
    let value = Tensor::new(&[c, dd, hh, ww], out)?;
    Ok(g.push_op(value, features, move |gout| {
        let mut grads: Vec<Vec<f64>> = dims.iter().map(|&(c, h, w)| vec![0.0; c * h * w]).collect();
        let mut gv = vec![0.0; c];
        for &(cell, view, u, v) in &taps {
            let (_, h, w) = dims[view];
            for ch in 0..c {
                gv[ch] = gout[ch * n_cells + cell];
            }
            splat_at(&mut grads[view], h, w, u, v, &gv, inv_count[cell]);
        }
        grads
    }))
}

/// Plain-tensor form of [`volumetric_sample_var`] with per-view scales
/// derived from the rig's image sizes.
pub fn volumetric_sample(features: &[Tensor], rig: &CameraRig, grid: &ProjectedGrid) -> Result<Tensor> {
    if features.len() != rig.n_views() {
        return Err(Error::Shape(format!(
            "{} feature maps for a {}-view rig",
            features.len(),
            rig.n_views()
        )));
    }
    let scales = feature_scales(rig, features)?;
    let mut g = Graph::no_grad();
    let vars: Vec<Var> = features.iter().map(|f| g.constant(f.clone())).collect();
    let out = volumetric_sample_var(&mut g, &vars, &scales, grid)?;
    Ok(g.value(out).clone())
}

/// Image-to-feature pixel scale per view.
pub fn feature_scales(rig: &CameraRig, features: &[Tensor]) -> Result<Vec<(f64, f64)>> {
    rig.cameras()
        .iter()
        .zip(features)
        .map(|(cam, f)| match *f.shape() {
            [_, h, w] => Ok(cam.feature_scale(w, h)),
            ref s => Err(Error::Shape(format!("feature map must be [C,H,W], got {s:?}"))),
        })
        .collect()
}
