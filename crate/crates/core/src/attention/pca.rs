//! Projective cross-attention: 3-D sampling offsets around each query center,
//! projected into every camera and averaged over the views that see them.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::CameraRig;
use crate::numerics::{Graph, LinearMap, ParamStore, Tensor, Var};
use crate::query::QuerySet;

/// Where sampling offsets live.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OffsetSpace {
    /// Metric offsets in the ego frame, projected per view.
    Ego3d,
    /// Pixel offsets around the projected center, per image plane.
    Image2d,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttnConfig {
    pub channels: usize,
    pub feat_channels: usize,
    pub heads: usize,
    pub points: usize,
    pub levels: usize,
}

impl AttnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || !self.channels.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "heads ({}) must divide channels ({})",
                self.heads, self.channels
            )));
        }
        if self.points == 0 || self.levels == 0 || self.feat_channels == 0 {
            return Err(Error::Config("points, levels and feat_channels must be positive".into()));
        }
        Ok(())
    }

    pub fn samples_per_query(&self) -> usize {
        self.heads * self.levels * self.points
    }
}

/// Weights of one cross-attention block.
#[derive(Debug, Clone, Copy)]
pub struct PcaWeights {
    pub cfg: AttnConfig,
    pub space: OffsetSpace,
    /// Stacked per-head value maps, feature channels to `C`.
    pub value_proj: LinearMap,
    pub output_proj: LinearMap,
    /// Zero-initialized, so training starts from center sampling.
    pub offset_head: LinearMap,
    pub attn_head: LinearMap,
}

impl PcaWeights {
    pub fn new(store: &mut ParamStore, name: &str, cfg: AttnConfig, space: OffsetSpace, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        if space == OffsetSpace::Image2d && cfg.levels != 1 {
            return Err(Error::Config("image-plane offsets support a single level".into()));
        }
        let dims = match space {
            OffsetSpace::Ego3d => 3,
            OffsetSpace::Image2d => 2,
        };
        let c = cfg.channels;
        Ok(Self {
            cfg,
            space,
            value_proj: LinearMap::new(store, &format!("{name}.value"), cfg.feat_channels, c, true, rng),
            output_proj: LinearMap::new(store, &format!("{name}.output"), c, c, true, rng),
            offset_head: LinearMap::zeros(store, &format!("{name}.offset"), c, cfg.samples_per_query() * dims, true),
            attn_head: LinearMap::new(store, &format!("{name}.attn"), c, cfg.samples_per_query(), true, rng),
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct PcaOutput {
    /// `[N, C]`.
    pub output: Var,
    /// Normalized weights `[N, H·L·S]`, columns ordered `(head, level, point)`.
    pub attention: Var,
}

/// Softmax-normalized attention weights per (query, head).
pub(super) fn attention_weights(g: &mut Graph, qin: Var, w: &PcaWeights) -> Var {
    let n = g.value(qin).numel() / w.cfg.channels;
    let per_head = w.cfg.levels * w.cfg.points;
    let logits = w.attn_head.forward(g, qin);
    let grouped = g.reshape(logits, &[n * w.cfg.heads, per_head]);
    let a = g.softmax(grouped);
    g.reshape(a, &[n, w.cfg.samples_per_query()])
}

/// Value-projects averaged samples; rows with no valid view become zero.
pub(super) fn project_values(g: &mut Graph, avg: Var, has_view: &[bool], w: &PcaWeights) -> Var {
    let v = w.value_proj.forward(g, avg);
    if has_view.iter().all(|&b| b) {
        v
    } else {
        g.scale_rows(v, has_view.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect())
    }
}

/// Averages per-view samples `[P, Cf]` over each row's valid views.
pub(super) fn masked_view_mean(g: &mut Graph, samples: Vec<(Var, Vec<bool>)>, p: usize, cf: usize) -> (Var, Vec<bool>) {
    let mut count = vec![0usize; p];
    for (_, valid) in &samples {
        for (c, &ok) in count.iter_mut().zip(valid) {
            *c += ok as usize;
        }
    }
    let mut acc: Option<Var> = None;
    for (s, valid) in samples {
        if !valid.iter().any(|&b| b) {
            continue;
        }
        let w = valid
            .iter()
            .zip(&count)
            .map(|(&ok, &n)| if ok { 1.0 / n as f64 } else { 0.0 })
            .collect();
        let scaled = g.scale_rows(s, w);
        acc = Some(match acc {
            Some(a) => g.add(a, scaled),
            None => scaled,
        });
    }
    let acc = acc.unwrap_or_else(|| g.constant(Tensor::zeros(&[p, cf])));
    (acc, count.into_iter().map(|c| c > 0).collect())
}

fn repeat_centers(centers: &[[f64; 3]], times: usize) -> Tensor {
    let data = centers
        .iter()
        .flat_map(|c| std::iter::repeat_n(*c, times).flatten())
        .collect();
    Tensor::new(&[centers.len() * times, 3], data).expect("center rows")
}

/// Projective cross-attention of `queries` against multi-view features.
///
/// `features[level][view]` are `[Cf, Hf, Wf]` maps. Each query predicts
/// `H·L·S` metric offsets around its center; every offset point is projected
/// into all views, sampled bilinearly, averaged over the views where it is
/// valid, value-projected, and combined with per-head softmax weights.
pub fn pca_forward(
    g: &mut Graph,
    queries: &QuerySet,
    features: &[Vec<Var>],
    rig: &CameraRig,
    w: &PcaWeights,
) -> Result<PcaOutput> {
    let cfg = w.cfg;
    if w.space != OffsetSpace::Ego3d {
        return Err(Error::Config("pca_forward needs ego-frame offsets".into()));
    }
    check_features(g, features, rig, &cfg)?;
    let n = queries.len();
    let c = cfg.channels;
    if n == 0 {
        let empty = g.constant(Tensor::zeros(&[0, c]));
        let attention = g.constant(Tensor::zeros(&[0, cfg.samples_per_query()]));
        return Ok(PcaOutput { output: empty, attention });
    }
    let qin = g.add(queries.features, queries.pos_enc);
    let attention = attention_weights(g, qin, w);
    let offsets = w.offset_head.forward(g, qin);
    g.value(offsets).ensure_finite("sampling offsets")?;
    let hs = cfg.heads * cfg.points;
    let p = n * hs;
    let base = g.constant(repeat_centers(&queries.centers, hs));
    let mut values = Vec::with_capacity(cfg.levels);
    for (l, views) in features.iter().enumerate() {
        let off_l = g.slice_cols(offsets, l * hs * 3, hs * 3);
        let off_l = g.reshape(off_l, &[p, 3]);
        let pts = g.add(base, off_l);
        let mut samples = Vec::with_capacity(views.len());
        for (cam, &map) in rig.cameras().iter().zip(views) {
            let (hf, wf) = (g.shape(map)[1], g.shape(map)[2]);
            let (uv, valid) = g.project_points(pts, cam, cam.feature_scale(wf, hf));
            if !valid.iter().any(|&b| b) {
                continue;
            }
            let smp = g.bilinear_sample(map, uv)?;
            samples.push((smp, valid));
        }
        let (avg, has_view) = masked_view_mean(g, samples, p, cfg.feat_channels);
        values.push(project_values(g, avg, &has_view, w));
    }
    let v = if values.len() == 1 { values[0] } else { g.concat_rows(&values) };
    let heads = g.head_weighted_sum(attention, v, cfg.heads, cfg.levels, cfg.points);
    let output = w.output_proj.forward(g, heads);
    Ok(PcaOutput { output, attention })
}

pub(super) fn check_features(g: &Graph, features: &[Vec<Var>], rig: &CameraRig, cfg: &AttnConfig) -> Result<()> {
    if features.len() != cfg.levels {
        return Err(Error::Shape(format!("expected {} feature levels, got {}", cfg.levels, features.len())));
    }
    for views in features {
        if views.len() != rig.n_views() {
            return Err(Error::Shape(format!("{} feature maps for {} views", views.len(), rig.n_views())));
        }
        for &m in views {
            match g.shape(m) {
                &[cf, _, _] if cf == cfg.feat_channels => {}
                s => {
                    return Err(Error::Shape(format!(
                        "feature map {s:?} does not have {} channels",
                        cfg.feat_channels
                    )))
                }
            }
        }
    }
    Ok(())
}
