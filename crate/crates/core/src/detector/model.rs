use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{AttentionKind, DetectorConfig, QueryInit};
use super::decode::{decode_boxes, refine_centers, REG_DIMS};
use crate::attention::{
    pca_cross_frame, pca_forward, rectify_past_queries, sca2d_forward, temporal_self_attention, MhaWeights, PastFrame,
    PcaWeights, TemporalQueries,
};
use crate::bev_init::{
    build_projected_grid, init_queries, nms_topk, volumetric_sample_var, BevEncoder,
    BevEncoderConfig, FeatureSource, Heatmap, Peak,
};
use crate::boxes::Box3D;
use crate::error::{Error, Result};
use crate::geometry::{CameraRig, EgoPose};
use crate::numerics::{sigmoid, Graph, LinearMap, ParamId, ParamStore, Tensor, Var};
use crate::query::{PositionEncoder, QuerySet, QueryState};
use crate::synth::FeatureEncoder;

const LN_EPS: f64 = 1e-5;
const CLS_PRIOR_BIAS: f64 = -2.19;

/// One decoder layer: temporal self-attention, cross-attention, feed-forward,
/// each followed by a residual connection and layer norm, plus the
/// per-layer prediction heads.
#[derive(Debug, Clone)]
pub struct LayerWeights {
    pub tsa: MhaWeights,
    pub cross: PcaWeights,
    pub norms: [(ParamId, ParamId); 3],
    pub ffn1: LinearMap,
    pub ffn2: LinearMap,
    pub cls: LinearMap,
    pub reg1: LinearMap,
    /// Zero-initialized so the first forward pass leaves centers unchanged.
    pub reg2: LinearMap,
}

/// Model weights and their layout.
#[derive(Debug, Clone)]
pub struct Detector {
    pub cfg: DetectorConfig,
    /// Initialization seed; also fixes the random reference centers.
    pub seed: u64,
    pub store: ParamStore,
    pub encoder: Option<FeatureEncoder>,
    pub bev: BevEncoder,
    pub pos: PositionEncoder,
    pub query_embed: ParamId,
    /// Learned time-gap encoding added to past queries' positions.
    pub lag: ParamId,
    pub layers: Vec<LayerWeights>,
    /// Fixed reference centers for random query initialization.
    pub random_centers: Vec<[f64; 3]>,
}

/// One camera frame as the model sees it.
#[derive(Debug, Clone, Copy)]
pub struct FrameInput<'a> {
    /// Per-view rendered maps `[C_in, Hf, Wf]`.
    pub features: &'a [Tensor],
    pub rig: &'a CameraRig,
    pub pose: &'a EgoPose,
}

/// What a previous frame left behind: final-layer queries and encoded maps.
#[derive(Debug, Clone, Copy)]
pub struct PastContext<'a> {
    pub queries: &'a QueryState,
    pub features: &'a [Tensor],
    pub rig: &'a CameraRig,
    pub pose: &'a EgoPose,
}

#[derive(Debug, Clone)]
pub struct LayerPrediction {
    /// `[N, n_classes]`.
    pub cls_logits: Var,
    /// `[N, 10]`: center delta, log size, (sin, cos − 1) of yaw, velocity.
    pub reg: Var,
    /// Reference centers the deltas apply to.
    pub centers: Vec<[f64; 3]>,
}

pub struct ForwardOutput {
    pub heatmap_logits: Var,
    pub heatmap: Heatmap,
    pub peaks: Vec<Peak>,
    pub initial_centers: Vec<[f64; 3]>,
    pub layers: Vec<LayerPrediction>,
    pub final_queries: QuerySet,
    /// Trailing query rows that repeat earlier peaks; excluded from the
    /// loss and from decoded boxes.
    pub padded: usize,
    /// Encoded per-view maps.
    pub features: Vec<Var>,
    pub used_past: bool,
}

/// Result of a gradient-free forward pass.
#[derive(Debug, Clone)]
pub struct Inference {
    /// Final-layer boxes for every non-padded query, highest score first.
    pub boxes: Vec<Box3D>,
    pub queries: QueryState,
    pub features: Vec<Tensor>,
    pub heatmap: Heatmap,
    pub peaks: Vec<Peak>,
    pub initial_centers: Vec<[f64; 3]>,
    pub used_past: bool,
}

impl Detector {
    pub fn new(cfg: DetectorConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        if cfg.attention == AttentionKind::Sca2d && cfg.temporal.enabled && cfg.temporal.feature_aggregation {
            return Err(Error::Config("image-plane attention does not support past features".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let c = cfg.channels;
        let encoder = (cfg.encoder_channels > 0).then(|| {
            FeatureEncoder::new(&mut store, "encoder", cfg.input_channels, cfg.encoder_channels, cfg.encoder_channels, &mut rng)
        });
        let bev = BevEncoder::new(
            &mut store,
            "bev",
            BevEncoderConfig {
                feat_channels: cfg.feature_channels(),
                depth: cfg.range.depth(),
                channels: c,
                hidden: cfg.heatmap_hidden,
                n_conv: cfg.heatmap_convs,
                coord_channels: cfg.coord_channels,
            },
            &mut rng,
        );
        let pos = PositionEncoder::new(&mut store, "pos", c, cfg.range, cfg.position_bands, &mut rng);
        let query_embed = store.register("query_embed", crate::numerics::uniform(&[cfg.n_query, c], 1.0, &mut rng));
        let lag = store.register("lag", Tensor::zeros(&[c]));
        let mut layers = Vec::with_capacity(cfg.layers);
        for l in 0..cfg.layers {
            let name = format!("layer{l}");
            let norm = |store: &mut ParamStore, k: usize| {
                (
                    store.register(format!("{name}.norm{k}.gamma"), Tensor::full(&[c], 1.0)),
                    store.register(format!("{name}.norm{k}.beta"), Tensor::zeros(&[c])),
                )
            };
            let tsa = MhaWeights::new(&mut store, &format!("{name}.tsa"), c, cfg.heads, &mut rng)?;
            let cross = PcaWeights::new(&mut store, &format!("{name}.cross"), cfg.attn(), cfg.attention.offset_space(), &mut rng)?;
            let norms = [norm(&mut store, 0), norm(&mut store, 1), norm(&mut store, 2)];
            let ffn1 = LinearMap::new(&mut store, &format!("{name}.ffn1"), c, cfg.ffn_hidden, true, &mut rng);
            let ffn2 = LinearMap::new(&mut store, &format!("{name}.ffn2"), cfg.ffn_hidden, c, true, &mut rng);
            let cls = LinearMap::new(&mut store, &format!("{name}.cls"), c, cfg.n_classes, true, &mut rng);
            *store.get_mut(cls.bias.expect("cls bias")) = Tensor::full(&[cfg.n_classes], CLS_PRIOR_BIAS);
            let reg1 = LinearMap::new(&mut store, &format!("{name}.reg1"), c, c, true, &mut rng);
            let reg2 = LinearMap::zeros(&mut store, &format!("{name}.reg2"), c, REG_DIMS, true);
            layers.push(LayerWeights {
                tsa,
                cross,
                norms,
                ffn1,
                ffn2,
                cls,
                reg1,
                reg2,
            });
        }
        let r = cfg.range;
        let random_centers = (0..cfg.n_query)
            .map(|_| {
                [
                    rng.random_range(r.x_range[0]..r.x_range[1]),
                    rng.random_range(r.y_range[0]..r.y_range[1]),
                    r.z_mid(),
                ]
            })
            .collect();
        Ok(Self {
            cfg,
            seed,
            store,
            encoder,
            bev,
            pos,
            query_embed,
            lag,
            layers,
            random_centers,
        })
    }

    /// A graph bound to this model's parameters.
    pub fn graph(&self, grad: bool) -> Graph {
        Graph::from_params(&self.store, grad)
    }

    fn layer_norm(&self, g: &mut Graph, x: Var, (gamma, beta): (ParamId, ParamId)) -> Var {
        let (gv, bv) = (g.param(gamma), g.param(beta));
        g.layer_norm(x, gv, bv, LN_EPS)
    }

    /// Full forward pass in `g`, which must come from [`Detector::graph`].
    /// `past` is ignored unless temporal fusion is enabled.
    pub fn forward(&self, g: &mut Graph, frame: &FrameInput<'_>, past: Option<&PastContext<'_>>) -> Result<ForwardOutput> {
        let cfg = &self.cfg;
        if frame.features.len() != frame.rig.n_views() {
            return Err(Error::Shape(format!(
                "{} feature maps for {} views",
                frame.features.len(),
                frame.rig.n_views()
            )));
        }
        let past = if cfg.uses_past() { past } else { None };
        let mut feats = Vec::with_capacity(frame.features.len());
        for f in frame.features {
            let x = g.constant(f.clone());
            feats.push(match &self.encoder {
                Some(enc) => enc.forward(g, x),
                None => x,
            });
        }

        let grid = build_projected_grid(&cfg.range, frame.rig)?;
        let scales: Vec<(f64, f64)> = frame
            .rig
            .cameras()
            .iter()
            .zip(&feats)
            .map(|(cam, &f)| {
                let s = g.shape(f);
                cam.feature_scale(s[2], s[1])
            })
            .collect();
        let fv = volumetric_sample_var(g, &feats, &scales, &grid)?;
        let fbev = self.bev.compress(g, fv);
        let heatmap_logits = self.bev.heatmap_logits(g, fbev, &cfg.range);
        let heatmap = Heatmap::from_logits(g.value(heatmap_logits).clone(), cfg.range);
        let peaks = nms_topk(&heatmap, cfg.nms_window, cfg.n_query)?;

        let z0 = cfg.range.z_mid();
        let mut qs = match cfg.query_init {
            QueryInit::Heatmap => init_queries(g, &peaks, fbev, &self.pos, z0, cfg.n_query, FeatureSource::Bev)?,
            QueryInit::HeatmapPosition => {
                init_queries(g, &peaks, fbev, &self.pos, z0, cfg.n_query, FeatureSource::Learned(self.query_embed))?
            }
            QueryInit::Random => {
                let centers = self.random_centers.clone();
                let pos_enc = self.pos.encode(g, &centers);
                QuerySet {
                    features: g.param(self.query_embed),
                    pos_enc,
                    centers,
                    padded: 0,
                }
            }
        };
        let initial_centers = qs.centers.clone();

        let past_queries: Option<TemporalQueries> = match past {
            Some(p) if cfg.temporal.query_aggregation && !p.queries.is_empty() => {
                let lag = g.param(self.lag);
                Some(rectify_past_queries(g, p.queries, frame.pose, p.pose, &self.pos, Some(lag), cfg.temporal.align))
            }
            _ => None,
        };
        let past_maps: Option<Vec<Vec<Var>>> = match past {
            Some(p) if cfg.temporal.feature_aggregation => {
                if p.features.len() != p.rig.n_views() {
                    return Err(Error::Shape("past feature maps do not match the past rig".into()));
                }
                Some(vec![p.features.iter().map(|f| g.constant(f.clone())).collect()])
            }
            _ => None,
        };
        let used_past = past_queries.is_some() || past_maps.is_some();
        let levels = vec![feats.clone()];

        let mut preds = Vec::with_capacity(self.layers.len());
        for lw in &self.layers {
            let sa = temporal_self_attention(g, &qs, past_queries.as_ref(), &lw.tsa)?;
            let x = g.add(qs.features, sa);
            let x = self.layer_norm(g, x, lw.norms[0]);
            let attending = QuerySet { features: x, ..qs.clone() };
            let cross = match (cfg.attention, &past_maps, past) {
                (AttentionKind::Pca, Some(pm), Some(p)) => {
                    let pf = PastFrame {
                        features: pm,
                        rig: p.rig,
                        pose: p.pose,
                        align: cfg.temporal.align,
                    };
                    pca_cross_frame(g, &attending, &levels, frame.rig, frame.pose, Some(pf), &lw.cross)?.output
                }
                (AttentionKind::Pca, _, _) => pca_forward(g, &attending, &levels, frame.rig, &lw.cross)?.output,
                (AttentionKind::Sca2d, _, _) => sca2d_forward(g, &attending, &feats, frame.rig, &lw.cross)?.output,
            };
            let x = g.add(x, cross);
            let x = self.layer_norm(g, x, lw.norms[1]);
            let h = lw.ffn1.forward(g, x);
            let h = g.relu(h);
            let h = lw.ffn2.forward(g, h);
            let x2 = g.add(x, h);
            let x = self.layer_norm(g, x2, lw.norms[2]);

            // heads see where the reference sits, so deltas are relative to it
            let hx = g.add(x, qs.pos_enc);
            let cls_logits = lw.cls.forward(g, hx);
            let r = lw.reg1.forward(g, hx);
            let r = g.relu(r);
            let reg = lw.reg2.forward(g, r);
            let centers = refine_centers(g.value(reg), &qs.centers, cfg.trust_region, &cfg.range);
            preds.push(LayerPrediction {
                cls_logits,
                reg,
                centers: qs.centers.clone(),
            });
            let pos_enc = self.pos.encode(g, &centers);
            qs = QuerySet {
                features: x,
                pos_enc,
                centers,
                padded: qs.padded,
            };
        }
        Ok(ForwardOutput {
            heatmap_logits,
            heatmap,
            peaks,
            initial_centers,
            layers: preds,
            padded: qs.padded,
            final_queries: qs,
            features: feats,
            used_past,
        })
    }

    /// Gradient-free forward pass returning decoded final-layer boxes.
    pub fn infer(&self, frame: &FrameInput<'_>, past: Option<&PastContext<'_>>) -> Result<Inference> {
        let mut g = self.graph(false);
        let out = self.forward(&mut g, frame, past)?;
        let last = out.layers.last().expect("at least one layer");
        let mut boxes = decode_boxes(
            g.value(last.cls_logits),
            g.value(last.reg),
            &last.centers,
            self.cfg.trust_region,
            &self.cfg.range,
        );
        boxes.truncate(boxes.len() - out.padded);
        boxes.sort_by(|a, b| b.score.total_cmp(&a.score));
        Ok(Inference {
            boxes,
            queries: QueryState::capture(&g, &out.final_queries),
            features: out.features.iter().map(|&f| g.value(f).clone()).collect(),
            heatmap: out.heatmap,
            peaks: out.peaks,
            initial_centers: out.initial_centers,
            used_past: out.used_past,
        })
    }

    /// Heatmap probabilities and selected peaks only.
    pub fn heatmap(&self, frame: &FrameInput<'_>) -> Result<(Heatmap, Vec<Peak>)> {
        let out = self.forward(&mut self.graph(false), frame, None)?;
        Ok((out.heatmap, out.peaks))
    }
}

/// Highest class probability and its index for one row of logits.
pub fn best_class(logits: &[f64]) -> (usize, f64) {
    let (k, &x) = logits
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
        .expect("at least one class");
    (k, sigmoid(x))
}
