use serde::{Deserialize, Serialize};

use crate::attention::{AttnConfig, OffsetSpace};
use crate::bev_init::BevGridSpec;
use crate::error::{Error, Result};

/// Which cross-attention the decoder uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttentionKind {
    /// Metric 3-D offsets projected into every view.
    Pca,
    /// Pixel offsets around the projected center.
    Sca2d,
}

impl AttentionKind {
    pub fn offset_space(self) -> OffsetSpace {
        match self {
            AttentionKind::Pca => OffsetSpace::Ego3d,
            AttentionKind::Sca2d => OffsetSpace::Image2d,
        }
    }
}

/// How initial query positions and features are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QueryInit {
    /// Heatmap peaks give positions; `F_BEV` gives features.
    Heatmap,
    /// Heatmap peaks give positions; features are learned embeddings.
    HeatmapPosition,
    /// Fixed seeded random positions with learned embeddings.
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TemporalConfig {
    pub enabled: bool,
    /// Past queries join self-attention keys and values.
    pub query_aggregation: bool,
    /// Cross-attention also reads past image features.
    pub feature_aggregation: bool,
    /// Compensate ego motion when using past queries and features.
    pub align: bool,
    /// Preferred gap between the current and past frame at inference, seconds.
    pub interval: f64,
    /// Training draws the past frame uniformly from this window, seconds.
    pub train_window: f64,
    pub memory_capacity: usize,
    pub memory_horizon: f64,
}

impl Default for TemporalConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            query_aggregation: true,
            feature_aggregation: true,
            align: true,
            interval: 1.5,
            train_window: 2.0,
            memory_capacity: 8,
            memory_horizon: 2.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    /// Matching cost on `1 − p(class)`.
    pub match_cls: f64,
    /// Matching cost on the BEV L1 center distance.
    pub match_center: f64,
    pub cls: f64,
    pub reg: f64,
    pub velocity: f64,
    pub heatmap: f64,
    pub focal_alpha: f64,
    pub focal_gamma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            match_cls: 2.0,
            match_center: 0.25,
            cls: 2.0,
            reg: 0.25,
            velocity: 1.0,
            heatmap: 1.0,
            focal_alpha: 0.25,
            focal_gamma: 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub range: BevGridSpec,
    pub n_classes: usize,
    /// Channels of the rendered input maps.
    pub input_channels: usize,
    /// Hidden and output width of the optional image encoder; 0 disables it.
    pub encoder_channels: usize,
    pub channels: usize,
    pub heads: usize,
    pub points: usize,
    pub layers: usize,
    pub ffn_hidden: usize,
    pub n_query: usize,
    pub heatmap_hidden: usize,
    pub heatmap_convs: usize,
    pub coord_channels: bool,
    /// Sinusoidal bands per coordinate ahead of the positional projection;
    /// 0 projects the normalized center alone.
    #[serde(default)]
    pub position_bands: usize,
    /// Gaussian radius of ground-truth splats, in cells.
    pub heatmap_radius: usize,
    /// NMS window, in cells (odd).
    pub nms_window: usize,
    /// Bound on per-layer center refinement, meters.
    pub trust_region: f64,
    pub attention: AttentionKind,
    pub query_init: QueryInit,
    pub temporal: TemporalConfig,
    pub loss: LossWeights,
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        self.range.validate()?;
        self.attn().validate()?;
        if self.layers == 0 {
            return Err(Error::Config("at least one decoder layer is required".into()));
        }
        if self.n_query == 0 || self.n_classes == 0 {
            return Err(Error::Config("n_query and n_classes must be positive".into()));
        }
        if self.nms_window.is_multiple_of(2) {
            return Err(Error::Config("nms_window must be odd".into()));
        }
        if !(self.trust_region > 0.0) {
            return Err(Error::Config("trust_region must be positive".into()));
        }
        Ok(())
    }

    /// Channels of the maps that cross-attention and the BEV branch read.
    pub fn feature_channels(&self) -> usize {
        if self.encoder_channels > 0 {
            self.encoder_channels
        } else {
            self.input_channels
        }
    }

    pub fn attn(&self) -> AttnConfig {
        AttnConfig {
            channels: self.channels,
            feat_channels: self.feature_channels(),
            heads: self.heads,
            points: self.points,
            levels: 1,
        }
    }

    /// Small model for the 4-camera synthetic rig.
    pub fn desk() -> Self {
        Self {
            range: BevGridSpec {
                x_range: [-16.0, 16.0],
                y_range: [-16.0, 16.0],
                z_range: [-1.0, 3.0],
                resolution: [4, 32, 32],
            },
            n_classes: 3,
            input_channels: crate::synth::feature_channels(3),
            encoder_channels: 0,
            channels: 32,
            heads: 4,
            points: 4,
            layers: 2,
            ffn_hidden: 64,
            n_query: 25,
            heatmap_hidden: 32,
            heatmap_convs: 2,
            coord_channels: true,
            position_bands: 4,
            heatmap_radius: 2,
            nms_window: 3,
            trust_region: 4.0,
            attention: AttentionKind::Pca,
            query_init: QueryInit::Heatmap,
            temporal: TemporalConfig::default(),
            loss: LossWeights::default(),
        }
    }

    /// Full-size model: 144×144×8 grid over ±51.2 m, 900 queries, 8 heads.
    pub fn paper_scale() -> Self {
        Self {
            range: BevGridSpec {
                x_range: [-51.2, 51.2],
                y_range: [-51.2, 51.2],
                z_range: [-5.0, 3.0],
                resolution: [8, 144, 144],
            },
            n_classes: 10,
            input_channels: crate::synth::feature_channels(10),
            encoder_channels: 256,
            channels: 256,
            heads: 8,
            points: 8,
            layers: 6,
            ffn_hidden: 512,
            n_query: 900,
            heatmap_hidden: 256,
            heatmap_convs: 2,
            coord_channels: true,
            position_bands: 0,
            heatmap_radius: 2,
            nms_window: 3,
            trust_region: 4.0,
            attention: AttentionKind::Pca,
            query_init: QueryInit::Heatmap,
            temporal: TemporalConfig {
                enabled: true,
                ..TemporalConfig::default()
            },
            loss: LossWeights::default(),
        }
    }

    pub fn uses_past(&self) -> bool {
        self.temporal.enabled && (self.temporal.query_aggregation || self.temporal.feature_aggregation)
    }
}
