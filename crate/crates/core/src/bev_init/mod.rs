//! Heatmap-based query initialization: volumetric sampling of multi-view
//! features onto a 3D grid, compression to BEV, heatmap prediction and its
//! focal loss, peak selection, and query position/feature initialization.

mod grid;
mod heatmap;
mod init;
mod net;

pub use grid::{
    build_projected_grid, feature_scales, volumetric_sample, volumetric_sample_var, BevGridSpec, ProjectedGrid,
};
pub use heatmap::{
    draw_gt_heatmap, gaussian_focal_loss, gaussian_sigma, nms_topk, Heatmap, Peak, FOCAL_ALPHA, FOCAL_BETA,
};
pub use init::{init_queries, FeatureSource};
pub use net::{coord_planes, BevEncoder, BevEncoderConfig};
