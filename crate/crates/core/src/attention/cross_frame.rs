//! Cross-frame projective attention: the same queries attend to current and
//! past features, with centers carried into the past ego frame.

use super::pca::{pca_forward, PcaWeights};
use crate::error::Result;
use crate::geometry::{align_center_to_past, CameraRig, EgoPose};
use crate::numerics::{Graph, Var};
use crate::query::QuerySet;

/// Cached features of an earlier frame.
#[derive(Debug, Clone, Copy)]
pub struct PastFrame<'a> {
    /// `[level][view]` feature maps.
    pub features: &'a [Vec<Var>],
    pub rig: &'a CameraRig,
    pub pose: &'a EgoPose,
    /// When false, current-frame centers are reused verbatim in the past frame.
    pub align: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct CrossFrameOutput {
    pub output: Var,
    /// False when no past frame was supplied and the single-frame path ran.
    pub used_past: bool,
}

/// Averages projective attention over the current frame and, when present,
/// the past frame. Weights, offsets and attention logits are shared.
pub fn pca_cross_frame(
    g: &mut Graph,
    queries: &QuerySet,
    features: &[Vec<Var>],
    rig: &CameraRig,
    pose_now: &EgoPose,
    past: Option<PastFrame<'_>>,
    w: &PcaWeights,
) -> Result<CrossFrameOutput> {
    let now = pca_forward(g, queries, features, rig, w)?;
    let Some(past) = past else {
        return Ok(CrossFrameOutput {
            output: now.output,
            used_past: false,
        });
    };
    let mut shifted = queries.clone();
    if past.align {
        for c in &mut shifted.centers {
            *c = align_center_to_past(*c, pose_now, past.pose);
        }
    }
    let before = pca_forward(g, &shifted, past.features, past.rig, w)?;
    let sum = g.add(now.output, before.output);
    Ok(CrossFrameOutput {
        output: g.scale(sum, 0.5),
        used_past: true,
    })
}
