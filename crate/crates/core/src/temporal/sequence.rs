use super::bank::{FrameRecord, MemoryBank};
use crate::boxes::Box3D;
use crate::detector::{Detector, FrameInput, PastContext};
use crate::error::Result;
use crate::synth::FrameRenderer;

/// Detections for one frame of a sequence.
#[derive(Debug, Clone)]
pub struct FrameResult {
    pub timestamp: f64,
    pub boxes: Vec<Box3D>,
    pub gt: Vec<Box3D>,
    /// Timestamp of the cached frame that was fused, if any.
    pub past_timestamp: Option<f64>,
    /// Initial query reference centers.
    pub query_centers: Vec<[f64; 3]>,
}

/// Runs the model over every frame of the renderer's scene in time order.
/// Each frame is rendered and encoded once; later frames read it back from
/// the memory bank.
pub fn infer_sequence(model: &Detector, renderer: &FrameRenderer<'_>) -> Result<Vec<FrameResult>> {
    let scene = renderer.scene();
    let rig = scene.rig.build()?;
    let tc = model.cfg.temporal;
    let mut bank = MemoryBank::new(tc.memory_capacity, tc.memory_horizon)?;
    let mut out = Vec::with_capacity(scene.n_frames());
    for t in scene.timestamps() {
        let features = renderer.render(t)?;
        let pose = scene.ego_pose(t);
        let past = if model.cfg.uses_past() {
            bank.fetch(t, tc.interval)
        } else {
            None
        };
        let ctx = past.map(|r| PastContext {
            queries: &r.queries,
            features: &r.features,
            rig: &r.rig,
            pose: &r.ego_pose,
        });
        let inf = model.infer(
            &FrameInput {
                features: &features,
                rig: &rig,
                pose: &pose,
            },
            ctx.as_ref(),
        )?;
        let past_timestamp = inf.used_past.then(|| past.map(|r| r.timestamp)).flatten();
        out.push(FrameResult {
            timestamp: t,
            boxes: inf.boxes,
            gt: scene.ground_truth(t),
            past_timestamp,
            query_centers: inf.initial_centers,
        });
        bank.push(FrameRecord {
            timestamp: t,
            queries: inf.queries,
            features: inf.features,
            ego_pose: pose,
            rig: rig.clone(),
        })?;
    }
    Ok(out)
}
