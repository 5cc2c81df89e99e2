use super::loss::{detection_loss, LossReport};
use super::model::{Detector, FrameInput, PastContext};
use super::optim::AdamW;
use crate::boxes::Box3D;
use crate::error::{Error, Result};
use crate::geometry::{CameraRig, EgoPose};
use crate::numerics::Tensor;

/// A rendered frame with its ground truth in the frame's ego coordinates.
#[derive(Debug, Clone)]
pub struct FrameData {
    pub features: Vec<Tensor>,
    pub rig: CameraRig,
    pub pose: EgoPose,
    pub gt: Vec<Box3D>,
}

impl FrameData {
    pub fn input(&self) -> FrameInput<'_> {
        FrameInput {
            features: &self.features,
            rig: &self.rig,
            pose: &self.pose,
        }
    }
}

/// Current frame plus an optional earlier frame of the same sequence.
#[derive(Debug, Clone)]
pub struct TrainSample {
    pub current: FrameData,
    pub past: Option<FrameData>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub step: usize,
    /// Mean loss over the batch.
    pub loss: f64,
    pub grad_norm: f64,
    /// Loss components summed over the batch.
    pub components: LossReport,
    pub used_past: usize,
}

/// One optimizer step over `batch`. Past frames are run first without
/// gradient tracking; their final queries and encoded maps feed the
/// current frame's forward pass.
pub fn train_step(model: &mut Detector, opt: &mut AdamW, batch: &[TrainSample], step: usize) -> Result<StepReport> {
    if batch.is_empty() {
        return Err(Error::Empty("training batch"));
    }
    let scale = 1.0 / batch.len() as f64;
    let supervise_velocity = model.cfg.temporal.enabled;
    let mut loss = 0.0;
    let mut components = LossReport::default();
    let mut used_past = 0;
    model.store.zero_grads();
    for sample in batch {
        let past_inf = match &sample.past {
            Some(p) if model.cfg.uses_past() => Some((model.infer(&p.input(), None)?, p)),
            _ => None,
        };
        let ctx = past_inf.as_ref().map(|(inf, p)| PastContext {
            queries: &inf.queries,
            features: &inf.features,
            rig: &p.rig,
            pose: &p.pose,
        });
        let mut g = model.graph(true);
        let out = model.forward(&mut g, &sample.current.input(), ctx.as_ref()).map_err(|e| diverged(e, step))?;
        used_past += usize::from(out.used_past);
        let (l, report) = detection_loss(&mut g, &out, &sample.current.gt, &model.cfg, supervise_velocity)
            .map_err(|e| diverged(e, step))?;
        if !report.total.is_finite() {
            return Err(Error::Diverged { step, loss: report.total });
        }
        loss += report.total * scale;
        add_report(&mut components, &report);
        let l = g.scale(l, scale);
        let grads = g.backward(l);
        model.store.accumulate(&grads);
    }
    let grad_norm = opt.step(&mut model.store);
    model.store.zero_grads();
    if !grad_norm.is_finite() {
        return Err(Error::Diverged { step, loss: grad_norm });
    }
    Ok(StepReport {
        step,
        loss,
        grad_norm,
        components,
        used_past,
    })
}

fn diverged(e: Error, step: usize) -> Error {
    match e {
        Error::NonFinite(_) => Error::Diverged { step, loss: f64::NAN },
        e => e,
    }
}

fn add_report(acc: &mut LossReport, r: &LossReport) {
    acc.total += r.total;
    acc.cls += r.cls;
    acc.reg += r.reg;
    acc.velocity += r.velocity;
    acc.heatmap += r.heatmap;
    acc.matched += r.matched;
    if acc.per_layer.len() < r.per_layer.len() {
        acc.per_layer.resize(r.per_layer.len(), 0.0);
    }
    for (a, b) in acc.per_layer.iter_mut().zip(&r.per_layer) {
        *a += b;
    }
}
