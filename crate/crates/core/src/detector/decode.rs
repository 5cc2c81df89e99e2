//! Box parametrization of the regression head.

use super::model::best_class;
use crate::bev_init::BevGridSpec;
use crate::boxes::Box3D;
use crate::numerics::Tensor;

/// Regression outputs per query: center delta (3), log size (3), yaw as
/// (sin, cos − 1), velocity (2).
pub const REG_DIMS: usize = 10;

/// `center + trust · tanh(delta)`, clamped to the perception range.
pub fn refine_centers(reg: &Tensor, centers: &[[f64; 3]], trust: f64, range: &BevGridSpec) -> Vec<[f64; 3]> {
    centers
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let r = reg.row(i);
            range.clamp_point([
                c[0] + trust * r[0].tanh(),
                c[1] + trust * r[1].tanh(),
                c[2] + trust * r[2].tanh(),
            ])
        })
        .collect()
}

/// Decodes one box per row of `cls_logits [N, K]` and `reg [N, 10]`.
pub fn decode_boxes(cls_logits: &Tensor, reg: &Tensor, centers: &[[f64; 3]], trust: f64, range: &BevGridSpec) -> Vec<Box3D> {
    let refined = refine_centers(reg, centers, trust, range);
    refined
        .into_iter()
        .enumerate()
        .map(|(i, center)| {
            let r = reg.row(i);
            let (class_id, score) = best_class(cls_logits.row(i));
            let size = [r[3].exp(), r[4].exp(), r[5].exp()];
            let mut b = Box3D::new(center, size, r[6].atan2(1.0 + r[7]), class_id);
            b.velocity = [r[8], r[9]];
            b.score = score;
            b
        })
        .collect()
}
