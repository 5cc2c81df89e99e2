//! Image-plane offset baseline: only the query center is projected, and
//! sampling offsets are predicted in pixels on each view that sees it.

use super::pca::{attention_weights, check_features, masked_view_mean, project_values, OffsetSpace, PcaOutput, PcaWeights};
use crate::error::{Error, Result};
use crate::geometry::CameraRig;
use crate::numerics::{Graph, Tensor, Var};
use crate::query::QuerySet;

/// Single-level baseline cross-attention. Views where the center itself does
/// not project contribute nothing, whatever the offsets.
pub fn sca2d_forward(g: &mut Graph, queries: &QuerySet, features: &[Var], rig: &CameraRig, w: &PcaWeights) -> Result<PcaOutput> {
    let cfg = w.cfg;
    if w.space != OffsetSpace::Image2d {
        return Err(Error::Config("sca2d_forward needs image-plane offsets".into()));
    }
    check_features(g, std::slice::from_ref(&features.to_vec()), rig, &cfg)?;
    let n = queries.len();
    let hs = cfg.heads * cfg.points;
    if n == 0 {
        let output = g.constant(Tensor::zeros(&[0, cfg.channels]));
        let attention = g.constant(Tensor::zeros(&[0, hs]));
        return Ok(PcaOutput { output, attention });
    }
    let p = n * hs;
    let qin = g.add(queries.features, queries.pos_enc);
    let attention = attention_weights(g, qin, w);
    let offsets = w.offset_head.forward(g, qin);
    g.value(offsets).ensure_finite("sampling offsets")?;
    let offsets = g.reshape(offsets, &[p, 2]);
    let mut samples = Vec::new();
    for (cam, &map) in rig.cameras().iter().zip(features) {
        let (hf, wf) = (g.shape(map)[1], g.shape(map)[2]);
        let (su, sv) = cam.feature_scale(wf, hf);
        let mut base = vec![0.0; p * 2];
        let mut valid = vec![false; p];
        for (i, c) in queries.centers.iter().enumerate() {
            let pr = cam.project(*c);
            if !pr.valid {
                continue;
            }
            for k in 0..hs {
                let r = i * hs + k;
                base[2 * r] = pr.uv[0] * su;
                base[2 * r + 1] = pr.uv[1] * sv;
                valid[r] = true;
            }
        }
        if !valid.iter().any(|&b| b) {
            continue;
        }
        let base = g.constant(Tensor::new(&[p, 2], base)?);
        let uv = g.add(base, offsets);
        let smp = g.bilinear_sample(map, uv)?;
        samples.push((smp, valid));
    }
    let (avg, has_view) = masked_view_mean(g, samples, p, cfg.feat_channels);
    let v = project_values(g, avg, &has_view, w);
    let heads = g.head_weighted_sum(attention, v, cfg.heads, 1, cfg.points);
    let output = w.output_proj.forward(g, heads);
    Ok(PcaOutput { output, attention })
}
