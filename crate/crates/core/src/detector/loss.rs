use super::config::DetectorConfig;
use super::decode::refine_centers;
use super::hungarian::hungarian_match;
use super::model::ForwardOutput;
use crate::bev_init::draw_gt_heatmap;
use crate::boxes::Box3D;
use crate::error::Result;
use crate::numerics::{Graph, Tensor, Var};

/// Scalar loss terms, summed over decoder layers.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LossReport {
    pub total: f64,
    pub cls: f64,
    pub reg: f64,
    pub velocity: f64,
    pub heatmap: f64,
    /// Weighted classification plus regression per layer.
    pub per_layer: Vec<f64>,
    pub matched: usize,
}

/// `log(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

impl Graph {
    /// Sigmoid focal loss summed over all entries of `logits` against binary
    /// `targets`, divided by `norm`.
    pub fn sigmoid_focal_loss(&mut self, logits: Var, targets: &Tensor, alpha: f64, gamma: f64, norm: f64) -> Var {
        assert_eq!(self.shape(logits), targets.shape(), "focal loss shapes");
        let x = self.data(logits).to_vec();
        let t = targets.data().to_vec();
        let mut total = 0.0;
        let mut grad = vec![0.0; x.len()];
        for i in 0..x.len() {
            let p = crate::numerics::sigmoid(x[i]);
            if t[i] > 0.5 {
                let log_p = -softplus(-x[i]);
                let q = (1.0 - p).powf(gamma);
                total -= alpha * q * log_p;
                grad[i] = alpha * q * (gamma * p * log_p - (1.0 - p));
            } else {
                let log_q = -softplus(x[i]);
                let pg = p.powf(gamma);
                total -= (1.0 - alpha) * pg * log_q;
                grad[i] = (1.0 - alpha) * pg * (p - gamma * (1.0 - p) * log_q);
            }
        }
        let out = Tensor::scalar(total / norm);
        self.push_op(out, &[logits], move |g| vec![grad.iter().map(|d| d * g[0] / norm).collect()])
    }

    /// `Σ |a − target|`.
    pub fn l1_to(&mut self, a: Var, target: Tensor) -> Var {
        let t = self.constant(target);
        let d = self.sub(a, t);
        let d = self.abs(d);
        self.sum(d)
    }
}

/// Deep-supervised set loss: per layer, Hungarian matching followed by
/// focal classification and L1 regression on matched pairs, plus the
/// heatmap focal loss. Velocity is only supervised when requested.
pub fn detection_loss(
    g: &mut Graph,
    out: &ForwardOutput,
    gt: &[Box3D],
    cfg: &DetectorConfig,
    supervise_velocity: bool,
) -> Result<(Var, LossReport)> {
    let w = cfg.loss;
    let norm = gt.len().max(1) as f64;
    let mut report = LossReport::default();
    let mut terms: Vec<Var> = Vec::new();
    for layer in &out.layers {
        let logits = g.value(layer.cls_logits).clone();
        let reg = g.value(layer.reg).clone();
        logits.ensure_finite("class logits")?;
        reg.ensure_finite("box regression")?;
        let k = logits.shape()[1];
        let n = logits.shape()[0] - out.padded;
        let (logits, cls_var) = if out.padded > 0 {
            let kept = Tensor::new(&[n, k], logits.data()[..n * k].to_vec())?;
            (kept, g.gather_rows(layer.cls_logits, (0..n).collect()))
        } else {
            (logits, layer.cls_logits)
        };
        let decoded = refine_centers(&reg, &layer.centers[..n], cfg.trust_region, &cfg.range);
        let pairs = hungarian_match(&logits, &decoded, gt, &w);
        report.matched += pairs.len();

        let mut targets = Tensor::zeros(&[n, k]);
        for &(i, j) in &pairs {
            targets.set(&[i, gt[j].class_id], 1.0);
        }
        let cls = g.sigmoid_focal_loss(cls_var, &targets, w.focal_alpha, w.focal_gamma, norm);
        let cls_v = g.value(cls).data()[0];
        let mut layer_terms = vec![g.scale(cls, w.cls)];
        let mut layer_total = w.cls * cls_v;
        report.cls += cls_v;

        if !pairs.is_empty() {
            let m = pairs.len();
            let rows: Vec<usize> = pairs.iter().map(|p| p.0).collect();
            let r = g.gather_rows(layer.reg, rows.clone());
            // center = reference + trust · tanh(delta)
            let delta = g.slice_cols(r, 0, 3);
            let delta = g.tanh(delta);
            let delta = g.scale(delta, cfg.trust_region);
            let base: Vec<f64> = rows.iter().flat_map(|&i| layer.centers[i]).collect();
            let base = g.constant(Tensor::new(&[m, 3], base)?);
            let center = g.add(base, delta);
            let logsize = g.slice_cols(r, 3, 3);
            let yaw = g.slice_cols(r, 6, 2);
            let mut tc = Vec::with_capacity(m * 3);
            let mut ts = Vec::with_capacity(m * 3);
            let mut ty = Vec::with_capacity(m * 2);
            let mut tv = Vec::with_capacity(m * 2);
            for &(_, j) in &pairs {
                let b = &gt[j];
                tc.extend(b.center);
                ts.extend(b.size.map(f64::ln));
                // the head predicts cos − 1
                ty.extend([b.yaw.sin(), b.yaw.cos() - 1.0]);
                tv.extend(b.velocity);
            }
            let lc = g.l1_to(center, Tensor::new(&[m, 3], tc)?);
            let ls = g.l1_to(logsize, Tensor::new(&[m, 3], ts)?);
            let ly = g.l1_to(yaw, Tensor::new(&[m, 2], ty)?);
            let reg_sum = g.add(lc, ls);
            let reg_sum = g.add(reg_sum, ly);
            let reg_term = g.scale(reg_sum, w.reg / norm);
            let reg_v = g.value(reg_sum).data()[0] / norm;
            report.reg += reg_v;
            layer_total += w.reg * reg_v;
            layer_terms.push(reg_term);
            if supervise_velocity {
                let vel = g.slice_cols(r, 8, 2);
                let lv = g.l1_to(vel, Tensor::new(&[m, 2], tv)?);
                let v_v = g.value(lv).data()[0] / norm;
                report.velocity += v_v;
                layer_total += w.reg * w.velocity * v_v;
                layer_terms.push(g.scale(lv, w.reg * w.velocity / norm));
            }
        }
        report.per_layer.push(layer_total);
        terms.extend(layer_terms);
    }
    let gt_map = draw_gt_heatmap(gt, &cfg.range, cfg.heatmap_radius);
    let p = g.sigmoid(out.heatmap_logits);
    let hm = g.gaussian_focal_loss(p, &gt_map.values)?;
    report.heatmap = g.value(hm).data()[0];
    terms.push(g.scale(hm, w.heatmap));
    let mut total = terms[0];
    for &t in &terms[1..] {
        total = g.add(total, t);
    }
    report.total = g.value(total).data()[0];
    Ok((total, report))
}
