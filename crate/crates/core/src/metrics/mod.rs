//! Center-distance detection metrics on the ground plane.

use serde::{Deserialize, Serialize};

use crate::bev_init::BevGridSpec;
use crate::boxes::Box3D;
use crate::detector::hungarian;
use crate::error::{Error, Result};

/// Match thresholds on BEV center distance, meters.
pub const THRESHOLDS: [f64; 4] = [0.5, 1.0, 2.0, 4.0];
/// Threshold whose true positives define translation and velocity errors.
pub const TP_THRESHOLD: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// `(threshold, AP)` in threshold order; AP is averaged over the classes
    /// present in the ground truth.
    pub ap_at_thresholds: Vec<(f64, f64)>,
    /// Mean BEV center distance of true positives at [`TP_THRESHOLD`]; 1
    /// when there are none.
    pub mean_ate: f64,
    /// Mean velocity error norm of the same true positives; 1 when there
    /// are none.
    pub mean_ave: f64,
    /// Fraction of ground truth matched at [`TP_THRESHOLD`].
    pub recall: f64,
    pub n_gt: usize,
    pub n_pred: usize,
    pub true_positives: usize,
}

impl EvalReport {
    pub fn ap(&self, threshold: f64) -> Option<f64> {
        self.ap_at_thresholds
            .iter()
            .find(|(t, _)| (t - threshold).abs() < 1e-12)
            .map(|&(_, a)| a)
    }

    pub fn mean_ap(&self) -> f64 {
        if self.ap_at_thresholds.is_empty() {
            return 0.0;
        }
        self.ap_at_thresholds.iter().map(|p| p.1).sum::<f64>() / self.ap_at_thresholds.len() as f64
    }
}

pub fn bev_distance(a: &Box3D, b: &Box3D) -> f64 {
    (a.center[0] - b.center[0]).hypot(a.center[1] - b.center[1])
}

/// One greedy matching pass: `(frame, pred, gt)` true positives plus the
/// score-ordered TP flags of every prediction of `class`.
struct ClassMatch {
    flags: Vec<bool>,
    tps: Vec<(usize, usize, usize)>,
    n_gt: usize,
}

fn match_class(preds: &[Vec<Box3D>], gts: &[Vec<Box3D>], class: usize, threshold: f64) -> ClassMatch {
    let mut order: Vec<(usize, usize)> = preds
        .iter()
        .enumerate()
        .flat_map(|(f, ps)| ps.iter().enumerate().filter(|(_, p)| p.class_id == class).map(move |(i, _)| (f, i)))
        .collect();
    // stable: ties keep frame and index order
    order.sort_by(|a, b| preds[b.0][b.1].score.total_cmp(&preds[a.0][a.1].score));
    let mut taken: Vec<Vec<bool>> = gts.iter().map(|g| vec![false; g.len()]).collect();
    let mut flags = Vec::with_capacity(order.len());
    let mut tps = Vec::new();
    for (f, i) in order {
        let p = &preds[f][i];
        let best = gts[f]
            .iter()
            .enumerate()
            .filter(|(j, g)| g.class_id == class && !taken[f][*j])
            .map(|(j, g)| (j, bev_distance(p, g)))
            .filter(|&(_, d)| d <= threshold)
            .min_by(|a, b| a.1.total_cmp(&b.1));
        match best {
            Some((j, _)) => {
                taken[f][j] = true;
                flags.push(true);
                tps.push((f, i, j));
            }
            None => flags.push(false),
        }
    }
    let n_gt = gts.iter().flatten().filter(|g| g.class_id == class).count();
    ClassMatch { flags, tps, n_gt }
}

/// 11-point interpolated average precision from score-ordered TP flags.
pub fn average_precision(flags: &[bool], n_gt: usize) -> f64 {
    if n_gt == 0 {
        return 0.0;
    }
    let mut tp = 0usize;
    let mut curve = Vec::with_capacity(flags.len());
    for (k, &f) in flags.iter().enumerate() {
        tp += usize::from(f);
        curve.push((tp as f64 / n_gt as f64, tp as f64 / (k + 1) as f64));
    }
    (0..=10)
        .map(|r| {
            let r = r as f64 / 10.0;
            curve
                .iter()
                .filter(|(rec, _)| *rec >= r - 1e-12)
                .map(|&(_, p)| p)
                .fold(0.0, f64::max)
        })
        .sum::<f64>()
        / 11.0
}

/// Scores per-frame predictions against per-frame ground truth.
pub fn evaluate(preds: &[Vec<Box3D>], gts: &[Vec<Box3D>], thresholds: &[f64]) -> Result<EvalReport> {
    if preds.len() != gts.len() {
        return Err(Error::Shape(format!("{} prediction frames for {} gt frames", preds.len(), gts.len())));
    }
    if preds.iter().flatten().any(|p| !p.score.is_finite() || p.center.iter().any(|c| !c.is_finite())) {
        return Err(Error::NonFinite("predictions"));
    }
    let mut classes: Vec<usize> = gts.iter().flatten().map(|g| g.class_id).collect();
    classes.sort_unstable();
    classes.dedup();
    let ap_at_thresholds = thresholds
        .iter()
        .map(|&t| {
            let ap = if classes.is_empty() {
                0.0
            } else {
                classes
                    .iter()
                    .map(|&c| {
                        let m = match_class(preds, gts, c, t);
                        average_precision(&m.flags, m.n_gt)
                    })
                    .sum::<f64>()
                    / classes.len() as f64
            };
            (t, ap)
        })
        .collect();

    let mut tps = Vec::new();
    for &c in &classes {
        tps.extend(match_class(preds, gts, c, TP_THRESHOLD).tps);
    }
    let n_gt = gts.iter().map(Vec::len).sum::<usize>();
    let (mean_ate, mean_ave) = if tps.is_empty() {
        (1.0, 1.0)
    } else {
        let n = tps.len() as f64;
        let ate = tps.iter().map(|&(f, i, j)| bev_distance(&preds[f][i], &gts[f][j])).sum::<f64>() / n;
        let ave = tps
            .iter()
            .map(|&(f, i, j)| {
                let (p, g) = (&preds[f][i], &gts[f][j]);
                (p.velocity[0] - g.velocity[0]).hypot(p.velocity[1] - g.velocity[1])
            })
            .sum::<f64>()
            / n;
        (ate, ave)
    };
    Ok(EvalReport {
        ap_at_thresholds,
        mean_ate,
        mean_ave,
        recall: if n_gt == 0 { 0.0 } else { tps.len() as f64 / n_gt as f64 },
        n_gt,
        n_pred: preds.iter().map(Vec::len).sum(),
        true_positives: tps.len(),
    })
}

/// Mean BEV distance between each ground-truth box and its partner in a
/// one-to-one assignment to the frame's `n_gt` highest-scoring predictions.
/// `None` without ground truth.
pub fn matched_center_error(preds: &[Vec<Box3D>], gts: &[Vec<Box3D>]) -> Option<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for (ps, gs) in preds.iter().zip(gts) {
        if gs.is_empty() {
            continue;
        }
        let mut top: Vec<&Box3D> = ps.iter().collect();
        top.sort_by(|a, b| b.score.total_cmp(&a.score));
        top.truncate(gs.len());
        let cost: Vec<Vec<f64>> = gs.iter().map(|g| top.iter().map(|p| bev_distance(p, g)).collect()).collect();
        let pairs = hungarian(&cost);
        sum += pairs.iter().map(|&(i, j)| cost[i][j]).sum::<f64>();
        // a missing prediction counts as the gt's distance from the ego
        sum += gs
            .iter()
            .enumerate()
            .filter(|(i, _)| !pairs.iter().any(|p| p.0 == *i))
            .map(|(_, g)| g.center[0].hypot(g.center[1]))
            .sum::<f64>();
        n += gs.len();
    }
    (n > 0).then(|| sum / n as f64)
}

/// Fraction of ground-truth boxes whose BEV cell is within one cell
/// (Chebyshev, in cell indices) of the cell of some query reference center.
pub fn query_recall(query_centers: &[Vec<[f64; 3]>], gts: &[Vec<Box3D>], grid: &BevGridSpec) -> Option<f64> {
    let mut hit = 0usize;
    let mut n = 0usize;
    for (qs, gs) in query_centers.iter().zip(gts) {
        let cells: Vec<(usize, usize)> = qs.iter().map(|q| grid.bev_cell_of(q[0], q[1])).collect();
        for g in gs {
            n += 1;
            let (gj, gi) = grid.bev_cell_of(g.center[0], g.center[1]);
            let near = cells.iter().any(|&(j, i)| j.abs_diff(gj) <= 1 && i.abs_diff(gi) <= 1);
            hit += usize::from(near);
        }
    }
    (n > 0).then(|| hit as f64 / n as f64)
}
