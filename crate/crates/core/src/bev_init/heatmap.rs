//! BEV objectness heatmaps: ground-truth splatting, the penalty-reduced
//! Gaussian focal loss, and NMS + top-k peak selection.

use crate::boxes::Box3D;
use crate::error::{Error, Result};
use crate::numerics::{sigmoid, Graph, Tensor, Var};

use super::grid::BevGridSpec;

pub const FOCAL_ALPHA: f64 = 2.0;
pub const FOCAL_BETA: f64 = 4.0;

const LOG_FLOOR: f64 = 1e-12;

/// `[H, W]` heatmap over the BEV grid. Predicted heatmaps carry their
/// pre-sigmoid logits.
#[derive(Debug, Clone)]
pub struct Heatmap {
    pub values: Tensor,
    pub logits: Option<Tensor>,
    pub spec: BevGridSpec,
}

impl Heatmap {
    pub fn from_logits(logits: Tensor, spec: BevGridSpec) -> Self {
        let values = logits.map(sigmoid);
        Self {
            values,
            logits: Some(logits),
            spec,
        }
    }

    pub fn height(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.values.shape()[1]
    }
}

/// Standard deviation (cells) of the splat for radius `r`.
pub fn gaussian_sigma(radius: usize) -> f64 {
    (2.0 * radius as f64 + 1.0) / 6.0
}

/// Splats a Gaussian of fixed `radius` (cells) at every box's BEV cell.
/// Overlaps combine by maximum; each center cell is exactly 1.
pub fn draw_gt_heatmap(boxes: &[Box3D], spec: &BevGridSpec, radius: usize) -> Heatmap {
    let (h, w) = (spec.height(), spec.width());
    let mut m = Tensor::zeros(&[h, w]);
    let sigma = gaussian_sigma(radius);
    let r = radius as isize;
    for b in boxes {
        let (cj, ci) = spec.bev_cell_of(b.center[0], b.center[1]);
        for dy in -r..=r {
            for dx in -r..=r {
                let (j, i) = (cj as isize + dy, ci as isize + dx);
                if j < 0 || i < 0 || j >= h as isize || i >= w as isize {
                    continue;
                }
                let v = (-((dx * dx + dy * dy) as f64) / (2.0 * sigma * sigma)).exp();
                let idx = [j as usize, i as usize];
                if v > m.at(&idx) {
                    m.set(&idx, v);
                }
            }
        }
    }
    Heatmap {
        values: m,
        logits: None,
        spec: *spec,
    }
}

fn check_pair(pred: &Tensor, gt: &Tensor) -> Result<()> {
    if pred.shape() != gt.shape() {
        return Err(Error::Shape(format!(
            "heatmap {:?} vs target {:?}",
            pred.shape(),
            gt.shape()
        )));
    }
    Ok(())
}

fn focal_terms(p: f64, y: f64) -> (f64, f64) {
    // (term, d term / dp) before the -1/N_pos factor
    if y == 1.0 {
        let lp = p.max(LOG_FLOOR).ln();
        let dl = if p > LOG_FLOOR { 1.0 / p } else { 0.0 };
        let q = 1.0 - p;
        (
            q.powf(FOCAL_ALPHA) * lp,
            -FOCAL_ALPHA * q.powf(FOCAL_ALPHA - 1.0) * lp + q.powf(FOCAL_ALPHA) * dl,
        )
    } else {
        let wneg = (1.0 - y).powf(FOCAL_BETA);
        let q = 1.0 - p;
        let lq = q.max(LOG_FLOOR).ln();
        let dlq = if q > LOG_FLOOR { -1.0 / q } else { 0.0 };
        (
            wneg * p.powf(FOCAL_ALPHA) * lq,
            wneg * (FOCAL_ALPHA * p.powf(FOCAL_ALPHA - 1.0) * lq + p.powf(FOCAL_ALPHA) * dlq),
        )
    }
}

fn n_pos(gt: &[f64]) -> f64 {
    gt.iter().filter(|&&y| y == 1.0).count().max(1) as f64
}

/// Penalty-reduced focal loss between probabilities `pred` and a Gaussian
/// target, normalized by the number of exact-1 target cells (at least 1).
pub fn gaussian_focal_loss(pred: &Tensor, gt: &Tensor) -> Result<f64> {
    check_pair(pred, gt)?;
    let np = n_pos(gt.data());
    Ok(-pred
        .data()
        .iter()
        .zip(gt.data())
        .map(|(&p, &y)| focal_terms(p, y).0)
        .sum::<f64>()
        / np)
}

impl Graph {
    /// Graph form of [`gaussian_focal_loss`], differentiable in `pred`.
    pub fn gaussian_focal_loss(&mut self, pred: Var, gt: &Tensor) -> Result<Var> {
        check_pair(self.value(pred), gt)?;
        let p = self.data(pred).to_vec();
        let y = gt.data().to_vec();
        let np = n_pos(&y);
        let mut total = 0.0;
        let mut grad = Vec::with_capacity(p.len());
        for (&pi, &yi) in p.iter().zip(&y) {
            let (t, dt) = focal_terms(pi, yi);
            total += t;
            grad.push(-dt / np);
        }
        Ok(self.push_op(Tensor::scalar(-total / np), &[pred], move |g| {
            vec![grad.iter().map(|d| d * g[0]).collect()]
        }))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Peak {
    /// Flat BEV index `j * W + i`.
    pub cell: usize,
    pub row: usize,
    pub col: usize,
    pub xy: [f64; 2],
    pub score: f64,
}

/// Keeps cells that dominate their `window × window` neighborhood (ties go to
/// the smaller flat index), then returns the `k` highest-scoring survivors.
pub fn nms_topk(map: &Heatmap, window: usize, k: usize) -> Result<Vec<Peak>> {
    if window.is_multiple_of(2) {
        return Err(Error::Config(format!("NMS window must be odd, got {window}")));
    }
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    let (h, w) = (map.height(), map.width());
    let v = map.values.data();
    let r = (window / 2) as isize;
    let mut peaks = Vec::new();
    for j in 0..h {
        'cells: for i in 0..w {
            let idx = j * w + i;
            let s = v[idx];
            for dy in -r..=r {
                for dx in -r..=r {
                    let (jj, ii) = (j as isize + dy, i as isize + dx);
                    if (dy == 0 && dx == 0) || jj < 0 || ii < 0 || jj >= h as isize || ii >= w as isize {
                        continue;
                    }
                    let n = jj as usize * w + ii as usize;
                    if v[n] > s || (v[n] == s && n < idx) {
                        continue 'cells;
                    }
                }
            }
            peaks.push(Peak {
                cell: idx,
                row: j,
                col: i,
                xy: map.spec.bev_center(j, i),
                score: s,
            });
        }
    }
    peaks.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.cell.cmp(&b.cell)));
    peaks.truncate(k);
    Ok(peaks)
}
