//! Minimum-cost bipartite assignment (shortest augmenting paths with
//! potentials, O(n²m)).

use super::config::LossWeights;
use crate::boxes::Box3D;
use crate::numerics::{sigmoid, Tensor};

/// Optimal assignment for a rectangular cost matrix. Returns `(row, col)`
/// pairs sorted by row; `min(rows, cols)` pairs in total. Costs must be
/// finite.
pub fn hungarian(cost: &[Vec<f64>]) -> Vec<(usize, usize)> {
    let rows = cost.len();
    let cols = cost.first().map_or(0, Vec::len);
    if rows == 0 || cols == 0 {
        return Vec::new();
    }
    assert!(cost.iter().flatten().all(|c| c.is_finite()), "non-finite assignment cost");
    let mut pairs = if rows <= cols {
        solve(rows, cols, |i, j| cost[i][j])
    } else {
        solve(cols, rows, |i, j| cost[j][i])
            .into_iter()
            .map(|(c, r)| (r, c))
            .collect()
    };
    pairs.sort_unstable();
    pairs
}

fn solve(n: usize, m: usize, a: impl Fn(usize, usize) -> f64) -> Vec<(usize, usize)> {
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = a(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    (1..=m).filter(|&j| p[j] != 0).map(|j| (p[j] - 1, j - 1)).collect()
}

/// Matching cost `λ_cls·(1 − p(gt class)) + λ_center·‖Δxy‖₁` for
/// predictions with class logits `[N, K]` and decoded centers.
pub fn match_cost(cls_logits: &Tensor, centers: &[[f64; 3]], gt: &[Box3D], w: &LossWeights) -> Vec<Vec<f64>> {
    centers
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let row = cls_logits.row(i);
            gt.iter()
                .map(|b| {
                    let p = sigmoid(row[b.class_id]);
                    let l1 = (c[0] - b.center[0]).abs() + (c[1] - b.center[1]).abs();
                    w.match_cls * (1.0 - p) + w.match_center * l1
                })
                .collect()
        })
        .collect()
}

/// One-to-one assignment of predictions to ground truth; unmatched
/// predictions are background.
pub fn hungarian_match(cls_logits: &Tensor, centers: &[[f64; 3]], gt: &[Box3D], w: &LossWeights) -> Vec<(usize, usize)> {
    hungarian(&match_cost(cls_logits, centers, gt, w))
}
