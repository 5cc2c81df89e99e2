use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::attention::{pca_forward, temporal_self_attention};
use crate::bev_init::{
    build_projected_grid, gaussian_focal_loss, init_queries, nms_topk, volumetric_sample_var, BevGridSpec,
    FeatureSource, Heatmap,
};
use crate::boxes::Box3D;
use crate::numerics::{grad_check, grad_check_params, sigmoid, GradCheckOptions, Graph, LinearMap, ParamStore, Tensor};
use crate::synth::{generate_scene, render_features, RenderConfig, RigSpec, SceneSpec};

fn tiny_cfg() -> DetectorConfig {
    DetectorConfig {
        range: BevGridSpec {
            x_range: [-16.0, 16.0],
            y_range: [-16.0, 16.0],
            z_range: [-1.0, 3.0],
            resolution: [2, 8, 8],
        },
        channels: 8,
        heads: 2,
        points: 2,
        layers: 1,
        ffn_hidden: 16,
        n_query: 4,
        heatmap_hidden: 8,
        heatmap_convs: 1,
        heatmap_radius: 1,
        ..DetectorConfig::desk()
    }
}

fn frames(cfg: &DetectorConfig, seed: u64, n_objects: usize) -> Vec<FrameData> {
    let scene = generate_scene(&SceneSpec {
        n_objects,
        speed_range: [0.0, 2.0],
        ego_speed: 3.0,
        ego_yaw_rate: 0.05,
        duration: 2.0,
        frame_period: 0.5,
        min_distance: 4.0,
        n_classes: cfg.n_classes,
        seed,
        range: cfg.range,
        rig: RigSpec::desk(),
        render: RenderConfig::default(),
    })
    .unwrap();
    let rig = scene.rig.build().unwrap();
    scene
        .timestamps()
        .into_iter()
        .map(|t| FrameData {
            features: render_features(&scene, t, (16, 16)).unwrap(),
            rig: rig.clone(),
            pose: scene.ego_pose(t),
            gt: scene.ground_truth(t),
        })
        .collect()
}

fn model(cfg: DetectorConfig, seed: u64) -> Detector {
    Detector::new(cfg, seed).unwrap()
}

// ---- decode ----

fn range() -> BevGridSpec {
    tiny_cfg().range
}

#[test]
fn zero_regression_decodes_to_unit_box() {
    let reg = Tensor::zeros(&[1, REG_DIMS]);
    let logits = Tensor::new(&[1, 3], vec![0.0, 1.0, -1.0]).unwrap();
    let b = &decode_boxes(&logits, &reg, &[[1.0, -2.0, 0.5]], 4.0, &range())[0];
    assert_eq!(b.center, [1.0, -2.0, 0.5]);
    assert_eq!(b.size, [1.0, 1.0, 1.0]);
    assert_eq!(b.yaw, 0.0);
    assert_eq!(b.velocity, [0.0, 0.0]);
    assert_eq!(b.class_id, 1);
    assert!((b.score - sigmoid(1.0)).abs() < 1e-15);
}

#[test]
fn sin_one_cos_zero_gives_quarter_turn() {
    let mut reg = Tensor::zeros(&[1, REG_DIMS]);
    reg.set(&[0, 6], 1.0);
    reg.set(&[0, 7], -1.0);
    let b = &decode_boxes(&Tensor::zeros(&[1, 3]), &reg, &[[0.0; 3]], 4.0, &range())[0];
    assert!((b.yaw - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
}

proptest! {
    #[test]
    fn decode_matches_formula(raw in prop::collection::vec(-3.0f64..3.0, REG_DIMS), c in prop::array::uniform3(-10.0f64..10.0)) {
        let c = [c[0], c[1], c[2].clamp(-0.9, 2.9)];
        let reg = Tensor::new(&[1, REG_DIMS], raw.clone()).unwrap();
        let logits = Tensor::new(&[1, 3], vec![0.3, -0.2, 0.1]).unwrap();
        let b = &decode_boxes(&logits, &reg, &[c], 4.0, &range())[0];
        let r = range();
        let lim = |v: f64, lo: f64, hi: f64| v.max(lo).min(hi);
        let expect_c = [
            lim(c[0] + 4.0 * raw[0].tanh(), r.x_range[0], r.x_range[1]),
            lim(c[1] + 4.0 * raw[1].tanh(), r.y_range[0], r.y_range[1]),
            lim(c[2] + 4.0 * raw[2].tanh(), r.z_range[0], r.z_range[1]),
        ];
        for k in 0..3 {
            prop_assert!((b.center[k] - expect_c[k]).abs() < 1e-12);
            prop_assert!((b.size[k] - raw[3 + k].exp()).abs() < 1e-12);
        }
        let yaw = raw[6].atan2(1.0 + raw[7]);
        prop_assert!((b.yaw - yaw).abs() < 1e-12);
        prop_assert_eq!(b.velocity, [raw[8], raw[9]]);
        prop_assert_eq!(b.class_id, 0);
        prop_assert!((b.score - 1.0 / (1.0 + (-0.3f64).exp())).abs() < 1e-12);
    }
}

// ---- matching ----

fn brute_force(cost: &[Vec<f64>]) -> f64 {
    fn rec(cost: &[Vec<f64>], row: usize, used: &mut Vec<bool>, acc: f64, best: &mut f64, need: usize, took: usize) {
        if took == need {
            *best = best.min(acc);
            return;
        }
        if row == cost.len() {
            return;
        }
        // rows may stay unmatched only when there are more rows than columns
        if cost.len() - row > need - took {
            rec(cost, row + 1, used, acc, best, need, took);
        }
        for j in 0..used.len() {
            if !used[j] {
                used[j] = true;
                rec(cost, row + 1, used, acc + cost[row][j], best, need, took + 1);
                used[j] = false;
            }
        }
    }
    let cols = cost[0].len();
    let mut best = f64::INFINITY;
    rec(cost, 0, &mut vec![false; cols], 0.0, &mut best, cost.len().min(cols), 0);
    best
}

fn total(cost: &[Vec<f64>], pairs: &[(usize, usize)]) -> f64 {
    pairs.iter().map(|&(i, j)| cost[i][j]).sum()
}

#[test]
fn zero_diagonal_gives_identity() {
    let cost = vec![vec![0.0, 1.0, 2.0], vec![3.0, 0.0, 1.0], vec![1.0, 5.0, 0.0]];
    assert_eq!(hungarian(&cost), vec![(0, 0), (1, 1), (2, 2)]);
}

#[test]
fn single_gt_takes_cheapest_prediction() {
    let cost = vec![vec![0.7], vec![0.2], vec![0.9], vec![0.4]];
    assert_eq!(hungarian(&cost), vec![(1, 0)]);
}

#[test]
fn empty_cost_matrix() {
    assert!(hungarian(&[]).is_empty());
    assert!(hungarian(&[vec![], vec![]]).is_empty());
}

#[test]
fn three_by_three_matches_all_permutations() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..200 {
        let cost: Vec<Vec<f64>> = (0..3).map(|_| (0..3).map(|_| rng.random_range(0.0..10.0)).collect()).collect();
        let perms = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
        let best = perms
            .iter()
            .map(|p| (0..3).map(|i| cost[i][p[i]]).sum::<f64>())
            .fold(f64::INFINITY, f64::min);
        assert!((total(&cost, &hungarian(&cost)) - best).abs() < 1e-12);
    }
}

proptest! {
    #[test]
    fn rectangular_assignment_is_optimal_injection(rows in 1usize..6, cols in 1usize..6, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cost: Vec<Vec<f64>> = (0..rows).map(|_| (0..cols).map(|_| rng.random_range(0.0..5.0)).collect()).collect();
        let pairs = hungarian(&cost);
        prop_assert_eq!(pairs.len(), rows.min(cols));
        let mut seen_r = vec![false; rows];
        let mut seen_c = vec![false; cols];
        for &(i, j) in &pairs {
            prop_assert!(!seen_r[i] && !seen_c[j]);
            seen_r[i] = true;
            seen_c[j] = true;
        }
        prop_assert!((total(&cost, &pairs) - brute_force(&cost)).abs() < 1e-9);
    }
}

#[test]
fn match_cost_formula() {
    let logits = Tensor::new(&[2, 2], vec![0.0, 2.0, -1.0, 1.0]).unwrap();
    let centers = [[0.0, 0.0, 0.0], [3.0, 1.0, 0.0]];
    let gt = vec![Box3D::new([1.0, -1.0, 5.0], [1.0; 3], 0.0, 1)];
    let w = LossWeights::default();
    let c = match_cost(&logits, &centers, &gt, &w);
    assert!((c[0][0] - (2.0 * (1.0 - sigmoid(2.0)) + 0.25 * 2.0)).abs() < 1e-12);
    assert!((c[1][0] - (2.0 * (1.0 - sigmoid(1.0)) + 0.25 * 4.0)).abs() < 1e-12);
}

// ---- loss ----

fn focal_oracle(x: f64, t: bool, a: f64, gm: f64) -> f64 {
    let p = 1.0 / (1.0 + (-x).exp());
    if t {
        -a * (1.0 - p).powf(gm) * p.ln()
    } else {
        -(1.0 - a) * p.powf(gm) * (1.0 - p).ln()
    }
}

#[test]
fn sigmoid_focal_matches_elementwise_formula() {
    let x = vec![-3.0, -0.5, 0.0, 0.7, 2.5, 8.0];
    let t = vec![1.0, 0.0, 1.0, 0.0, 1.0, 0.0];
    let mut g = Graph::new();
    let v = g.leaf(Tensor::new(&[2, 3], x.clone()).unwrap());
    let l = g.sigmoid_focal_loss(v, &Tensor::new(&[2, 3], t.clone()).unwrap(), 0.25, 2.0, 3.0);
    let expect: f64 = x.iter().zip(&t).map(|(&x, &t)| focal_oracle(x, t > 0.5, 0.25, 2.0)).sum::<f64>() / 3.0;
    assert!((g.value(l).data()[0] - expect).abs() < 1e-12);
}

#[test]
fn sigmoid_focal_is_stable_for_extreme_logits() {
    let mut g = Graph::new();
    let v = g.leaf(Tensor::new(&[1, 4], vec![-800.0, 800.0, -800.0, 800.0]).unwrap());
    let l = g.sigmoid_focal_loss(v, &Tensor::new(&[1, 4], vec![1.0, 1.0, 0.0, 0.0]).unwrap(), 0.25, 2.0, 1.0);
    let grads = g.backward(l);
    assert!(g.value(l).is_finite());
    assert!(grads.get(v).unwrap().iter().all(|d| d.is_finite()));
}

#[test]
fn sigmoid_focal_grad_check() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = Tensor::from_fn(&[3, 4], |_| rng.random_range(-4.0..4.0));
    let t = Tensor::from_fn(&[3, 4], |i| (i % 3 == 0) as u8 as f64);
    let r = grad_check(
        &[x],
        move |g, v| Ok(g.sigmoid_focal_loss(v[0], &t, 0.25, 2.0, 2.0)),
        GradCheckOptions::default(),
    )
    .unwrap();
    assert!(r.pass, "{r:?}");
}

#[test]
fn loss_is_nonnegative_and_supervises_every_layer() {
    let cfg = DetectorConfig { layers: 2, ..tiny_cfg() };
    let m = model(cfg, 3);
    let f = &frames(&cfg, 4, 3)[1];
    let mut g = m.graph(true);
    let out = m.forward(&mut g, &f.input(), None).unwrap();
    assert_eq!(out.layers.len(), 2);
    let (l, report) = detection_loss(&mut g, &out, &f.gt, &cfg, true).unwrap();
    assert!(g.value(l).data()[0] >= 0.0);
    assert_eq!(report.per_layer.len(), 2);
    assert_eq!(report.matched, 2 * f.gt.len().min(cfg.n_query));
    assert!(report.cls >= 0.0 && report.reg >= 0.0 && report.heatmap >= 0.0);
}

#[test]
fn exact_predictions_have_zero_regression() {
    let cfg = tiny_cfg();
    let mut m = model(cfg, 9);
    // every class confident, so matching is decided by distance alone
    let cls_bias = m.layers[0].cls.bias.unwrap();
    *m.store.get_mut(cls_bias) = Tensor::full(&[cfg.n_classes], 30.0);
    let f = &frames(&cfg, 2, 2)[0];
    let mut g = m.graph(true);
    let out = m.forward(&mut g, &f.input(), None).unwrap();
    let layer = &out.layers[0];
    let mut gt: Vec<Box3D> = decode_boxes(g.value(layer.cls_logits), g.value(layer.reg), &layer.centers, cfg.trust_region, &cfg.range);
    gt.dedup_by(|a, b| a.center == b.center);
    gt.truncate(2);
    let (_, report) = detection_loss(&mut g, &out, &gt, &cfg, true).unwrap();
    assert_eq!(report.matched, gt.len());
    assert!(report.reg.abs() < 1e-12 && report.velocity.abs() < 1e-12, "{report:?}");
}

fn l1(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

#[test]
fn loss_equals_hand_summed_components() {
    let cfg = DetectorConfig { n_query: 2, ..tiny_cfg() };
    let m = model(cfg, 11);
    let f = &frames(&cfg, 6, 2)[2];
    let mut gt = f.gt.clone();
    gt.truncate(2);
    assert!(!gt.is_empty());
    let mut g = m.graph(true);
    let out = m.forward(&mut g, &f.input(), None).unwrap();
    let (l, _) = detection_loss(&mut g, &out, &gt, &cfg, true).unwrap();
    let w = cfg.loss;
    let layer = &out.layers[0];
    let logits = g.value(layer.cls_logits).clone();
    let reg = g.value(layer.reg).clone();
    let centers = refine_centers(&reg, &layer.centers, cfg.trust_region, &cfg.range);
    // enumerate both assignments of 2 queries
    let cost = |i: usize, j: usize| {
        let b = &gt[j];
        w.match_cls * (1.0 - sigmoid(logits.at(&[i, b.class_id])))
            + w.match_center * ((centers[i][0] - b.center[0]).abs() + (centers[i][1] - b.center[1]).abs())
    };
    let candidates: Vec<Vec<(usize, usize)>> = if gt.len() == 1 {
        vec![vec![(0, 0)], vec![(1, 0)]]
    } else {
        vec![vec![(0, 0), (1, 1)], vec![(0, 1), (1, 0)]]
    };
    let pairs = candidates
        .into_iter()
        .min_by(|a, b| {
            let ca: f64 = a.iter().map(|&(i, j)| cost(i, j)).sum();
            let cb: f64 = b.iter().map(|&(i, j)| cost(i, j)).sum();
            ca.total_cmp(&cb)
        })
        .unwrap();
    let norm = gt.len() as f64;
    let mut cls = 0.0;
    for i in 0..2 {
        for k in 0..cfg.n_classes {
            let pos = pairs.iter().any(|&(pi, j)| pi == i && gt[j].class_id == k);
            cls += focal_oracle(logits.at(&[i, k]), pos, w.focal_alpha, w.focal_gamma);
        }
    }
    let mut reg_sum = 0.0;
    let mut vel = 0.0;
    for &(i, j) in &pairs {
        let b = &gt[j];
        let r = reg.row(i);
        let c: Vec<f64> = (0..3).map(|k| layer.centers[i][k] + cfg.trust_region * r[k].tanh()).collect();
        reg_sum += l1(&c, &b.center);
        reg_sum += l1(&r[3..6], &b.size.map(f64::ln));
        reg_sum += l1(&r[6..8], &[b.yaw.sin(), b.yaw.cos() - 1.0]);
        vel += l1(&r[8..10], &b.velocity);
    }
    let hm_gt = crate::bev_init::draw_gt_heatmap(&gt, &cfg.range, cfg.heatmap_radius);
    let hm = gaussian_focal_loss(&out.heatmap.values, &hm_gt.values).unwrap();
    let expect = w.cls * cls / norm + w.reg * reg_sum / norm + w.reg * w.velocity * vel / norm + w.heatmap * hm;
    assert!((g.value(l).data()[0] - expect).abs() < 1e-10, "{} vs {expect}", g.value(l).data()[0]);
}

#[test]
fn decoder_loss_grad_check() {
    let cfg = tiny_cfg();
    let m = model(cfg, 21);
    // perturb the zero-initialized heads so their gradients are exercised
    let mut store = m.store.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    for t in store.tensors_mut() {
        t.data_mut().iter_mut().for_each(|v| *v += rng.random_range(-0.05..0.05));
    }
    let f = frames(&cfg, 7, 3).swap_remove(1);
    let opts = GradCheckOptions {
        max_coords_per_input: Some(2),
        ..GradCheckOptions::default()
    };
    let r = grad_check_params(
        &store,
        &[],
        |g, _| {
            let out = m.forward(g, &f.input(), None)?;
            Ok(detection_loss(g, &out, &f.gt, &cfg, true)?.0)
        },
        opts,
    )
    .unwrap();
    assert!(r.pass, "{r:?}");
}

// ---- decoder ----

#[test]
fn zero_heads_leave_centers_unchanged() {
    let cfg = DetectorConfig { layers: 2, ..tiny_cfg() };
    let m = model(cfg, 1);
    let f = &frames(&cfg, 1, 3)[0];
    let mut g = m.graph(false);
    let out = m.forward(&mut g, &f.input(), None).unwrap();
    assert_eq!(out.layers[0].centers, out.initial_centers);
    assert_eq!(out.layers[1].centers, out.initial_centers);
    assert_eq!(out.final_queries.centers, out.initial_centers);
}

#[test]
fn forward_is_deterministic() {
    let cfg = tiny_cfg();
    let f = &frames(&cfg, 1, 3)[0];
    let run = || {
        let m = model(cfg, 4);
        let mut g = m.graph(false);
        let out = m.forward(&mut g, &f.input(), None).unwrap();
        let l = &out.layers[0];
        (g.value(l.cls_logits).clone(), g.value(l.reg).clone(), out.initial_centers)
    };
    assert_eq!(run(), run());
}

fn ln_oracle(x: &Tensor, store: &ParamStore, (gm, bt): (crate::numerics::ParamId, crate::numerics::ParamId)) -> Tensor {
    let c = x.last_dim();
    let (gm, bt) = (store.get(gm).data(), store.get(bt).data());
    let mut y = x.clone();
    for r in y.data_mut().chunks_mut(c) {
        let mu = r.iter().sum::<f64>() / c as f64;
        let var = r.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / c as f64;
        for (j, v) in r.iter_mut().enumerate() {
            *v = (*v - mu) / (var + 1e-5).sqrt() * gm[j] + bt[j];
        }
    }
    y
}

fn add(a: &Tensor, b: &Tensor) -> Tensor {
    Tensor::new(a.shape(), a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect()).unwrap()
}

fn apply(map: &LinearMap, store: &ParamStore, x: &Tensor) -> Tensor {
    map.apply(store, x)
}

#[test]
fn single_layer_matches_composed_ops() {
    let cfg = DetectorConfig { n_query: 2, ..tiny_cfg() };
    let mut m = model(cfg, 13);
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for t in m.store.tensors_mut() {
        t.data_mut().iter_mut().for_each(|v| *v += rng.random_range(-0.1..0.1));
    }
    let f = &frames(&cfg, 3, 2)[0];
    let mut g = m.graph(false);
    let out = m.forward(&mut g, &f.input(), None).unwrap();

    // rebuild from the individually tested pieces
    let mut h = m.graph(false);
    let feats: Vec<_> = f.features.iter().map(|t| h.constant(t.clone())).collect();
    let grid = build_projected_grid(&cfg.range, &f.rig).unwrap();
    let scales: Vec<_> = f.rig.cameras().iter().map(|c| c.feature_scale(16, 16)).collect();
    let fv = volumetric_sample_var(&mut h, &feats, &scales, &grid).unwrap();
    let fbev = m.bev.compress(&mut h, fv);
    let logits = m.bev.heatmap_logits(&mut h, fbev, &cfg.range);
    let hm = Heatmap::from_logits(h.value(logits).clone(), cfg.range);
    let peaks = nms_topk(&hm, cfg.nms_window, cfg.n_query).unwrap();
    let qs = init_queries(&mut h, &peaks, fbev, &m.pos, cfg.range.z_mid(), cfg.n_query, FeatureSource::Bev).unwrap();
    let lw = &m.layers[0];
    let sa = temporal_self_attention(&mut h, &qs, None, &lw.tsa).unwrap();
    let x = ln_oracle(&add(h.value(qs.features), h.value(sa)), &m.store, lw.norms[0]);
    let xq = crate::query::QuerySet {
        features: h.constant(x.clone()),
        ..qs.clone()
    };
    let cross = pca_forward(&mut h, &xq, std::slice::from_ref(&feats), &f.rig, &lw.cross).unwrap().output;
    let x = ln_oracle(&add(&x, h.value(cross)), &m.store, lw.norms[1]);
    let hid = apply(&lw.ffn1, &m.store, &x).map(|v| v.max(0.0));
    let x = ln_oracle(&add(&x, &apply(&lw.ffn2, &m.store, &hid)), &m.store, lw.norms[2]);
    let hx = add(&x, h.value(qs.pos_enc));
    let cls = apply(&lw.cls, &m.store, &hx);
    let reg = apply(&lw.reg2, &m.store, &apply(&lw.reg1, &m.store, &hx).map(|v| v.max(0.0)));

    assert_eq!(out.initial_centers, qs.centers);
    assert!(g.value(out.layers[0].cls_logits).max_abs_diff(&cls) < 1e-10);
    assert!(g.value(out.layers[0].reg).max_abs_diff(&reg) < 1e-10);
    let refined = refine_centers(&reg, &qs.centers, cfg.trust_region, &cfg.range);
    assert_eq!(out.final_queries.centers.len(), refined.len());
    for (a, b) in out.final_queries.centers.iter().zip(&refined) {
        assert!(l1(a, b) < 1e-10);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]
    #[test]
    fn refined_centers_stay_in_range(seed in 0u64..1000) {
        let cfg = DetectorConfig { layers: 2, trust_region: 30.0, ..tiny_cfg() };
        let mut m = model(cfg, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for lw in &m.layers.clone() {
            let b = lw.reg2.bias.unwrap();
            *m.store.get_mut(b) = Tensor::from_fn(&[REG_DIMS], |_| rng.random_range(-5.0..5.0));
        }
        let f = &frames(&cfg, seed, 3)[0];
        let mut g = m.graph(false);
        let out = m.forward(&mut g, &f.input(), None).unwrap();
        for c in out.layers.iter().flat_map(|l| l.centers.iter()).chain(&out.final_queries.centers) {
            prop_assert!(cfg.range.contains_bev(c[0], c[1]));
            prop_assert!(c[2] >= cfg.range.z_range[0] && c[2] <= cfg.range.z_range[1]);
        }
    }
}

#[test]
fn temporal_off_ignores_past() {
    let cfg = tiny_cfg();
    assert!(!cfg.temporal.enabled);
    let m = model(cfg, 6);
    let fs = frames(&cfg, 5, 3);
    let past = m.infer(&fs[0].input(), None).unwrap();
    let ctx = PastContext {
        queries: &past.queries,
        features: &past.features,
        rig: &fs[0].rig,
        pose: &fs[0].pose,
    };
    let with = m.infer(&fs[1].input(), Some(&ctx)).unwrap();
    let without = m.infer(&fs[1].input(), None).unwrap();
    assert!(!with.used_past);
    assert_eq!(with.boxes, without.boxes);
    assert_eq!(with.queries, without.queries);
}

#[test]
fn temporal_on_uses_past() {
    let mut cfg = tiny_cfg();
    cfg.temporal.enabled = true;
    let m = model(cfg, 6);
    let fs = frames(&cfg, 5, 3);
    let past = m.infer(&fs[0].input(), None).unwrap();
    let ctx = PastContext {
        queries: &past.queries,
        features: &past.features,
        rig: &fs[0].rig,
        pose: &fs[0].pose,
    };
    let with = m.infer(&fs[1].input(), Some(&ctx)).unwrap();
    let without = m.infer(&fs[1].input(), None).unwrap();
    assert!(with.used_past && !without.used_past);
    assert_ne!(with.queries, without.queries);
}

#[test]
fn image_plane_attention_rejects_past_features() {
    let mut cfg = tiny_cfg();
    cfg.attention = AttentionKind::Sca2d;
    assert!(Detector::new(cfg, 0).is_ok());
    cfg.temporal.enabled = true;
    assert!(Detector::new(cfg, 0).is_err());
    cfg.temporal.feature_aggregation = false;
    assert!(Detector::new(cfg, 0).is_ok());
}

#[test]
fn wrong_view_count_is_an_error() {
    let cfg = tiny_cfg();
    let m = model(cfg, 0);
    let f = &frames(&cfg, 0, 1)[0];
    let input = FrameInput {
        features: &f.features[..2],
        ..f.input()
    };
    assert!(m.infer(&input, None).is_err());
}

// ---- optimizer and training ----

#[test]
fn adamw_first_step_moves_by_lr() {
    let mut store = ParamStore::new();
    let id = store.register("w", Tensor::new(&[3], vec![1.0, -2.0, 0.5]).unwrap());
    let cfg = AdamWConfig {
        lr: 0.1,
        weight_decay: 0.0,
        ..AdamWConfig::default()
    };
    let mut opt = AdamW::new(cfg, &store);
    store.get_mut(id).accumulate_grad(&[0.3, -4.0, 0.0]);
    opt.step(&mut store);
    let w = store.get(id).data();
    assert!((w[0] - 0.9).abs() < 1e-6);
    assert!((w[1] + 1.9).abs() < 1e-6);
    assert_eq!(w[2], 0.5);
}

#[test]
fn adamw_clips_and_decays() {
    let mut store = ParamStore::new();
    let id = store.register("w", Tensor::new(&[2], vec![2.0, 0.0]).unwrap());
    let cfg = AdamWConfig {
        lr: 0.1,
        weight_decay: 0.5,
        clip_norm: 1.0,
        ..AdamWConfig::default()
    };
    let mut opt = AdamW::new(cfg, &store);
    store.get_mut(id).accumulate_grad(&[0.0, 0.0]);
    let n = opt.step(&mut store);
    assert_eq!(n, 0.0);
    assert!((store.get(id).data()[0] - (2.0 - 0.1 * 0.5 * 2.0)).abs() < 1e-12);
    store.zero_grads();
    store.get_mut(id).accumulate_grad(&[30.0, 40.0]);
    assert_eq!(opt.step(&mut store), 50.0);
}

#[test]
fn adamw_minimizes_quadratic() {
    let mut store = ParamStore::new();
    let id = store.register("w", Tensor::new(&[2], vec![3.0, -1.0]).unwrap());
    let mut opt = AdamW::new(
        AdamWConfig {
            lr: 0.05,
            weight_decay: 0.0,
            ..AdamWConfig::default()
        },
        &store,
    );
    for _ in 0..500 {
        let w = store.get(id).data().to_vec();
        store.get_mut(id).accumulate_grad(&[2.0 * (w[0] - 1.0), 2.0 * (w[1] + 2.0)]);
        opt.step(&mut store);
        store.zero_grads();
    }
    let w = store.get(id).data();
    assert!((w[0] - 1.0).abs() < 1e-2 && (w[1] + 2.0).abs() < 1e-2, "{w:?}");
}

fn sample(fs: &[FrameData], cur: usize, past: Option<usize>) -> TrainSample {
    TrainSample {
        current: fs[cur].clone(),
        past: past.map(|p| fs[p].clone()),
    }
}

fn trace(cfg: DetectorConfig, steps: usize, lr: f64) -> Vec<f64> {
    let mut m = model(cfg, 30);
    let fs = frames(&cfg, 31, 3);
    let batch = vec![sample(&fs, 2, Some(0)), sample(&fs, 3, Some(2))];
    let mut opt = AdamW::new(
        AdamWConfig {
            lr,
            ..AdamWConfig::default()
        },
        &m.store,
    );
    (0..steps)
        .map(|s| train_step(&mut m, &mut opt, &batch, s).unwrap().loss)
        .collect()
}

#[test]
fn ten_step_trace_is_bit_identical() {
    let mut cfg = tiny_cfg();
    cfg.temporal.enabled = true;
    let a = trace(cfg, 10, 1e-3);
    let b = trace(cfg, 10, 1e-3);
    assert_eq!(a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
}

#[test]
fn overfits_a_repeated_batch() {
    let t = trace(tiny_cfg(), 200, 3e-3);
    let block = |k: usize| t[k * 50..(k + 1) * 50].iter().sum::<f64>() / 50.0;
    for k in 0..3 {
        assert!(block(k + 1) < block(k), "block means {:?}", (0..4).map(block).collect::<Vec<_>>());
    }
    assert!(t[199] < 0.5 * t[0], "{} -> {}", t[0], t[199]);
}

#[test]
fn past_pass_leaves_no_gradient() {
    let mut cfg = tiny_cfg();
    cfg.temporal.enabled = true;
    let m = model(cfg, 2);
    let fs = frames(&cfg, 2, 3);
    let mut g = m.graph(false);
    m.forward(&mut g, &fs[0].input(), None).unwrap();
    assert_eq!(g.tracked_ops(), 0);
    m.infer(&fs[0].input(), None).unwrap();
    assert!(!m.store.any_grad());
}

#[test]
fn train_step_reports_past_usage() {
    let mut cfg = tiny_cfg();
    cfg.temporal.enabled = true;
    let mut m = model(cfg, 2);
    let fs = frames(&cfg, 2, 3);
    let mut opt = AdamW::new(AdamWConfig::default(), &m.store);
    let r = train_step(&mut m, &mut opt, &[sample(&fs, 1, Some(0)), sample(&fs, 2, None)], 0).unwrap();
    assert_eq!(r.used_past, 1);
    assert!(!m.store.any_grad());
    assert!(train_step(&mut m, &mut opt, &[], 1).is_err());
}

#[test]
fn non_finite_loss_aborts() {
    let cfg = tiny_cfg();
    let mut m = model(cfg, 2);
    let fs = frames(&cfg, 2, 3);
    let bias = m.layers[0].reg2.bias.unwrap();
    *m.store.get_mut(bias) = Tensor::full(&[REG_DIMS], f64::NAN);
    let mut opt = AdamW::new(AdamWConfig::default(), &m.store);
    let err = train_step(&mut m, &mut opt, &[sample(&fs, 1, None)], 7).unwrap_err();
    assert!(matches!(err, crate::Error::Diverged { step: 7, .. }), "{err}");
}

// ---- checkpoints ----

#[test]
fn checkpoint_round_trip() {
    let mut cfg = tiny_cfg();
    cfg.query_init = QueryInit::Random;
    let mut m = model(cfg, 40);
    let id = m.layers[0].reg2.bias.unwrap();
    *m.store.get_mut(id) = Tensor::from_fn(&[REG_DIMS], |i| i as f64 * 0.01);
    let dir = tempfile::tempdir().unwrap();
    save_checkpoint(&m, dir.path()).unwrap();
    let back = load_checkpoint(dir.path()).unwrap();
    assert_eq!(back.cfg, m.cfg);
    assert_eq!(back.random_centers, m.random_centers);
    assert_eq!(back.store.tensors(), m.store.tensors());
    let f = &frames(&cfg, 1, 2)[0];
    assert_eq!(back.infer(&f.input(), None).unwrap().boxes, m.infer(&f.input(), None).unwrap().boxes);
    let manifest = read_manifest(dir.path()).unwrap();
    assert_eq!(manifest.config_hash, config_hash(&cfg).unwrap());
    assert_eq!(manifest.tensors.len(), m.store.len());
}

#[test]
fn checkpoint_rejects_tampered_config() {
    let cfg = tiny_cfg();
    let m = model(cfg, 1);
    let dir = tempfile::tempdir().unwrap();
    save_checkpoint(&m, dir.path()).unwrap();
    let path = dir.path().join(MANIFEST);
    let text = std::fs::read_to_string(&path).unwrap().replace("n_query = 4", "n_query = 5");
    std::fs::write(&path, text).unwrap();
    assert!(load_checkpoint(dir.path()).is_err());
}

#[test]
fn presets_validate() {
    DetectorConfig::desk().validate().unwrap();
    let p = DetectorConfig::paper_scale();
    p.validate().unwrap();
    assert_eq!(p.n_query, 900);
    assert_eq!(p.heads, 8);
    assert_eq!(p.range.resolution, [8, 144, 144]);
}
