//! Finite-difference checks of every differentiable building block.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::attention::{mha, pca_forward, AttnConfig, MhaWeights, OffsetSpace, PcaWeights};
use crate::bev_init::BevGridSpec;
use crate::detector::{detection_loss, Detector, DetectorConfig};
use crate::error::Result;
use crate::geometry::{CameraModel, CameraRig};
use crate::numerics::{grad_check, grad_check_params, GradCheckOptions, GradCheckReport, Graph, ParamStore, Tensor, Var};
use crate::query::QuerySet;
use crate::synth::{generate_scene, render_features, RenderConfig, RigSpec, SceneSpec};

#[derive(Debug, Clone, Copy, Default)]
pub struct SuiteOptions {
    pub seed: u64,
    /// Run every parametrized op with all weights set to zero.
    pub zero_weights: bool,
    /// Scale each op's backward pass by 1.5 (negative control).
    pub corrupt: bool,
}

#[derive(Debug, Clone)]
pub struct SuiteEntry {
    pub name: &'static str,
    pub report: GradCheckReport,
}

pub const SUITE: [&str; 7] = [
    "bilinear_sample",
    "softmax",
    "mha",
    "gaussian_focal_loss",
    "sigmoid_focal_loss",
    "pca_forward",
    "decoder_loss",
];

fn rand_tensor(shape: &[usize], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi))
}

/// `Σ probe ⊙ out`, optionally behind a gradient-corrupting identity.
fn probe_sum(g: &mut Graph, out: Var, probe: &[f64], corrupt: bool) -> Var {
    let out = if corrupt { g.corrupt_gradient(out, 1.5) } else { out };
    let y = g.mul_const(out, probe.to_vec());
    g.sum(y)
}

fn zero_store(store: &mut ParamStore) {
    for t in store.tensors_mut() {
        t.data_mut().iter_mut().for_each(|v| *v = 0.0);
    }
}

/// Runs the named checks (all of [`SUITE`] when `only` is empty).
pub fn run_suite(opts: SuiteOptions, only: &[&str]) -> Result<Vec<SuiteEntry>> {
    if let Some(bad) = only.iter().find(|n| !SUITE.contains(n)) {
        return Err(crate::Error::Config(format!("unknown gradient check {bad:?}")));
    }
    let mut out = Vec::new();
    for &name in SUITE.iter().filter(|n| only.is_empty() || only.contains(n)) {
        let report = run_one(name, opts)?;
        out.push(SuiteEntry { name, report });
    }
    Ok(out)
}

fn run_one(name: &str, opts: SuiteOptions) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x6AD);
    let c = opts.corrupt;
    let d = GradCheckOptions::default();
    match name {
        "bilinear_sample" => {
            let map = rand_tensor(&[3, 5, 6], -1.0, 1.0, &mut rng);
            // keep clear of texel boundaries where the map is not smooth
            let uv = Tensor::from_fn(&[4, 2], |i| rng.random_range(0..5) as f64 + rng.random_range(0.1..0.9) - (i % 2) as f64 * 0.5);
            let probe = rand_tensor(&[4, 3], -1.0, 1.0, &mut rng).into_data();
            grad_check(
                &[map, uv],
                |g, v| {
                    let s = g.bilinear_sample(v[0], v[1])?;
                    Ok(probe_sum(g, s, &probe, c))
                },
                d,
            )
        }
        "softmax" => {
            let x = rand_tensor(&[3, 5], -3.0, 3.0, &mut rng);
            let probe = rand_tensor(&[3, 5], -1.0, 1.0, &mut rng).into_data();
            grad_check(
                &[x],
                |g, v| {
                    let s = g.softmax(v[0]);
                    Ok(probe_sum(g, s, &probe, c))
                },
                d,
            )
        }
        "mha" => {
            let mut store = ParamStore::new();
            let w = MhaWeights::new(&mut store, "mha", 4, 2, &mut rng)?;
            if opts.zero_weights {
                zero_store(&mut store);
            }
            let extra = vec![
                rand_tensor(&[2, 4], -1.0, 1.0, &mut rng),
                rand_tensor(&[3, 4], -1.0, 1.0, &mut rng),
                rand_tensor(&[3, 4], -1.0, 1.0, &mut rng),
            ];
            let probe = rand_tensor(&[2, 4], -1.0, 1.0, &mut rng).into_data();
            let np = store.len();
            grad_check_params(
                &store,
                &extra,
                |g, v| {
                    let o = mha(g, v[np], v[np + 1], v[np + 2], &w)?;
                    Ok(probe_sum(g, o, &probe, c))
                },
                d,
            )
        }
        "gaussian_focal_loss" => {
            let logits = rand_tensor(&[4, 5], -2.0, 2.0, &mut rng);
            let gt = Tensor::from_fn(&[4, 5], |i| if i == 7 || i == 12 { 1.0 } else { rng.random_range(0.0..0.9) });
            grad_check(
                &[logits],
                |g, v| {
                    let p = g.sigmoid(v[0]);
                    let p = if c { g.corrupt_gradient(p, 1.5) } else { p };
                    g.gaussian_focal_loss(p, &gt)
                },
                d,
            )
        }
        "sigmoid_focal_loss" => {
            let logits = rand_tensor(&[3, 4], -4.0, 4.0, &mut rng);
            let t = Tensor::from_fn(&[3, 4], |i| (i % 3 == 0) as u8 as f64);
            grad_check(
                &[logits],
                |g, v| {
                    let x = if c { g.corrupt_gradient(v[0], 1.5) } else { v[0] };
                    Ok(g.sigmoid_focal_loss(x, &t, 0.25, 2.0, 2.0))
                },
                d,
            )
        }
        "pca_forward" => pca_case(&mut rng, opts),
        "decoder_loss" => decoder_case(&mut rng, opts),
        other => Err(crate::Error::Config(format!("unknown gradient check {other:?}"))),
    }
}

fn pca_case(rng: &mut ChaCha8Rng, opts: SuiteOptions) -> Result<GradCheckReport> {
    let cfg = AttnConfig {
        channels: 4,
        feat_channels: 3,
        heads: 2,
        points: 2,
        levels: 1,
    };
    let mut store = ParamStore::new();
    let w = PcaWeights::new(&mut store, "pca", cfg, OffsetSpace::Ego3d, rng)?;
    if opts.zero_weights {
        zero_store(&mut store);
    } else {
        for id in [w.offset_head.weight, w.offset_head.bias.expect("offset bias")] {
            let s = store.get(id).shape().to_vec();
            *store.get_mut(id) = rand_tensor(&s, -0.5, 0.5, rng);
        }
    }
    let cams = (0..2)
        .map(|k| CameraModel::looking(k as f64 * 1.1, [0.0, 0.0, 1.0], 1.8, (40, 30)))
        .collect();
    let rig = CameraRig::new(cams)?;
    let centers: Vec<[f64; 3]> = (0..3)
        .map(|_| [rng.random_range(3.0..10.0), rng.random_range(-3.0..8.0), rng.random_range(-0.5..1.5)])
        .collect();
    let extra = vec![
        rand_tensor(&[3, 4], -1.0, 1.0, rng),
        rand_tensor(&[3, 4], -1.0, 1.0, rng),
        rand_tensor(&[3, 15, 20], -1.0, 1.0, rng),
        rand_tensor(&[3, 15, 20], -1.0, 1.0, rng),
    ];
    let probe = rand_tensor(&[3, 4], -1.0, 1.0, rng).into_data();
    let np = store.len();
    grad_check_params(
        &store,
        &extra,
        |g, v| {
            let qs = QuerySet {
                features: v[np],
                pos_enc: v[np + 1],
                centers: centers.clone(),
                padded: 0,
            };
            let out = pca_forward(g, &qs, &[vec![v[np + 2], v[np + 3]]], &rig, &w)?;
            Ok(probe_sum(g, out.output, &probe, opts.corrupt))
        },
        GradCheckOptions::default(),
    )
}

/// One-layer detector on a rendered synthetic frame, loss w.r.t. every
/// weight tensor (a few coordinates each).
fn decoder_case(rng: &mut ChaCha8Rng, opts: SuiteOptions) -> Result<GradCheckReport> {
    let cfg = DetectorConfig {
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
    };
    let model = Detector::new(cfg, opts.seed)?;
    let mut store = model.store.clone();
    if opts.zero_weights {
        zero_store(&mut store);
    } else {
        // move the zero-initialized heads off zero and roughen the heatmap
        // so the selected queries are distinct
        for t in store.tensors_mut() {
            t.data_mut().iter_mut().for_each(|v| *v += rng.random_range(-0.15..0.15));
        }
        for lw in &model.layers {
            for id in [lw.cross.offset_head.weight, lw.cross.offset_head.bias.expect("offset bias")] {
                let s = store.get(id).shape().to_vec();
                *store.get_mut(id) = rand_tensor(&s, -1.0, 1.0, rng);
            }
        }
    }
    let scene = generate_scene(&SceneSpec {
        n_objects: 3,
        speed_range: [0.0, 2.0],
        ego_speed: 3.0,
        ego_yaw_rate: 0.0,
        duration: 1.0,
        frame_period: 0.5,
        min_distance: 4.0,
        n_classes: cfg.n_classes,
        seed: opts.seed,
        range: cfg.range,
        rig: RigSpec::desk(),
        render: RenderConfig::default(),
    })?;
    let features = render_features(&scene, 0.5, (16, 16))?;
    let rig = scene.rig.build()?;
    let pose = scene.ego_pose(0.5);
    let gt = scene.ground_truth(0.5);
    let input = crate::detector::FrameInput {
        features: &features,
        rig: &rig,
        pose: &pose,
    };
    grad_check_params(
        &store,
        &[],
        |g, _| {
            let out = model.forward(g, &input, None)?;
            let (l, _) = detection_loss(g, &out, &gt, &cfg, true)?;
            Ok(if opts.corrupt { g.corrupt_gradient(l, 1.5) } else { l })
        },
        GradCheckOptions {
            max_coords_per_input: Some(3),
            ..GradCheckOptions::default()
        },
    )
}
