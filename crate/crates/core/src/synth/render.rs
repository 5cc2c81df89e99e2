use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};
use std::cell::Cell;

use super::scene::{class_size, Scene};
use crate::boxes::Box3D;
use crate::error::Result;
use crate::geometry::{CameraModel, DEPTH_EPSILON};
use crate::numerics::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RenderConfig {
    /// Blob radius in feature pixels per (focal · object radius / depth).
    pub sigma_scale: f64,
    pub min_sigma: f64,
    /// Standard deviation of per-pixel Gaussian noise on object channels.
    pub noise_std: f64,
    /// Blob amplitude is drawn uniformly from `1 ± amplitude_jitter` per frame.
    pub amplitude_jitter: f64,
    /// Mean number of transient clutter blobs per frame (Poisson).
    pub ghost_rate: f64,
    /// Meters per unit in the position channels.
    pub position_scale: f64,
    /// Opacity of a blob's core (inside its half maximum), fading outside;
    /// nearer objects are composited over farther ones.
    #[serde(default = "default_occlusion")]
    pub occlusion: f64,
}

fn default_occlusion() -> f64 {
    1.0
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            sigma_scale: 0.6,
            min_sigma: 0.7,
            noise_std: 0.0,
            amplitude_jitter: 0.0,
            ghost_rate: 0.0,
            position_scale: 8.0,
            occlusion: default_occlusion(),
        }
    }
}

/// Channels of a rendered map: one per class, objectness, three ego-frame
/// position channels, and a constant background channel.
pub fn feature_channels(n_classes: usize) -> usize {
    n_classes + 5
}

const STREAM_GHOSTS: u64 = 1;
const STREAM_AMPLITUDE: u64 = 2;
const STREAM_NOISE: u64 = 3;

/// Blob weight below which the position channels fade towards zero.
const POSITION_FLOOR: f64 = 0.05;

fn frame_rng(seed: u64, frame: usize, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(frame as u64 * 64 + stream);
    rng
}

/// Transient blobs of frame `k`, already in the ego frame.
fn ghosts(scene: &Scene, frame: usize) -> Vec<Box3D> {
    let rate = scene.render.ghost_rate;
    if rate <= 0.0 {
        return Vec::new();
    }
    let mut rng = frame_rng(scene.seed, frame, STREAM_GHOSTS);
    let n = Poisson::new(rate).map(|p| p.sample(&mut rng) as usize).unwrap_or(0);
    let r = &scene.range;
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let x = rng.random_range(r.x_range[0] * 0.9..r.x_range[1] * 0.9);
        let y = rng.random_range(r.y_range[0] * 0.9..r.y_range[1] * 0.9);
        if x.hypot(y) < 3.0 {
            continue;
        }
        let class_id = rng.random_range(0..scene.n_classes);
        let size = class_size(class_id);
        out.push(Box3D::new([x, y, size[2] / 2.0], size, 0.0, class_id));
    }
    out
}

/// Splats one box into a view's map, attenuated by what is already in
/// front of it (`transmit`, per pixel). Position channels receive the
/// weighted center sum; `render_features` normalizes them afterwards.
fn splat(
    map: &mut [f64],
    transmit: &mut [f64],
    dims: (usize, usize, usize),
    cam: &CameraModel,
    b: &Box3D,
    amp: f64,
    cfg: &RenderConfig,
) {
    let (c, hf, wf) = dims;
    let pc = cam.cam_from_ego().apply(b.center);
    let z = pc[2];
    if z <= DEPTH_EPSILON {
        return;
    }
    let k = cam.intrinsics;
    let (su, sv) = cam.feature_scale(wf, hf);
    let u0 = (k.fx * pc[0] / z + k.cx) * su;
    let v0 = (k.fy * pc[1] / z + k.cy) * sv;
    let radius = 0.5 * b.size[0].max(b.size[1]);
    let sigma = (cfg.sigma_scale * k.fx * su * radius / z).max(cfg.min_sigma);
    let reach = 3.0 * sigma;
    let (i0, i1) = ((u0 - reach).floor().max(0.0), (u0 + reach).ceil().min(wf as f64 - 1.0));
    let (j0, j1) = ((v0 - reach).floor().max(0.0), (v0 + reach).ceil().min(hf as f64 - 1.0));
    if i0 > i1 || j0 > j1 {
        return;
    }
    let n_cls = c - 5;
    let plane = hf * wf;
    for j in j0 as usize..=j1 as usize {
        for i in i0 as usize..=i1 as usize {
            let (du, dv) = (i as f64 - u0, j as f64 - v0);
            let shape = (-(du * du + dv * dv) / (2.0 * sigma * sigma)).exp();
            let px = j * wf + i;
            let w = amp * shape * transmit[px];
            transmit[px] *= 1.0 - cfg.occlusion * (2.0 * shape).min(1.0);
            map[(b.class_id % n_cls) * plane + px] += w;
            map[n_cls * plane + px] += w;
            for a in 0..3 {
                map[(n_cls + 1 + a) * plane + px] += w * b.center[a] / cfg.position_scale;
            }
        }
    }
}

/// Per-view feature maps `[C, H, W]` of `scene` at time `t`, at feature
/// resolution `(width, height)`.
pub fn render_features(scene: &Scene, t: f64, resolution: (usize, usize)) -> Result<Vec<Tensor>> {
    let rig = scene.rig.build()?;
    let (wf, hf) = resolution;
    let c = feature_channels(scene.n_classes);
    let frame = (t / scene.frame_period).round().max(0.0) as usize;
    let cfg = &scene.render;
    let mut boxes: Vec<(Box3D, f64)> = Vec::new();
    let mut amp_rng = frame_rng(scene.seed, frame, STREAM_AMPLITUDE);
    let ego_from_world = scene.ego_pose(t).world_from_ego.inverse();
    for o in &scene.objects {
        let mut b = o.box_at(t);
        b.center = ego_from_world.apply(b.center);
        let amp = 1.0 + cfg.amplitude_jitter * amp_rng.random_range(-1.0..=1.0);
        boxes.push((b, amp));
    }
    for g in ghosts(scene, frame) {
        let amp = 1.0 + cfg.amplitude_jitter * amp_rng.random_range(-1.0..=1.0);
        boxes.push((g, amp));
    }
    let noise = Normal::new(0.0, cfg.noise_std.max(0.0)).expect("noise std");
    let plane = hf * wf;
    let mut out = Vec::with_capacity(rig.n_views());
    for (view, cam) in rig.cameras().iter().enumerate() {
        let mut map = vec![0.0; c * plane];
        let mut transmit = vec![1.0; plane];
        let mut order: Vec<(f64, usize)> = boxes
            .iter()
            .enumerate()
            .map(|(k, (b, _))| (cam.cam_from_ego().apply(b.center)[2], k))
            .collect();
        order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for (_, k) in order {
            let (b, amp) = &boxes[k];
            splat(&mut map, &mut transmit, (c, hf, wf), cam, b, *amp, cfg);
        }
        let n_cls = c - 5;
        for px in 0..plane {
            let norm = map[n_cls * plane + px] + POSITION_FLOOR;
            for a in 0..3 {
                map[(n_cls + 1 + a) * plane + px] /= norm;
            }
        }
        if cfg.noise_std > 0.0 {
            let mut rng = frame_rng(scene.seed, frame, STREAM_NOISE + view as u64);
            for v in &mut map[..(c - 1) * plane] {
                *v += noise.sample(&mut rng);
            }
        }
        map[(c - 1) * plane..].fill(1.0);
        out.push(Tensor::new(&[c, hf, wf], map)?);
    }
    Ok(out)
}

/// Renders frames of one scene and counts how often it did so.
pub struct FrameRenderer<'a> {
    scene: &'a Scene,
    resolution: (usize, usize),
    calls: Cell<usize>,
}

impl<'a> FrameRenderer<'a> {
    pub fn new(scene: &'a Scene, resolution: (usize, usize)) -> Self {
        Self {
            scene,
            resolution,
            calls: Cell::new(0),
        }
    }

    pub fn scene(&self) -> &Scene {
        self.scene
    }

    pub fn render(&self, t: f64) -> Result<Vec<Tensor>> {
        self.calls.set(self.calls.get() + 1);
        render_features(self.scene, t, self.resolution)
    }

    pub fn calls(&self) -> usize {
        self.calls.get()
    }
}
