use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use super::render::RenderConfig;
use crate::bev_init::BevGridSpec;
use crate::boxes::{normalize_angle, Box3D};
use crate::error::{Error, Result};
use crate::geometry::{CameraModel, CameraRig, EgoPose, Pose};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraSpec {
    /// Optical-axis direction, radians from ego +x.
    pub heading: f64,
    pub position: [f64; 3],
    pub hfov: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RigSpec {
    pub cameras: Vec<CameraSpec>,
    /// (width, height) in pixels.
    pub image_size: (usize, usize),
}

impl RigSpec {
    /// `n` level cameras at equal heading spacing, all at `position`.
    pub fn ring(n: usize, position: [f64; 3], hfov: f64, image_size: (usize, usize)) -> Self {
        let cameras = (0..n)
            .map(|k| CameraSpec {
                heading: normalize_angle(2.0 * PI * k as f64 / n as f64),
                position,
                hfov,
            })
            .collect();
        Self { cameras, image_size }
    }

    /// Four cameras at 90° spacing, 100° field of view, 64×64 images.
    pub fn desk() -> Self {
        Self::ring(4, [0.0, 0.0, 1.5], 100f64.to_radians(), (64, 64))
    }

    pub fn build(&self) -> Result<CameraRig> {
        if self.cameras.iter().any(|c| !(c.hfov > 0.0 && c.hfov < PI)) {
            return Err(Error::Config("camera field of view must lie in (0, π)".into()));
        }
        CameraRig::new(
            self.cameras
                .iter()
                .map(|c| CameraModel::looking(c.heading, c.position, c.hfov, self.image_size))
                .collect(),
        )
    }
}

/// An object moving at constant world-frame velocity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectTrack {
    pub class_id: usize,
    pub size: [f64; 3],
    /// World-frame center at `t = 0`.
    pub start: [f64; 3],
    pub velocity: [f64; 2],
    pub yaw: f64,
}

impl ObjectTrack {
    pub fn center_at(&self, t: f64) -> [f64; 3] {
        [
            self.start[0] + self.velocity[0] * t,
            self.start[1] + self.velocity[1] * t,
            self.start[2],
        ]
    }

    /// World-frame box at time `t`.
    pub fn box_at(&self, t: f64) -> Box3D {
        let mut b = Box3D::new(self.center_at(t), self.size, self.yaw, self.class_id);
        b.velocity = self.velocity;
        b
    }
}

/// Constant speed along the ego heading with constant yaw rate, starting at
/// the world origin facing +x.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EgoTrajectory {
    pub speed: f64,
    pub yaw_rate: f64,
}

impl EgoTrajectory {
    pub fn pose_at(&self, t: f64) -> EgoPose {
        let w = self.yaw_rate;
        let yaw = w * t;
        let (x, y) = if w.abs() < 1e-9 {
            (self.speed * t, 0.0)
        } else {
            let r = self.speed / w;
            (r * yaw.sin(), r * (1.0 - yaw.cos()))
        };
        EgoPose {
            world_from_ego: Pose::from_yaw(yaw, [x, y, 0.0]),
            timestamp: t,
        }
    }
}

/// Everything needed to regenerate frames and labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub seed: u64,
    pub duration: f64,
    pub frame_period: f64,
    pub range: BevGridSpec,
    pub rig: RigSpec,
    pub ego: EgoTrajectory,
    pub render: RenderConfig,
    pub n_classes: usize,
    #[serde(default)]
    pub objects: Vec<ObjectTrack>,
}

impl Scene {
    pub fn validate(&self) -> Result<()> {
        if !(self.frame_period > 0.0) || !(self.duration >= 0.0) {
            return Err(Error::Config("frame_period must be positive and duration non-negative".into()));
        }
        self.range.validate()?;
        self.rig.build()?;
        if self.objects.iter().any(|o| o.class_id >= self.n_classes) {
            return Err(Error::Config("object class out of range".into()));
        }
        Ok(())
    }

    pub fn n_frames(&self) -> usize {
        (self.duration / self.frame_period + 1e-9).floor() as usize + 1
    }

    pub fn frame_time(&self, k: usize) -> f64 {
        k as f64 * self.frame_period
    }

    pub fn timestamps(&self) -> Vec<f64> {
        (0..self.n_frames()).map(|k| self.frame_time(k)).collect()
    }

    pub fn ego_pose(&self, t: f64) -> EgoPose {
        self.ego.pose_at(t)
    }

    /// Boxes in the ego frame at `t`, restricted to the perception range.
    /// Velocities are world-frame velocities rotated into the ego frame.
    pub fn ground_truth(&self, t: f64) -> Vec<Box3D> {
        let pose = self.ego_pose(t).world_from_ego;
        let ego_from_world = pose.inverse();
        let yaw = pose.yaw();
        self.objects
            .iter()
            .filter_map(|o| {
                let c = ego_from_world.apply(o.center_at(t));
                if !self.range.contains_bev(c[0], c[1]) || c[2] < self.range.z_range[0] || c[2] > self.range.z_range[1] {
                    return None;
                }
                let v = ego_from_world.rotate([o.velocity[0], o.velocity[1], 0.0]);
                let mut b = Box3D::new(c, o.size, o.yaw - yaw, o.class_id);
                b.velocity = [v[0], v[1]];
                Some(b)
            })
            .collect()
    }
}

/// Knobs for [`generate_scene`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub n_objects: usize,
    /// Object speed range, m/s.
    pub speed_range: [f64; 2],
    pub ego_speed: f64,
    pub ego_yaw_rate: f64,
    pub duration: f64,
    pub frame_period: f64,
    /// Objects spawn at least this far from the ego, meters.
    pub min_distance: f64,
    pub n_classes: usize,
    pub seed: u64,
    pub range: BevGridSpec,
    pub rig: RigSpec,
    pub render: RenderConfig,
}

/// Nominal (w, l, h) per class.
pub fn class_size(class_id: usize) -> [f64; 3] {
    match class_id % 3 {
        0 => [1.9, 4.2, 1.6],
        1 => [0.8, 0.8, 1.8],
        _ => [0.9, 1.9, 1.4],
    }
}

/// Random constant-velocity objects placed so that their whole trajectory
/// stays inside a box twice the perception range.
pub fn generate_scene(spec: &SceneSpec) -> Result<Scene> {
    if spec.n_classes == 0 {
        return Err(Error::Config("n_classes must be positive".into()));
    }
    if spec.speed_range[0] < 0.0 || spec.speed_range[1] < spec.speed_range[0] {
        return Err(Error::Config("invalid speed range".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let ego = EgoTrajectory {
        speed: spec.ego_speed,
        yaw_rate: spec.ego_yaw_rate,
    };
    let r = &spec.range;
    let outer = |p: [f64; 3]| {
        let (cx, cy) = ((r.x_range[0] + r.x_range[1]) / 2.0, (r.y_range[0] + r.y_range[1]) / 2.0);
        (p[0] - cx).abs() <= r.x_range[1] - r.x_range[0] && (p[1] - cy).abs() <= r.y_range[1] - r.y_range[0]
    };
    // sample around the ego position halfway through the scene
    let mid = ego.pose_at(spec.duration / 2.0).world_from_ego;
    let mut objects = Vec::with_capacity(spec.n_objects);
    let mut attempts = 0;
    while objects.len() < spec.n_objects {
        attempts += 1;
        if attempts > 10_000 {
            return Err(Error::Config("could not place objects; range too small".into()));
        }
        let class_id = rng.random_range(0..spec.n_classes);
        let base = class_size(class_id);
        let size = base.map(|s| s * rng.random_range(0.9..1.1));
        let local = [
            rng.random_range(r.x_range[0] * 0.9..r.x_range[1] * 0.9),
            rng.random_range(r.y_range[0] * 0.9..r.y_range[1] * 0.9),
            size[2] / 2.0,
        ];
        if (local[0] * local[0] + local[1] * local[1]).sqrt() < spec.min_distance {
            continue;
        }
        let speed = rng.random_range(spec.speed_range[0]..=spec.speed_range[1]);
        let heading = rng.random_range(-PI..PI);
        let velocity = [speed * heading.cos(), speed * heading.sin()];
        let at_mid = mid.apply(local);
        let half = spec.duration / 2.0;
        let start = [at_mid[0] - velocity[0] * half, at_mid[1] - velocity[1] * half, at_mid[2]];
        let track = ObjectTrack {
            class_id,
            size,
            start,
            velocity,
            yaw: normalize_angle(heading),
        };
        if !outer(track.center_at(0.0)) || !outer(track.center_at(spec.duration)) {
            continue;
        }
        // keep objects from overlapping at mid-scene
        if objects
            .iter()
            .any(|o: &ObjectTrack| o.box_at(half).bev_distance(&track.box_at(half)) < 3.0)
        {
            continue;
        }
        objects.push(track);
    }
    let scene = Scene {
        seed: spec.seed,
        duration: spec.duration,
        frame_period: spec.frame_period,
        range: spec.range,
        rig: spec.rig.clone(),
        ego,
        render: spec.render,
        n_classes: spec.n_classes,
        objects,
    };
    scene.validate()?;
    Ok(scene)
}

/// Fraction of points on a regular lattice through the box volume that
/// project validly into `cam`.
pub fn extent_fraction_in_view(b: &Box3D, cam: &CameraModel) -> f64 {
    let (s, c) = b.yaw.sin_cos();
    let n = 7;
    let mut hit = 0;
    let mut total = 0;
    for a in 0..n {
        for k in 0..n {
            for m in 0..3 {
                let lx = (k as f64 / (n - 1) as f64 - 0.5) * b.size[1];
                let ly = (a as f64 / (n - 1) as f64 - 0.5) * b.size[0];
                let lz = (m as f64 / 2.0 - 0.5) * b.size[2];
                let p = [b.center[0] + c * lx - s * ly, b.center[1] + s * lx + c * ly, b.center[2] + lz];
                total += 1;
                hit += cam.project(p).valid as usize;
            }
        }
    }
    hit as f64 / total as f64
}

/// A static scene with one large object whose center is seen by exactly one
/// camera of `rig` while a large part of its body falls in the neighbouring
/// camera. The object sits on the seam between views `0` and `1`.
pub fn straddling_scene(rig: RigSpec, range: BevGridSpec, render: RenderConfig) -> Result<Scene> {
    let built = rig.build()?;
    if built.n_views() < 2 {
        return Err(Error::Config("straddling needs at least two cameras".into()));
    }
    let (h0, h1) = (rig.cameras[0].heading, rig.cameras[1].heading);
    let half_fov = rig.cameras[0].hfov / 2.0;
    let dist = 0.4 * range.x_range[1].min(range.y_range[1]).max(5.0);
    let size = [1.6, 7.0, 1.6];
    let towards = (normalize_angle(h1 - h0)).signum();
    // walk the bearing towards the seam until view 1 stops seeing the center
    let mut bearing = h0;
    let mut best = None;
    while (bearing - h0).abs() < half_fov {
        let center = [dist * bearing.cos(), dist * bearing.sin(), size[2] / 2.0];
        let b = Box3D::new(center, size, bearing + PI / 2.0, 0);
        let views = crate::geometry::valid_views(&built, center);
        if views == [0] {
            let f = extent_fraction_in_view(&b, &built.cameras()[1]);
            if best.is_none_or(|(bf, _): (f64, ObjectTrack)| f > bf) {
                best = Some((
                    f,
                    ObjectTrack {
                        class_id: 0,
                        size,
                        start: center,
                        velocity: [0.0, 0.0],
                        yaw: b.yaw,
                    },
                ));
            }
        }
        bearing += towards * 0.01;
    }
    let (_, track) = best.ok_or_else(|| Error::Config("no straddling placement found".into()))?;
    Ok(Scene {
        seed: 0,
        duration: 0.0,
        frame_period: 0.5,
        range,
        rig,
        ego: EgoTrajectory {
            speed: 0.0,
            yaw_rate: 0.0,
        },
        render,
        n_classes: 1,
        objects: vec![track],
    })
}
