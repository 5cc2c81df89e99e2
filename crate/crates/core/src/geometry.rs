//! Pinhole camera rig, the 3D-to-2D projection operator with validity
//! masking, and SE(3) ego-motion algebra.
//!
//! Frames: the ego frame is x forward, y left, z up (meters). Camera frames
//! are x right, y down, z along the optical axis. Pixel coordinates have
//! pixel `i` centered at `u = i`, so an image of width `W` spans
//! `[0, W - 1]` (closed).

use nalgebra::{Matrix3, Rotation3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Graph, Tensor, Var};

/// Points at or nearer than this depth (meters) never project validly.
pub const DEPTH_EPSILON: f64 = 1e-3;

const ORTHO_TOL: f64 = 1e-9;

/// Rigid transform `target_from_source`: `p_target = R p_source + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        check_rotation(&rotation)?;
        if !translation.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("pose translation"));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn from_translation(t: [f64; 3]) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::from(t),
        }
    }

    /// Rotation about +z by `yaw` radians followed by translation.
    pub fn from_yaw(yaw: f64, t: [f64; 3]) -> Self {
        Self {
            rotation: *Rotation3::from_axis_angle(&Vector3::z_axis(), yaw).matrix(),
            translation: Vector3::from(t),
        }
    }

    /// Rotation from roll/pitch/yaw (applied as `Rz(yaw) Ry(pitch) Rx(roll)`).
    pub fn from_euler(roll: f64, pitch: f64, yaw: f64, t: [f64; 3]) -> Self {
        Self {
            rotation: *Rotation3::from_euler_angles(roll, pitch, yaw).matrix(),
            translation: Vector3::from(t),
        }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> [f64; 3] {
        [self.translation.x, self.translation.y, self.translation.z]
    }

    /// Heading of the rotated x axis in the xy plane.
    pub fn yaw(&self) -> f64 {
        self.rotation[(1, 0)].atan2(self.rotation[(0, 0)])
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    pub fn apply(&self, p: [f64; 3]) -> [f64; 3] {
        let q = self.rotation * Vector3::from(p) + self.translation;
        [q.x, q.y, q.z]
    }

    /// Rotation only (for directions and velocities).
    pub fn rotate(&self, d: [f64; 3]) -> [f64; 3] {
        let q = self.rotation * Vector3::from(d);
        [q.x, q.y, q.z]
    }

    pub fn validate(&self) -> Result<()> {
        check_rotation(&self.rotation)
    }

    /// Row-major rotation and translation, for serialization.
    pub fn to_parts(&self) -> ([[f64; 3]; 3], [f64; 3]) {
        let r = &self.rotation;
        (
            [
                [r[(0, 0)], r[(0, 1)], r[(0, 2)]],
                [r[(1, 0)], r[(1, 1)], r[(1, 2)]],
                [r[(2, 0)], r[(2, 1)], r[(2, 2)]],
            ],
            self.translation(),
        )
    }

    pub fn from_parts(rot: [[f64; 3]; 3], t: [f64; 3]) -> Result<Self> {
        let m = Matrix3::new(
            rot[0][0], rot[0][1], rot[0][2], rot[1][0], rot[1][1], rot[1][2], rot[2][0], rot[2][1],
            rot[2][2],
        );
        Self::new(m, Vector3::from(t))
    }
}

fn check_rotation(r: &Matrix3<f64>) -> Result<()> {
    if !r.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("rotation"));
    }
    let err = (r.transpose() * r - Matrix3::identity()).abs().max();
    if err > ORTHO_TOL {
        return Err(Error::InvalidRotation(format!("RᵀR deviates from I by {err:e}")));
    }
    let det = r.determinant();
    if (det - 1.0).abs() > ORTHO_TOL {
        return Err(Error::InvalidRotation(format!("det = {det}")));
    }
    Ok(())
}

/// Ego pose in the world at a timestamp (seconds).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EgoPose {
    pub world_from_ego: Pose,
    pub timestamp: f64,
}

impl EgoPose {
    pub fn new(world_from_ego: Pose, timestamp: f64) -> Result<Self> {
        world_from_ego.validate()?;
        Ok(Self {
            world_from_ego,
            timestamp,
        })
    }
}

/// Transform taking current-ego coordinates to past-ego coordinates.
pub fn past_from_now(pose_now: &EgoPose, pose_past: &EgoPose) -> Pose {
    pose_past.world_from_ego.inverse().compose(&pose_now.world_from_ego)
}

/// Expresses a point given in the ego frame at `pose_now` in the ego frame at
/// `pose_past`.
pub fn align_center_to_past(center_now: [f64; 3], pose_now: &EgoPose, pose_past: &EgoPose) -> [f64; 3] {
    past_from_now(pose_now, pose_past).apply(center_now)
}

/// Pinhole intrinsics in pixels, zero skew.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Intrinsics {
    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CameraModel {
    pub intrinsics: Intrinsics,
    ego_from_cam: Pose,
    cam_from_ego: Pose,
    /// (width, height) in pixels.
    pub image_size: (usize, usize),
}

/// Camera x (right), y (down), z (forward) expressed in the ego frame for a
/// level camera facing `heading` radians from ego +x.
fn level_camera_rotation(heading: f64) -> Matrix3<f64> {
    let (s, c) = heading.sin_cos();
    Matrix3::new(s, 0.0, c, -c, 0.0, s, 0.0, -1.0, 0.0)
}

impl CameraModel {
    pub fn new(intrinsics: Intrinsics, ego_from_cam: Pose, image_size: (usize, usize)) -> Result<Self> {
        if !(intrinsics.fx > 0.0 && intrinsics.fy > 0.0) {
            return Err(Error::Config("focal lengths must be positive".into()));
        }
        if image_size.0 == 0 || image_size.1 == 0 {
            return Err(Error::Config("image size must be positive".into()));
        }
        ego_from_cam.validate()?;
        Ok(Self {
            intrinsics,
            cam_from_ego: ego_from_cam.inverse(),
            ego_from_cam,
            image_size,
        })
    }

    /// Level camera at `position` looking along `heading` with the given
    /// horizontal field of view; principal point at the image center.
    pub fn looking(heading: f64, position: [f64; 3], hfov: f64, image_size: (usize, usize)) -> Self {
        let cx = (image_size.0 as f64 - 1.0) / 2.0;
        let cy = (image_size.1 as f64 - 1.0) / 2.0;
        let f = cx / (hfov / 2.0).tan();
        let pose = Pose {
            rotation: level_camera_rotation(heading),
            translation: Vector3::from(position),
        };
        Self::new(Intrinsics { fx: f, fy: f, cx, cy }, pose, image_size).expect("level camera is valid")
    }

    pub fn ego_from_cam(&self) -> &Pose {
        &self.ego_from_cam
    }

    pub fn cam_from_ego(&self) -> &Pose {
        &self.cam_from_ego
    }

    pub fn project(&self, point_ego: [f64; 3]) -> CameraProjection {
        let pc = self.cam_from_ego.apply(point_ego);
        let depth = pc[2];
        if depth <= DEPTH_EPSILON {
            return CameraProjection {
                uv: [f64::NAN, f64::NAN],
                depth,
                valid: false,
            };
        }
        let k = &self.intrinsics;
        let uv = [k.fx * pc[0] / depth + k.cx, k.fy * pc[1] / depth + k.cy];
        CameraProjection {
            uv,
            depth,
            valid: self.in_bounds(uv),
        }
    }

    /// Closed image bounds `[0, W-1] × [0, H-1]`.
    pub fn in_bounds(&self, uv: [f64; 2]) -> bool {
        let (w, h) = self.image_size;
        uv[0] >= 0.0 && uv[0] <= (w - 1) as f64 && uv[1] >= 0.0 && uv[1] <= (h - 1) as f64
    }

    /// Factor from image pixels to the pixels of a `[.., hf, wf]` feature map.
    pub fn feature_scale(&self, feat_w: usize, feat_h: usize) -> (f64, f64) {
        let (w, h) = self.image_size;
        let su = if w > 1 { (feat_w as f64 - 1.0) / (w as f64 - 1.0) } else { 1.0 };
        let sv = if h > 1 { (feat_h as f64 - 1.0) / (h as f64 - 1.0) } else { 1.0 };
        (su, sv)
    }

    /// Viewing direction of the optical axis in the ego frame.
    pub fn heading(&self) -> f64 {
        let z = self.ego_from_cam.rotate([0.0, 0.0, 1.0]);
        z[1].atan2(z[0])
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraProjection {
    pub uv: [f64; 2],
    pub depth: f64,
    pub valid: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViewProjection {
    pub view: usize,
    pub uv: [f64; 2],
    pub depth: f64,
    pub valid: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CameraRig {
    cameras: Vec<CameraModel>,
}

impl CameraRig {
    pub fn new(cameras: Vec<CameraModel>) -> Result<Self> {
        if cameras.is_empty() {
            return Err(Error::Empty("camera rig"));
        }
        Ok(Self { cameras })
    }

    pub fn cameras(&self) -> &[CameraModel] {
        &self.cameras
    }

    pub fn n_views(&self) -> usize {
        self.cameras.len()
    }

    /// `n` level cameras evenly spaced in heading, starting at ego +x.
    pub fn ring(n: usize, position: [f64; 3], hfov: f64, image_size: (usize, usize)) -> Self {
        let cams = (0..n)
            .map(|i| {
                let heading = 2.0 * std::f64::consts::PI * i as f64 / n as f64;
                CameraModel::looking(heading, position, hfov, image_size)
            })
            .collect();
        Self::new(cams).expect("ring with n >= 1")
    }
}

/// Projects an ego-frame point into every view of the rig.
pub fn project(rig: &CameraRig, point_ego: [f64; 3]) -> Vec<ViewProjection> {
    rig.cameras
        .iter()
        .enumerate()
        .map(|(view, cam)| {
            let p = cam.project(point_ego);
            ViewProjection {
                view,
                uv: p.uv,
                depth: p.depth,
                valid: p.valid,
            }
        })
        .collect()
}

/// Indices of the views in which the point projects validly.
pub fn valid_views(rig: &CameraRig, point_ego: [f64; 3]) -> Vec<usize> {
    project(rig, point_ego)
        .into_iter()
        .filter(|p| p.valid)
        .map(|p| p.view)
        .collect()
}

/// Placeholder coordinate for invalid projections: far outside any map, so
/// bilinear sampling reads zero there.
pub const OFF_IMAGE: f64 = -1.0e4;

impl Graph {
    /// Differentiable projection of `points [P, 3]` (ego frame) through one
    /// camera, scaled into feature-map pixels by `(su, sv)`. Invalid rows get
    /// [`OFF_IMAGE`] coordinates with zero gradient; the mask is returned.
    pub fn project_points(&mut self, points: Var, cam: &CameraModel, scale: (f64, f64)) -> (Var, Vec<bool>) {
        let pts = self.value(points);
        assert_eq!(pts.last_dim(), 3, "points must be [P,3]");
        let n = pts.numel() / 3;
        let pd = pts.data().to_vec();
        let r = cam.cam_from_ego.rotation;
        let k = cam.intrinsics;
        let (su, sv) = scale;
        let mut uv = vec![OFF_IMAGE; 2 * n];
        let mut valid = vec![false; n];
        // per-row jacobian d(u,v)/d(point)
        let mut jac = vec![[0.0f64; 6]; n];
        for i in 0..n {
            let p = [pd[3 * i], pd[3 * i + 1], pd[3 * i + 2]];
            let pc = cam.cam_from_ego.apply(p);
            let z = pc[2];
            if z <= DEPTH_EPSILON || !z.is_finite() {
                continue;
            }
            let u_img = k.fx * pc[0] / z + k.cx;
            let v_img = k.fy * pc[1] / z + k.cy;
            uv[2 * i] = u_img * su;
            uv[2 * i + 1] = v_img * sv;
            valid[i] = cam.in_bounds([u_img, v_img]);
            for j in 0..3 {
                jac[i][j] = su * k.fx * (r[(0, j)] / z - pc[0] * r[(2, j)] / (z * z));
                jac[i][3 + j] = sv * k.fy * (r[(1, j)] / z - pc[1] * r[(2, j)] / (z * z));
            }
        }
        let out = Tensor::new(&[n, 2], uv).expect("uv shape");
        let var = self.push_op(out, &[points], move |g| {
            let mut gp = vec![0.0; 3 * n];
            for i in 0..n {
                for j in 0..3 {
                    gp[3 * i + j] = g[2 * i] * jac[i][j] + g[2 * i + 1] * jac[i][3 + j];
                }
            }
            vec![gp]
        });
        (var, valid)
    }
}
