use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::bev_init::BevGridSpec;
use crate::geometry::{valid_views, CameraRig};
use crate::numerics::{bilinear_sample, grad_check_params, GradCheckOptions, ParamStore, Tensor};

fn range() -> BevGridSpec {
    BevGridSpec {
        x_range: [-16.0, 16.0],
        y_range: [-16.0, 16.0],
        z_range: [-1.0, 3.0],
        resolution: [4, 16, 16],
    }
}

fn spec(seed: u64, n: usize) -> SceneSpec {
    SceneSpec {
        n_objects: n,
        speed_range: [0.0, 2.0],
        ego_speed: 3.0,
        ego_yaw_rate: 0.05,
        duration: 2.0,
        frame_period: 0.5,
        min_distance: 4.0,
        n_classes: 3,
        seed,
        range: range(),
        rig: RigSpec::desk(),
        render: RenderConfig::default(),
    }
}

fn still_scene(objects: Vec<ObjectTrack>) -> Scene {
    Scene {
        seed: 1,
        duration: 2.0,
        frame_period: 0.5,
        range: range(),
        rig: RigSpec::desk(),
        ego: EgoTrajectory {
            speed: 0.0,
            yaw_rate: 0.0,
        },
        render: RenderConfig::default(),
        n_classes: 3,
        objects,
    }
}

fn track(start: [f64; 3], velocity: [f64; 2]) -> ObjectTrack {
    ObjectTrack {
        class_id: 1,
        size: [1.0, 1.0, 1.5],
        start,
        velocity,
        yaw: 0.0,
    }
}

#[test]
fn generation_is_deterministic() {
    let a = generate_scene(&spec(7, 5)).unwrap();
    let b = generate_scene(&spec(7, 5)).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, generate_scene(&spec(8, 5)).unwrap());
    let fa = render_features(&a, 1.0, (32, 32)).unwrap();
    let fb = render_features(&b, 1.0, (32, 32)).unwrap();
    assert_eq!(fa, fb);
}

#[test]
fn empty_scene_has_no_ground_truth() {
    let s = generate_scene(&spec(3, 0)).unwrap();
    assert!(s.timestamps().iter().all(|&t| s.ground_truth(t).is_empty()));
    assert_eq!(s.n_frames(), 5);
}

#[test]
fn constant_velocity_kinematics() {
    let s = still_scene(vec![track([5.0, 2.0, 0.75], [1.0, 0.0])]);
    for k in 0..s.n_frames() {
        let gt = s.ground_truth(s.frame_time(k));
        assert!((gt[0].center[0] - (5.0 + 0.5 * k as f64)).abs() < 1e-12);
        assert_eq!(gt[0].velocity, [1.0, 0.0]);
    }
}

#[test]
fn static_world_gives_static_labels() {
    let s = still_scene(vec![track([5.0, 2.0, 0.75], [0.0, 0.0])]);
    let first = s.ground_truth(0.0);
    for t in s.timestamps() {
        assert_eq!(s.ground_truth(t), first);
    }
}

#[test]
fn far_objects_are_excluded() {
    let s = still_scene(vec![track([5.0, 2.0, 0.75], [0.0, 0.0]), track([30.0, 0.0, 0.75], [0.0, 0.0])]);
    assert_eq!(s.ground_truth(0.0).len(), 1);
}

#[test]
fn moving_ego_static_object_follows_inverse_motion() {
    let mut s = still_scene(vec![track([10.0, 3.0, 0.75], [0.0, 0.0])]);
    s.ego = EgoTrajectory {
        speed: 4.0,
        yaw_rate: 0.2,
    };
    for t in s.timestamps() {
        // ego on a circle of radius v/ω, heading ωt
        let (w, v) = (0.2f64, 4.0);
        let yaw = w * t;
        let (ex, ey) = (v / w * yaw.sin(), v / w * (1.0 - yaw.cos()));
        let (dx, dy) = (10.0 - ex, 3.0 - ey);
        let expect = [yaw.cos() * dx + yaw.sin() * dy, -yaw.sin() * dx + yaw.cos() * dy];
        let gt = s.ground_truth(t);
        assert!((gt[0].center[0] - expect[0]).abs() < 1e-12);
        assert!((gt[0].center[1] - expect[1]).abs() < 1e-12);
        assert!((gt[0].yaw + yaw).abs() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]
    #[test]
    fn objects_stay_within_twice_the_range(seed in any::<u64>(), n in 0usize..6) {
        let s = generate_scene(&spec(seed, n)).unwrap();
        prop_assert_eq!(s.objects.len(), n);
        for o in &s.objects {
            for t in s.timestamps() {
                let c = o.center_at(t);
                prop_assert!(c[0].abs() <= 32.0 && c[1].abs() <= 32.0);
            }
        }
    }

    #[test]
    fn blob_peak_is_at_projected_center(x in 4.0f64..14.0, y in -12.0f64..12.0, seed in 0u64..4) {
        let mut s = still_scene(vec![track([x, y, 0.75], [0.0, 0.0])]);
        s.seed = seed;
        let rig = s.rig.build().unwrap();
        let maps = render_features(&s, 0.0, (32, 32)).unwrap();
        let c = feature_channels(3);
        for (cam, map) in rig.cameras().iter().zip(&maps) {
            let p = cam.project([x, y, 0.75]);
            if !p.valid {
                continue;
            }
            let obj = &map.data()[3 * 32 * 32..4 * 32 * 32];
            let (best, _) = obj.iter().enumerate().fold((0, f64::MIN), |a, (i, &v)| if v > a.1 { (i, v) } else { a });
            let (su, sv) = cam.feature_scale(32, 32);
            let (bu, bv) = ((best % 32) as f64, (best / 32) as f64);
            prop_assert!((bu - p.uv[0] * su).abs() <= 1.0 && (bv - p.uv[1] * sv).abs() <= 1.0);
            prop_assert_eq!(map.shape(), &[c, 32, 32]);
        }
    }
}

#[test]
fn empty_scene_renders_constant_background() {
    let s = still_scene(Vec::new());
    for map in render_features(&s, 0.0, (32, 32)).unwrap() {
        let c = map.shape()[0];
        let plane = 32 * 32;
        assert!(map.data()[..(c - 1) * plane].iter().all(|&v| v == 0.0));
        assert!(map.data()[(c - 1) * plane..].iter().all(|&v| v == 1.0));
    }
}

#[test]
fn single_view_object_lights_only_that_view() {
    // straight left of the ego: inside the second camera only
    let s = still_scene(vec![track([0.0, 8.0, 0.75], [0.0, 0.0])]);
    let rig = s.rig.build().unwrap();
    assert_eq!(valid_views(&rig, [0.0, 8.0, 0.75]), vec![1]);
    let maps = render_features(&s, 0.0, (32, 32)).unwrap();
    let energy = |m: &Tensor| m.data()[3 * 1024..4 * 1024].iter().sum::<f64>();
    assert!(energy(&maps[1]) > 1.0);
    for v in [0, 2, 3] {
        assert_eq!(energy(&maps[v]), 0.0);
    }
}

#[test]
fn position_channels_encode_object_center() {
    let s = still_scene(vec![track([9.0, 0.5, 0.75], [0.0, 0.0])]);
    let rig = s.rig.build().unwrap();
    let cam = &rig.cameras()[0];
    let maps = render_features(&s, 0.0, (32, 32)).unwrap();
    let (su, sv) = cam.feature_scale(32, 32);
    let scale = RenderConfig::default().position_scale;
    // any point on the object's ray reads the object's center
    for p in [[9.0, 0.5, 0.75], [4.5, 0.25, 1.1]] {
        let pr = cam.project(p);
        let f = bilinear_sample(&maps[0], pr.uv[0] * su, pr.uv[1] * sv).unwrap();
        assert!(f[3] > 0.5);
        let gate = f[3] / (f[3] + 0.05);
        assert!((f[4] * scale / gate - 9.0).abs() < 0.3, "{}", f[4] * scale);
        assert!((f[5] * scale / gate - 0.5).abs() < 0.3);
    }
    let far = bilinear_sample(&maps[0], 1.0, 1.0).unwrap();
    assert!(far[4].abs() < 1e-9);
}

#[test]
fn nearer_object_occludes_farther_one() {
    // both centers on the forward camera's optical axis
    let near = track([5.0, 0.0, 1.5], [0.0, 0.0]);
    let far = track([12.0, 0.0, 1.5], [0.0, 0.0]);
    let both = render_features(&still_scene(vec![far, near]), 0.0, (32, 32)).unwrap();
    let alone = render_features(&still_scene(vec![near]), 0.0, (32, 32)).unwrap();
    let rig = RigSpec::desk().build().unwrap();
    let cam = &rig.cameras()[0];
    let (su, sv) = cam.feature_scale(32, 32);
    let pr = cam.project([5.0, 0.0, 1.5]);
    let read = |m: &Tensor| bilinear_sample(m, pr.uv[0] * su, pr.uv[1] * sv).unwrap();
    let (b, a) = (read(&both[0]), read(&alone[0]));
    let scale = RenderConfig::default().position_scale;
    // the position under the near blob stays within 10% of the near center
    let x = b[4] * scale * (b[3] + 0.05) / b[3];
    assert!((x - 5.0).abs() < 0.7, "{x}");
    assert!((b[3] - a[3]).abs() < 0.11 * a[3]);
}

#[test]
fn straddling_scene_meets_construction() {
    let s = straddling_scene(RigSpec::desk(), range(), RenderConfig::default()).unwrap();
    let rig: CameraRig = s.rig.build().unwrap();
    let b = s.ground_truth(0.0)[0];
    assert_eq!(valid_views(&rig, b.center), vec![0]);
    assert!(extent_fraction_in_view(&b, &rig.cameras()[1]) >= 0.3);
}

#[test]
fn ghosts_and_noise_are_seeded() {
    let mut sp = spec(11, 2);
    sp.render.ghost_rate = 2.0;
    sp.render.noise_std = 0.05;
    sp.render.amplitude_jitter = 0.2;
    let s = generate_scene(&sp).unwrap();
    let a = render_features(&s, 0.5, (32, 32)).unwrap();
    assert_eq!(a, render_features(&s, 0.5, (32, 32)).unwrap());
    assert_ne!(a, render_features(&s, 1.0, (32, 32)).unwrap());
    // clutter never shows up in the labels
    assert!(s.ground_truth(0.5).len() <= 2);
}

#[test]
fn renderer_counts_invocations() {
    let s = still_scene(Vec::new());
    let r = FrameRenderer::new(&s, (16, 16));
    r.render(0.0).unwrap();
    r.render(0.5).unwrap();
    assert_eq!(r.calls(), 2);
}

#[test]
fn scene_round_trips_through_toml() {
    let s = generate_scene(&spec(5, 3)).unwrap();
    let text = toml::to_string(&s).unwrap();
    let back: Scene = toml::from_str(&text).unwrap();
    assert_eq!(s, back);
}

#[test]
fn encoder_gradients_pass_check() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut store = ParamStore::new();
    let enc = FeatureEncoder::new(&mut store, "enc", 2, 3, 2, &mut rng);
    let x = Tensor::from_fn(&[2, 4, 5], |i| ((i * 7) % 11) as f64 / 11.0 - 0.4);
    let np = store.len();
    let rep = grad_check_params(
        &store,
        &[x],
        |g, v| {
            let y = enc.forward(g, v[np]);
            let y = g.square(y);
            Ok(g.sum(y))
        },
        GradCheckOptions::default(),
    )
    .unwrap();
    assert!(rep.pass, "{rep:?}");
}
