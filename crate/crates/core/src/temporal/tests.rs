use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::bev_init::BevGridSpec;
use crate::detector::{Detector, DetectorConfig};
use crate::geometry::{CameraRig, EgoPose, Pose};
use crate::numerics::Tensor;
use crate::query::QueryState;
use crate::synth::{generate_scene, FrameRenderer, RenderConfig, RigSpec, SceneSpec};

fn record(t: f64) -> FrameRecord {
    FrameRecord {
        timestamp: t,
        queries: QueryState {
            features: Tensor::zeros(&[1, 2]),
            centers: vec![[t, 0.0, 0.0]],
        },
        features: Vec::new(),
        ego_pose: EgoPose::new(Pose::identity(), t).unwrap(),
        rig: CameraRig::ring(1, [0.0; 3], 1.5, (8, 8)),
    }
}

fn bank_with(times: &[f64]) -> MemoryBank {
    let mut b = MemoryBank::new(8, 2.5).unwrap();
    for &t in times {
        b.push(record(t)).unwrap();
    }
    b
}

#[test]
fn default_interval_is_one_and_a_half_seconds() {
    let tc = crate::detector::TemporalConfig::default();
    assert_eq!(tc.interval, 1.5);
    assert_eq!(tc.train_window, 2.0);
    assert_eq!((tc.memory_capacity, tc.memory_horizon), (8, 2.5));
}

#[test]
fn push_to_empty_bank() {
    let b = bank_with(&[0.0]);
    assert_eq!(b.len(), 1);
}

#[test]
fn fifth_push_evicts_oldest_at_capacity_four() {
    let mut b = MemoryBank::new(4, 100.0).unwrap();
    for t in 0..5 {
        b.push(record(t as f64)).unwrap();
    }
    assert_eq!(b.timestamps(), vec![1.0, 2.0, 3.0, 4.0]);
}

#[test]
fn horizon_evicts_stale_records() {
    let mut b = MemoryBank::new(8, 2.0).unwrap();
    b.push(record(0.0)).unwrap();
    b.push(record(1.0)).unwrap();
    b.push(record(2.5)).unwrap();
    // 2.5 − 0.0 > 2.0 drops the first; 2.5 − 1.0 stays
    assert_eq!(b.timestamps(), vec![1.0, 2.5]);
    b.push(record(3.0)).unwrap();
    assert_eq!(b.timestamps(), vec![1.0, 2.5, 3.0]);
}

#[test]
fn out_of_order_push_is_rejected() {
    let mut b = bank_with(&[1.0]);
    assert!(matches!(b.push(record(1.0)), Err(crate::Error::OutOfOrder { .. })));
    assert!(b.push(record(0.5)).is_err());
    assert!(b.push(record(f64::NAN)).is_err());
    assert_eq!(b.len(), 1);
    assert!(MemoryBank::new(0, 1.0).is_err());
}

#[test]
fn fetch_from_empty_bank() {
    assert!(bank_with(&[]).fetch(3.0, 1.5).is_none());
}

#[test]
fn fetch_picks_closest_interval() {
    let b = bank_with(&[1.0, 1.5, 2.0, 2.5]);
    assert_eq!(b.fetch(3.0, 1.5).unwrap().timestamp, 1.5);
    assert_eq!(b.fetch(3.0, 0.0).unwrap().timestamp, 2.5);
    assert_eq!(b.fetch(3.0, 10.0).unwrap().timestamp, 1.0);
}

#[test]
fn fetch_ties_go_to_older_record() {
    let b = bank_with(&[1.0, 2.0]);
    assert_eq!(b.fetch(3.0, 1.5).unwrap().timestamp, 1.0);
}

#[test]
fn fetch_skips_future_records() {
    let b = bank_with(&[1.0, 2.0, 4.0]);
    assert_eq!(b.fetch(3.0, 0.0).unwrap().timestamp, 2.0);
    assert!(b.fetch(0.5, 0.0).is_none());
}

fn nearest_oracle(times: &[f64], now: f64, interval: f64) -> Option<f64> {
    let mut best: Option<f64> = None;
    for &t in times.iter().filter(|&&t| t <= now) {
        let d = ((now - t) - interval).abs();
        match best {
            Some(b) if ((now - b) - interval).abs() < d => {}
            Some(b) if ((now - b) - interval).abs() == d && b < t => {}
            _ => best = Some(t),
        }
    }
    best
}

proptest! {
    #[test]
    fn bank_invariants(steps in prop::collection::vec(0.05f64..1.5, 1..30), cap in 1usize..6, horizon in 0.0f64..4.0, now_off in -1.0f64..3.0, interval in 0.0f64..3.0) {
        let mut b = MemoryBank::new(cap, horizon).unwrap();
        let mut t = 0.0;
        for dt in &steps {
            t += dt;
            b.push(record(t)).unwrap();
            let ts = b.timestamps();
            prop_assert!(ts.len() <= cap && !ts.is_empty());
            prop_assert!(ts.windows(2).all(|w| w[0] < w[1]));
            prop_assert_eq!(*ts.last().unwrap(), t);
            prop_assert!(ts.iter().all(|&s| t - s <= horizon));
        }
        let now = t + now_off;
        let got = b.fetch(now, interval).map(|r| r.timestamp);
        if let Some(g) = got {
            prop_assert!(g <= now);
        }
        prop_assert_eq!(got, nearest_oracle(&b.timestamps(), now, interval));
    }
}

#[test]
fn no_eligible_past_frame() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let ts = [0.0, 3.0, 6.0];
    assert_eq!(sample_training_pair(&ts, 0, 2.0, &mut rng), None);
    assert_eq!(sample_training_pair(&ts, 2, 2.0, &mut rng), None);
    assert_eq!(sample_training_pair(&ts, 7, 2.0, &mut rng), None);
}

#[test]
fn single_eligible_frame_is_always_chosen() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let ts = [0.0, 2.5, 4.0];
    for _ in 0..100 {
        assert_eq!(sample_training_pair(&ts, 2, 2.0, &mut rng), Some(1));
    }
}

#[test]
fn four_eligible_frames_are_uniform() {
    let ts = [0.0, 0.5, 1.0, 1.5, 2.0, 2.5];
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let n = 10_000;
    let mut counts = [0usize; 6];
    for _ in 0..n {
        counts[sample_training_pair(&ts, 5, 2.0, &mut rng).unwrap()] += 1;
    }
    assert_eq!(counts[0], 0);
    assert_eq!(counts[5], 0);
    // binomial(n, 1/4): 3σ band
    let (mean, sd) = (n as f64 / 4.0, (n as f64 * 0.25 * 0.75).sqrt());
    for &c in &counts[1..5] {
        assert!((c as f64 - mean).abs() <= 3.0 * sd, "{counts:?}");
    }
}

#[test]
fn pair_sampling_is_seeded() {
    let ts: Vec<f64> = (0..10).map(|k| k as f64 * 0.5).collect();
    let draw = |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..20).map(|_| sample_training_pair(&ts, 8, 2.0, &mut rng)).collect::<Vec<_>>()
    };
    assert_eq!(draw(4), draw(4));
}

fn tiny_model(temporal: bool) -> Detector {
    let mut cfg = DetectorConfig {
        range: BevGridSpec {
            resolution: [2, 8, 8],
            ..DetectorConfig::desk().range
        },
        channels: 8,
        heads: 2,
        points: 2,
        layers: 1,
        ffn_hidden: 8,
        n_query: 4,
        heatmap_hidden: 8,
        heatmap_convs: 1,
        ..DetectorConfig::desk()
    };
    cfg.temporal.enabled = temporal;
    Detector::new(cfg, 3).unwrap()
}

fn scene(duration: f64) -> crate::synth::Scene {
    generate_scene(&SceneSpec {
        n_objects: 3,
        speed_range: [0.0, 2.0],
        ego_speed: 3.0,
        ego_yaw_rate: 0.0,
        duration,
        frame_period: 0.5,
        min_distance: 4.0,
        n_classes: 3,
        seed: 9,
        range: DetectorConfig::desk().range,
        rig: RigSpec::desk(),
        render: RenderConfig::default(),
    })
    .unwrap()
}

#[test]
fn sequence_inference_renders_each_frame_once() {
    let s = scene(4.0);
    let r = FrameRenderer::new(&s, (16, 16));
    let out = infer_sequence(&tiny_model(true), &r).unwrap();
    assert_eq!(out.len(), s.n_frames());
    assert_eq!(r.calls(), s.n_frames());
    assert_eq!(out[0].past_timestamp, None);
    // with 0.5 s frames the 1.5 s-old frame exists from the fourth frame on
    for f in &out[3..] {
        assert!((f.timestamp - f.past_timestamp.unwrap() - 1.5).abs() < 1e-9);
    }
    assert!((out[1].timestamp - out[1].past_timestamp.unwrap() - 0.5).abs() < 1e-9);
}

#[test]
fn single_frame_sequence_uses_no_past() {
    let s = scene(2.0);
    let r = FrameRenderer::new(&s, (16, 16));
    let out = infer_sequence(&tiny_model(false), &r).unwrap();
    assert!(out.iter().all(|f| f.past_timestamp.is_none()));
    assert_eq!(r.calls(), s.n_frames());
}
