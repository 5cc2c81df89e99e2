//! Training and evaluation loops over generated scenes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::Config;
use crate::detector::{train_step, AdamW, Detector, FrameData, StepReport, TrainSample};
use crate::error::Result;
use crate::metrics::{evaluate, matched_center_error, query_recall, EvalReport, THRESHOLDS};
use crate::synth::{generate_scene, render_features, FrameRenderer, Scene, SceneSpec};
use crate::temporal::{infer_sequence, sample_training_pair, FrameResult};

const EVAL_SEED_OFFSET: u64 = 1 << 32;

/// Which scene pool to draw from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Eval,
}

/// Deterministic scene `index` of `split`.
pub fn scene(cfg: &Config, split: Split, index: usize) -> Result<Scene> {
    let base = match split {
        Split::Train => cfg.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15),
        Split::Eval => cfg.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ EVAL_SEED_OFFSET,
    };
    let seed = base.wrapping_add(index as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = &cfg.data;
    let n_objects = rng.random_range(d.n_objects[0]..=d.n_objects[1]);
    let ego_speed = if d.ego_speed[1] > d.ego_speed[0] {
        rng.random_range(d.ego_speed[0]..d.ego_speed[1])
    } else {
        d.ego_speed[0]
    };
    let ego_yaw_rate = if d.ego_yaw_rate > 0.0 {
        rng.random_range(-d.ego_yaw_rate..d.ego_yaw_rate)
    } else {
        0.0
    };
    generate_scene(&SceneSpec {
        n_objects,
        speed_range: d.speed_range,
        ego_speed,
        ego_yaw_rate,
        duration: d.duration,
        frame_period: d.frame_period,
        min_distance: d.min_distance,
        n_classes: cfg.model.n_classes,
        seed,
        range: cfg.model.range,
        rig: d.rig.clone(),
        render: d.render,
    })
}

pub fn frame(cfg: &Config, scene: &Scene, t: f64) -> Result<FrameData> {
    Ok(FrameData {
        features: render_features(scene, t, (cfg.data.feature_size[0], cfg.data.feature_size[1]))?,
        rig: scene.rig.build()?,
        pose: scene.ego_pose(t),
        gt: scene.ground_truth(t),
    })
}

/// Draws one training batch. The past frame is drawn whether or not the
/// model uses it, so single-frame and temporal runs see the same data.
pub fn sample_batch(cfg: &Config, scenes: &[Scene], rng: &mut ChaCha8Rng) -> Result<Vec<TrainSample>> {
    let mut batch = Vec::with_capacity(cfg.train.batch_size);
    for _ in 0..cfg.train.batch_size {
        let s = &scenes[rng.random_range(0..scenes.len())];
        let ts = s.timestamps();
        let k = rng.random_range(0..ts.len());
        let past = sample_training_pair(&ts, k, cfg.model.temporal.train_window, rng);
        batch.push(TrainSample {
            current: frame(cfg, s, ts[k])?,
            past: match past {
                Some(j) if cfg.model.uses_past() => Some(frame(cfg, s, ts[j])?),
                _ => None,
            },
        });
    }
    Ok(batch)
}

/// Trains a fresh model for `cfg.train.steps` steps, reporting each step to
/// `on_step`.
pub fn train(cfg: &Config, mut on_step: impl FnMut(&StepReport)) -> Result<Detector> {
    cfg.validate()?;
    let mut model = Detector::new(cfg.model, cfg.seed)?;
    let scenes = (0..cfg.data.train_scenes)
        .map(|i| scene(cfg, Split::Train, i))
        .collect::<Result<Vec<_>>>()?;
    let mut opt = AdamW::new(cfg.train.optimizer, &model.store);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5EED);
    for step in 0..cfg.train.steps {
        let batch = sample_batch(cfg, &scenes, &mut rng)?;
        opt.cfg.lr = cfg.lr_at(step);
        let report = train_step(&mut model, &mut opt, &batch, step)?;
        on_step(&report);
    }
    Ok(model)
}

/// Evaluation results over the held-out scenes.
#[derive(Debug, Clone)]
pub struct EvalSummary {
    pub report: EvalReport,
    /// Mean BEV distance of one-to-one matches among the top-scoring boxes.
    pub center_error: Option<f64>,
    /// Fraction of ground truth within one BEV cell of an initial query.
    pub query_recall: Option<f64>,
    /// Per-scene, per-frame results.
    pub scenes: Vec<Vec<FrameResult>>,
}

pub fn evaluate_model(model: &Detector, cfg: &Config) -> Result<EvalSummary> {
    let mut scenes = Vec::with_capacity(cfg.data.eval_scenes);
    for i in 0..cfg.data.eval_scenes {
        let s = scene(cfg, Split::Eval, i)?;
        let r = FrameRenderer::new(&s, (cfg.data.feature_size[0], cfg.data.feature_size[1]));
        scenes.push(infer_sequence(model, &r)?);
    }
    let frames: Vec<&FrameResult> = scenes.iter().flatten().collect();
    let preds: Vec<_> = frames.iter().map(|f| f.boxes.clone()).collect();
    let gts: Vec<_> = frames.iter().map(|f| f.gt.clone()).collect();
    let queries: Vec<_> = frames.iter().map(|f| f.query_centers.clone()).collect();
    Ok(EvalSummary {
        report: evaluate(&preds, &gts, &THRESHOLDS)?,
        center_error: matched_center_error(&preds, &gts),
        query_recall: query_recall(&queries, &gts, &cfg.model.range),
        scenes,
    })
}
