//! Top-level experiment configuration, stored as TOML.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::detector::{AdamWConfig, DetectorConfig};
use crate::error::{Error, Result};
use crate::synth::{RenderConfig, RigSpec};

/// Scene generation and rendering for training and evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Objects per scene, drawn uniformly from this inclusive range.
    pub n_objects: [usize; 2],
    /// Object speed range, m/s.
    pub speed_range: [f64; 2],
    /// Ego speed range, m/s.
    pub ego_speed: [f64; 2],
    /// Largest ego yaw rate magnitude, rad/s.
    pub ego_yaw_rate: f64,
    pub duration: f64,
    pub frame_period: f64,
    pub min_distance: f64,
    /// Feature map (width, height).
    pub feature_size: [usize; 2],
    pub train_scenes: usize,
    pub eval_scenes: usize,
    pub rig: RigSpec,
    pub render: RenderConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    /// Linear warmup steps before the cosine decay.
    pub warmup: usize,
    /// Final learning rate as a fraction of the peak.
    pub final_lr_fraction: f64,
    pub optimizer: AdamWConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub preset: String,
    pub seed: u64,
    pub model: DetectorConfig,
    pub data: DataConfig,
    pub train: TrainConfig,
}

pub const PRESETS: [&str; 2] = ["desk", "paper-scale"];

impl Config {
    /// Four-camera synthetic rig, two decoder layers, 25 queries.
    pub fn desk() -> Self {
        Self {
            preset: "desk".into(),
            seed: 0,
            model: DetectorConfig::desk(),
            data: DataConfig {
                n_objects: [1, 5],
                speed_range: [0.0, 2.0],
                ego_speed: [0.0, 5.0],
                ego_yaw_rate: 0.1,
                duration: 4.0,
                frame_period: 0.5,
                min_distance: 3.0,
                feature_size: [32, 32],
                train_scenes: 4096,
                eval_scenes: 32,
                rig: RigSpec::desk(),
                render: RenderConfig::default(),
            },
            train: TrainConfig {
                steps: 2000,
                batch_size: 4,
                warmup: 100,
                final_lr_fraction: 0.1,
                optimizer: AdamWConfig {
                    lr: 2e-3,
                    ..AdamWConfig::default()
                },
            },
        }
    }

    /// Full-size model hyperparameters; too large to train on a CPU.
    pub fn paper_scale() -> Self {
        let rig = RigSpec::ring(6, [0.0, 0.0, 1.5], 70f64.to_radians(), (1600, 900));
        Self {
            preset: "paper-scale".into(),
            seed: 0,
            model: DetectorConfig::paper_scale(),
            data: DataConfig {
                n_objects: [5, 40],
                speed_range: [0.0, 15.0],
                ego_speed: [0.0, 15.0],
                ego_yaw_rate: 0.2,
                duration: 20.0,
                frame_period: 0.5,
                min_distance: 3.0,
                feature_size: [100, 56],
                train_scenes: 700,
                eval_scenes: 150,
                rig,
                render: RenderConfig::default(),
            },
            train: TrainConfig {
                steps: 24 * 28_130 / 8,
                batch_size: 8,
                warmup: 500,
                final_lr_fraction: 1e-3,
                optimizer: AdamWConfig {
                    lr: 2e-4,
                    ..AdamWConfig::default()
                },
            },
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk()),
            "paper-scale" | "paper" => Ok(Self::paper_scale()),
            other => Err(Error::Config(format!("unknown preset {other:?}; expected one of {PRESETS:?}"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        let d = &self.data;
        if d.n_objects[0] > d.n_objects[1] {
            return Err(Error::Config("n_objects range is reversed".into()));
        }
        if d.ego_speed[0] > d.ego_speed[1] || d.ego_speed[0] < 0.0 {
            return Err(Error::Config("invalid ego speed range".into()));
        }
        if d.feature_size.contains(&0) || d.train_scenes == 0 {
            return Err(Error::Config("feature size and train_scenes must be positive".into()));
        }
        if !(d.frame_period > 0.0) {
            return Err(Error::Config("frame_period must be positive".into()));
        }
        if self.train.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if self.model.input_channels != crate::synth::feature_channels(self.model.n_classes) {
            return Err(Error::Config("input_channels must match the rendered channel count".into()));
        }
        d.rig.build()?;
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    /// Learning rate at `step`: linear warmup, then cosine decay to
    /// `final_lr_fraction` of the peak.
    pub fn lr_at(&self, step: usize) -> f64 {
        let t = &self.train;
        let peak = t.optimizer.lr;
        if step < t.warmup {
            return peak * (step + 1) as f64 / t.warmup as f64;
        }
        let span = t.steps.saturating_sub(t.warmup).max(1) as f64;
        let p = ((step - t.warmup) as f64 / span).min(1.0);
        let lo = peak * t.final_lr_fraction;
        lo + 0.5 * (peak - lo) * (1.0 + (std::f64::consts::PI * p).cos())
    }
}
