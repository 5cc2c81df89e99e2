//! Decoder stack, detection head, set matching, loss and training.

mod checkpoint;
mod config;
mod decode;
mod hungarian;
mod loss;
mod model;
mod optim;
mod train;

pub use checkpoint::{config_hash, load_checkpoint, read_manifest, save_checkpoint, Manifest, TensorEntry, MANIFEST};
pub use config::{AttentionKind, DetectorConfig, LossWeights, QueryInit, TemporalConfig};
pub use decode::{decode_boxes, refine_centers, REG_DIMS};
pub use hungarian::{hungarian, hungarian_match, match_cost};
pub use loss::{detection_loss, LossReport};
pub use model::{
    best_class, Detector, ForwardOutput, FrameInput, Inference, LayerPrediction, LayerWeights, PastContext,
};
pub use optim::{AdamW, AdamWConfig};
pub use train::{train_step, FrameData, StepReport, TrainSample};

#[cfg(test)]
mod tests;
