//! Memory bank of past frames and the past-frame selection policies used in
//! training and inference.

mod bank;
mod sequence;

pub use bank::{sample_training_pair, FrameRecord, MemoryBank};
pub use sequence::{infer_sequence, FrameResult};

#[cfg(test)]
mod tests;
