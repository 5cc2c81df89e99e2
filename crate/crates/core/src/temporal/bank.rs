use std::collections::VecDeque;

use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::{CameraRig, EgoPose};
use crate::numerics::Tensor;
use crate::query::QueryState;

/// What one processed frame leaves for later frames.
#[derive(Debug, Clone)]
pub struct FrameRecord {
    pub timestamp: f64,
    /// Final-layer queries with their refined centers.
    pub queries: QueryState,
    /// Encoded per-view maps.
    pub features: Vec<Tensor>,
    pub ego_pose: EgoPose,
    pub rig: CameraRig,
}

/// Time-ordered cache bounded by count and by age relative to the newest
/// record.
#[derive(Debug, Clone)]
pub struct MemoryBank {
    records: VecDeque<FrameRecord>,
    capacity: usize,
    horizon: f64,
}

impl MemoryBank {
    pub fn new(capacity: usize, horizon: f64) -> Result<Self> {
        if capacity == 0 || !(horizon >= 0.0) {
            return Err(Error::Config(format!(
                "memory bank needs capacity > 0 and horizon >= 0, got {capacity}, {horizon}"
            )));
        }
        Ok(Self {
            records: VecDeque::with_capacity(capacity),
            capacity,
            horizon,
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// Oldest first.
    pub fn records(&self) -> impl Iterator<Item = &FrameRecord> {
        self.records.iter()
    }

    pub fn timestamps(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.timestamp).collect()
    }

    /// Appends `record`, then evicts oldest-first anything older than the
    /// horizon or beyond capacity.
    pub fn push(&mut self, record: FrameRecord) -> Result<()> {
        if !record.timestamp.is_finite() {
            return Err(Error::NonFinite("record timestamp"));
        }
        if let Some(last) = self.records.back() {
            if record.timestamp <= last.timestamp {
                return Err(Error::OutOfOrder {
                    new: record.timestamp,
                    last: last.timestamp,
                });
            }
        }
        let newest = record.timestamp;
        self.records.push_back(record);
        while self.records.len() > self.capacity
            || self.records.front().is_some_and(|r| newest - r.timestamp > self.horizon)
        {
            self.records.pop_front();
        }
        Ok(())
    }

    /// The record whose age at `now` is closest to `interval`; ties go to
    /// the older record. Records newer than `now` are never returned.
    pub fn fetch(&self, now: f64, interval: f64) -> Option<&FrameRecord> {
        let mut best: Option<(&FrameRecord, f64)> = None;
        for r in self.records.iter().filter(|r| r.timestamp <= now) {
            let d = ((now - r.timestamp) - interval).abs();
            // oldest first, so only a strictly better record replaces
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some((r, d));
            }
        }
        best.map(|(r, _)| r)
    }

    pub fn clear(&mut self) {
        self.records.clear();
    }
}

/// Uniformly picks an earlier frame at most `window` seconds before
/// `timestamps[current]`; `None` if there is none.
pub fn sample_training_pair(timestamps: &[f64], current: usize, window: f64, rng: &mut impl Rng) -> Option<usize> {
    let now = *timestamps.get(current)?;
    let eligible: Vec<usize> = (0..current)
        .filter(|&j| {
            let dt = now - timestamps[j];
            dt > 0.0 && dt <= window + 1e-9
        })
        .collect();
    match eligible.len() {
        0 => None,
        1 => Some(eligible[0]),
        n => Some(eligible[rng.random_range(0..n)]),
    }
}
