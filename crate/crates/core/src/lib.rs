//! Sparse multi-view 3D object detection on a synthetic camera rig.
//!
//! The crate covers the full query-based pipeline: volumetric heatmap query
//! initialization, projective cross-attention with 3D sampling offsets,
//! temporal query/feature aggregation with ego-motion alignment, a decoder
//! with a detection head, a synthetic multi-camera world, and desk-scale
//! metrics. All differentiable code runs on the small reverse-mode tape in
//! [`numerics`].

pub mod attention;
pub mod bev_init;
pub mod boxes;
pub mod config;
pub mod detector;
pub mod error;
pub mod experiment;
pub mod geometry;
pub mod gradsuite;
pub mod metrics;
pub mod numerics;
pub mod query;
pub mod synth;
pub mod temporal;

pub use config::Config;
pub use error::{Error, Result};
