//! Synthetic multi-camera world: constant-velocity objects around an ego
//! vehicle on a smooth arc, rendered into feature maps with exact ground
//! truth.

mod encoder;
mod render;
mod scene;

pub use encoder::FeatureEncoder;
pub use render::{feature_channels, render_features, FrameRenderer, RenderConfig};
pub use scene::{
    class_size, extent_fraction_in_view, generate_scene, straddling_scene, CameraSpec, EgoTrajectory, ObjectTrack,
    RigSpec, Scene, SceneSpec,
};

#[cfg(test)]
mod tests;
