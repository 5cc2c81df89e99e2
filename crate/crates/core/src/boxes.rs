use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// An oriented 3D box in the ego frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Box3D {
    pub center: [f64; 3],
    /// (width, length, height), meters, strictly positive.
    pub size: [f64; 3],
    /// Heading in (-π, π].
    pub yaw: f64,
    pub velocity: [f64; 2],
    pub class_id: usize,
    pub score: f64,
}

impl Box3D {
    pub fn new(center: [f64; 3], size: [f64; 3], yaw: f64, class_id: usize) -> Self {
        debug_assert!(size.iter().all(|&s| s > 0.0), "box size must be positive");
        Self {
            center,
            size,
            yaw: normalize_angle(yaw),
            velocity: [0.0; 2],
            class_id,
            score: 1.0,
        }
    }

    pub fn bev_distance(&self, other: &Box3D) -> f64 {
        let dx = self.center[0] - other.center[0];
        let dy = self.center[1] - other.center[1];
        (dx * dx + dy * dy).sqrt()
    }
}

/// Wraps an angle into (-π, π].
pub fn normalize_angle(a: f64) -> f64 {
    let mut r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r -= 2.0 * PI;
    }
    // rem_euclid can return exactly 2π for tiny negative inputs
    if r <= -PI {
        r += 2.0 * PI;
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn angle_normalization_range() {
        assert_eq!(normalize_angle(PI), PI);
        assert_eq!(normalize_angle(-PI), PI);
        assert!((normalize_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-12);
        for k in -20..20 {
            let a = normalize_angle(k as f64 * 0.77);
            assert!(a > -PI && a <= PI);
        }
    }
}
