use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Wraps an angle into `(−π, π]`.
pub fn normalize_yaw(theta: f64) -> f64 {
    let r = theta.rem_euclid(TAU);
    if r > PI {
        r - TAU
    } else {
        r
    }
}

/// Oriented 3D box in the ego frame. `size` is `(l, w, h)` with `l` along
/// the heading; `yaw` is counter-clockwise about +z from +x.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Box3D {
    pub center: [f64; 3],
    pub size: [f64; 3],
    pub yaw: f64,
    pub velocity: [f64; 2],
    pub class_id: usize,
    pub score: f64,
}

impl Box3D {
    pub fn new(center: [f64; 3], size: [f64; 3], yaw: f64, class_id: usize) -> Self {
        Box3D { center, size, yaw: normalize_yaw(yaw), velocity: [0.0; 2], class_id, score: 1.0 }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = self.center.iter().chain(&self.size).chain(&self.velocity).chain([&self.yaw, &self.score]).all(|v| v.is_finite());
        if !finite || self.size.iter().any(|&s| s <= 0.0) || !(0.0..=1.0).contains(&self.score) {
            return Err(Error::Geometry(format!("invalid box {self:?}")));
        }
        Ok(())
    }

    pub fn heading(&self) -> (f64, f64) {
        let (s, c) = self.yaw.sin_cos();
        (c, s)
    }

    /// Footprint corners, counter-clockwise.
    pub fn bev_corners(&self) -> [[f64; 2]; 4] {
        let (c, s) = self.heading();
        let (hl, hw) = (self.size[0] / 2.0, self.size[1] / 2.0);
        [(hl, hw), (-hl, hw), (-hl, -hw), (hl, -hw)]
            .map(|(a, b)| [self.center[0] + a * c - b * s, self.center[1] + a * s + b * c])
    }

    /// BEV center followed by the centers of the front, back, left and right faces.
    pub fn face_points(&self) -> [[f64; 2]; 5] {
        let (c, s) = self.heading();
        let (hl, hw) = (self.size[0] / 2.0, self.size[1] / 2.0);
        let [x, y, _] = self.center;
        [[x, y], [x + hl * c, y + hl * s], [x - hl * c, y - hl * s], [x - hw * s, y + hw * c], [x + hw * s, y - hw * c]]
    }

    pub fn z_range(&self) -> (f64, f64) {
        (self.center[2] - self.size[2] / 2.0, self.center[2] + self.size[2] / 2.0)
    }

    pub fn bev_distance(&self, other: &Box3D) -> f64 {
        (self.center[0] - other.center[0]).hypot(self.center[1] - other.center[1])
    }

    /// Every field rounded through `f32`, the precision of the on-disk formats.
    pub fn quantized(&self) -> Self {
        let q = |v: f64| v as f32 as f64;
        Box3D {
            center: self.center.map(q),
            size: self.size.map(q),
            yaw: q(self.yaw),
            velocity: self.velocity.map(q),
            class_id: self.class_id,
            score: q(self.score),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn yaw_wraps_into_half_open_interval() {
        assert_eq!(normalize_yaw(PI), PI);
        assert_eq!(normalize_yaw(-PI), PI);
        assert!((normalize_yaw(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-15);
        assert_eq!(normalize_yaw(0.25), 0.25);
    }

    #[test]
    fn face_points_axis_aligned() {
        let b = Box3D::new([1.0, 2.0, 0.5], [4.0, 2.0, 1.5], 0.0, 0);
        assert_eq!(b.face_points(), [[1.0, 2.0], [3.0, 2.0], [-1.0, 2.0], [1.0, 3.0], [1.0, 1.0]]);
    }

    #[test]
    fn face_points_quarter_turn() {
        let b = Box3D::new([1.0, 2.0, 0.5], [4.0, 2.0, 1.5], std::f64::consts::FRAC_PI_2, 0);
        let expect = [[1.0, 2.0], [1.0, 4.0], [1.0, 0.0], [0.0, 2.0], [2.0, 2.0]];
        for (p, e) in b.face_points().iter().zip(expect) {
            assert!((p[0] - e[0]).abs() < 1e-12 && (p[1] - e[1]).abs() < 1e-12, "{p:?} vs {e:?}");
        }
    }
}
