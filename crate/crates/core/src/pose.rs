//! Poses: a position in meters plus a unit quaternion orientation.
//!
//! Coordinate convention used throughout the crate and the bundled few-shot
//! examples: "left" decreases `y`, "down" decreases `z`, "forward" increases
//! `x`. Rotations requested in natural language are yaw about the world `z`
//! axis, and "clockwise" (seen from above, +z) is a negative yaw.

use serde::{Deserialize, Serialize};

/// Allowed deviation of a quaternion norm from 1.
pub const UNIT_NORM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }

    pub fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }

    pub fn scale(self, k: f64) -> Vec3 {
        Vec3::new(self.x * k, self.y * k, self.z * k)
    }

    pub fn norm(self) -> f64 {
        (self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn distance(self, o: Vec3) -> f64 {
        self.sub(o).norm()
    }
}

/// Quaternion stored as (w, x, y, z).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quaternion {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Default for Quaternion {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl Quaternion {
    pub const IDENTITY: Quaternion = Quaternion { w: 1.0, x: 0.0, y: 0.0, z: 0.0 };

    pub const fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        Self { w, x, y, z }
    }

    /// Rotation of `angle` radians about the world z axis.
    pub fn from_yaw(angle: f64) -> Self {
        let half = angle / 2.0;
        Self::new(half.cos(), 0.0, 0.0, half.sin())
    }

    pub fn norm(&self) -> f64 {
        (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn is_unit(&self) -> bool {
        (self.norm() - 1.0).abs() <= UNIT_NORM_TOLERANCE
    }

    pub fn normalized(&self) -> Self {
        let n = self.norm();
        Self::new(self.w / n, self.x / n, self.y / n, self.z / n)
    }

    pub fn conjugate(&self) -> Self {
        Self::new(self.w, -self.x, -self.y, -self.z)
    }

    pub fn dot(&self, o: &Quaternion) -> f64 {
        self.w * o.w + self.x * o.x + self.y * o.y + self.z * o.z
    }

    /// Hamilton product `self * o`.
    pub fn mul(&self, o: &Quaternion) -> Self {
        Self::new(
            self.w * o.w - self.x * o.x - self.y * o.y - self.z * o.z,
            self.w * o.x + self.x * o.w + self.y * o.z - self.z * o.y,
            self.w * o.y - self.x * o.z + self.y * o.w + self.z * o.x,
            self.w * o.z + self.x * o.y - self.y * o.x + self.z * o.w,
        )
    }

    /// Normalized linear interpolation along the shorter arc.
    pub fn nlerp(&self, o: &Quaternion, t: f64) -> Self {
        let sign = if self.dot(o) < 0.0 { -1.0 } else { 1.0 };
        Self::new(
            self.w + (sign * o.w - self.w) * t,
            self.x + (sign * o.x - self.x) * t,
            self.y + (sign * o.y - self.y) * t,
            self.z + (sign * o.z - self.z) * t,
        )
        .normalized()
    }

    /// Signed yaw (radians) of the world-frame rotation taking `from` to `self`.
    pub fn yaw_from(&self, from: &Quaternion) -> f64 {
        let delta = self.mul(&from.conjugate());
        2.0 * delta.z.atan2(delta.w)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose {
    pub position: Vec3,
    pub orientation: Quaternion,
}

impl Pose {
    pub const fn new(position: Vec3, orientation: Quaternion) -> Self {
        Self { position, orientation }
    }

    pub const fn identity() -> Self {
        Self { position: Vec3::new(0.0, 0.0, 0.0), orientation: Quaternion::IDENTITY }
    }

    pub fn at(x: f64, y: f64, z: f64) -> Self {
        Self::new(Vec3::new(x, y, z), Quaternion::IDENTITY)
    }

    /// Interpolates position linearly and orientation by nlerp.
    pub fn lerp(&self, o: &Pose, t: f64) -> Pose {
        Pose {
            position: self.position.add(o.position.sub(self.position).scale(t)),
            orientation: self.orientation.nlerp(&o.orientation, t),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn yaw_roundtrip() {
        let start = Quaternion::new(0.0, 1.0, 0.0, 0.0);
        let rotated = Quaternion::from_yaw(-33f64.to_radians()).mul(&start);
        assert!(rotated.is_unit());
        assert!((rotated.yaw_from(&start) - (-33f64).to_radians()).abs() < 1e-12);
    }

    #[test]
    fn nlerp_endpoints() {
        let a = Quaternion::IDENTITY;
        let b = Quaternion::from_yaw(1.0);
        let mid = a.nlerp(&b, 0.5);
        assert!(mid.is_unit());
        assert!((mid.yaw_from(&a) - 0.5).abs() < 1e-12);
        assert_eq!(a.nlerp(&b, 0.0), a);
    }

    #[test]
    fn identity_is_unit() {
        assert!(Quaternion::IDENTITY.is_unit());
        assert!(!Quaternion::new(1.0, 0.1, 0.0, 0.0).is_unit());
    }
}
