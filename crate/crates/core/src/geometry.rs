//! Vectors, rotations and rigid transforms.
//!
//! World frame is left-handed: x forward, y right, z up. A [`Rotator`] holds
//! (pitch, yaw, roll) in degrees and maps to the matrix
//! `Rz(yaw) · Ry(pitch) · Rx(roll)`, where positive yaw turns +x toward +y
//! and positive pitch lifts +x toward +z.

use serde::{Deserialize, Serialize};
use std::ops::{Add, Mul, Neg, Sub};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3::new(0.0, 0.0, 0.0);

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Vec3) -> Vec3 {
        Vec3::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn length(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn normalized(self) -> Vec3 {
        let l = self.length();
        if l > 0.0 {
            self * (1.0 / l)
        } else {
            self
        }
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn lerp(self, o: Vec3, t: f64) -> Vec3 {
        self + (o - self) * t
    }

    pub fn min(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x.min(o.x), self.y.min(o.y), self.z.min(o.z))
    }

    pub fn max(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x.max(o.x), self.y.max(o.y), self.z.max(o.z))
    }

    pub fn to_bits(self) -> [u64; 3] {
        [self.x.to_bits(), self.y.to_bits(), self.z.to_bits()]
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

/// Row-major 3x3 matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mat3(pub [[f64; 3]; 3]);

impl Mat3 {
    pub const IDENTITY: Mat3 = Mat3([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);

    pub fn mul_vec(&self, v: Vec3) -> Vec3 {
        let m = &self.0;
        Vec3::new(
            m[0][0] * v.x + m[0][1] * v.y + m[0][2] * v.z,
            m[1][0] * v.x + m[1][1] * v.y + m[1][2] * v.z,
            m[2][0] * v.x + m[2][1] * v.y + m[2][2] * v.z,
        )
    }

    /// `selfᵀ · v`, the inverse for rotation matrices.
    pub fn transpose_mul_vec(&self, v: Vec3) -> Vec3 {
        let m = &self.0;
        Vec3::new(
            m[0][0] * v.x + m[1][0] * v.y + m[2][0] * v.z,
            m[0][1] * v.x + m[1][1] * v.y + m[2][1] * v.z,
            m[0][2] * v.x + m[1][2] * v.y + m[2][2] * v.z,
        )
    }

    pub fn mul(&self, o: &Mat3) -> Mat3 {
        let mut r = [[0.0; 3]; 3];
        for (i, row) in r.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                *cell = (0..3).map(|k| self.0[i][k] * o.0[k][j]).sum();
            }
        }
        Mat3(r)
    }

    pub fn column(&self, j: usize) -> Vec3 {
        Vec3::new(self.0[0][j], self.0[1][j], self.0[2][j])
    }
}

/// Normalizes an angle in degrees to `(-180, 180]`.
pub fn normalize_degrees(a: f64) -> f64 {
    let r = a - 360.0 * ((a - 180.0) / 360.0).ceil();
    if r <= -180.0 {
        r + 360.0
    } else {
        r
    }
}

/// Euler angles in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Rotator {
    pub pitch: f64,
    pub yaw: f64,
    pub roll: f64,
}

impl Rotator {
    pub const fn new(pitch: f64, yaw: f64, roll: f64) -> Self {
        Self { pitch, yaw, roll }
    }

    pub fn normalized(self) -> Self {
        Self::new(
            normalize_degrees(self.pitch),
            normalize_degrees(self.yaw),
            normalize_degrees(self.roll),
        )
    }

    pub fn matrix(&self) -> Mat3 {
        let (sp, cp) = self.pitch.to_radians().sin_cos();
        let (sy, cy) = self.yaw.to_radians().sin_cos();
        let (sr, cr) = self.roll.to_radians().sin_cos();
        let rz = Mat3([[cy, -sy, 0.0], [sy, cy, 0.0], [0.0, 0.0, 1.0]]);
        let ry = Mat3([[cp, 0.0, -sp], [0.0, 1.0, 0.0], [sp, 0.0, cp]]);
        let rx = Mat3([[1.0, 0.0, 0.0], [0.0, cr, -sr], [0.0, sr, cr]]);
        rz.mul(&ry).mul(&rx)
    }

    /// Inverse of [`Rotator::matrix`] for pitch in `[-90, 90]`.
    pub fn from_matrix(m: &Mat3) -> Self {
        let r = &m.0;
        let pitch = r[2][0].clamp(-1.0, 1.0).asin().to_degrees();
        let yaw = r[1][0].atan2(r[0][0]).to_degrees();
        let roll = r[2][1].atan2(r[2][2]).to_degrees();
        Self::new(pitch, yaw, roll)
    }

    pub fn forward(&self) -> Vec3 {
        self.matrix().column(0)
    }
}

/// Rigid transform: rotate, then translate.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Transform {
    pub location: Vec3,
    pub rotation: Rotator,
}

impl Transform {
    pub const fn new(location: Vec3, rotation: Rotator) -> Self {
        Self { location, rotation }
    }

    pub fn from_location(location: Vec3) -> Self {
        Self::new(location, Rotator::default())
    }

    pub fn apply(&self, local: Vec3) -> Vec3 {
        self.rotation.matrix().mul_vec(local) + self.location
    }

    pub fn inverse_apply(&self, world: Vec3) -> Vec3 {
        self.rotation.matrix().transpose_mul_vec(world - self.location)
    }

    /// `self ∘ local`: the world transform of a child placed at `local`
    /// relative to `self`.
    pub fn compose(&self, local: &Transform) -> Transform {
        if local.rotation == Rotator::default() {
            return Transform::new(self.apply(local.location), self.rotation);
        }
        let m = self.rotation.matrix().mul(&local.rotation.matrix());
        Transform::new(self.apply(local.location), Rotator::from_matrix(&m))
    }

    pub fn is_finite(&self) -> bool {
        self.location.is_finite()
            && self.rotation.pitch.is_finite()
            && self.rotation.yaw.is_finite()
            && self.rotation.roll.is_finite()
    }
}
