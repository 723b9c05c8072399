//! Sensor poses over time and the pinhole camera model.
//!
//! A sensor's pose at frame `f` is built in its placement frame (world for
//! static sensors, host-local for attached ones) as the base transform plus a
//! linear offset, a triangle-wave rotation offset and a uniform jitter, in
//! that order; attached sensors are then composed with the host's pose.

use crate::config::{Axis, MotionSpec, Placement, SensorKind, SensorSpec};
use crate::geometry::{Mat3, Rotator, Transform, Vec3};
use crate::rng::SplitMix64;
use crate::scene::Scene;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Points closer than this along the optical axis are not visible.
pub const NEAR_PLANE: f64 = 0.05;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RigError {
    #[error("sensor {sensor} is attached to `{role}`, which is not in the scene")]
    MissingHost { sensor: usize, role: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub width: u32,
    pub height: u32,
    pub focal: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraIntrinsics {
    pub fn from_fov(width: u32, height: u32, fov_degrees: f64) -> Self {
        let focal = f64::from(width) / (2.0 * (fov_degrees.to_radians() / 2.0).tan());
        Self {
            width,
            height,
            focal,
            cx: f64::from(width) / 2.0,
            cy: f64::from(height) / 2.0,
        }
    }
}

pub fn intrinsics(spec: &SensorSpec) -> CameraIntrinsics {
    CameraIntrinsics::from_fov(spec.image_size_x, spec.image_size_y, spec.fov)
}

/// Image-plane position and planar depth of a visible point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub u: f64,
    pub v: f64,
    pub depth: f64,
}

/// A posed pinhole camera. Camera space has x along the optical axis,
/// y to the right and z up.
#[derive(Debug, Clone, Copy)]
pub struct Camera {
    pub pose: Transform,
    pub intrinsics: CameraIntrinsics,
    rotation: Mat3,
}

impl Camera {
    pub fn new(pose: Transform, intrinsics: CameraIntrinsics) -> Self {
        Self {
            pose,
            intrinsics,
            rotation: pose.rotation.matrix(),
        }
    }

    pub fn to_camera(&self, world: Vec3) -> Vec3 {
        self.rotation.transpose_mul_vec(world - self.pose.location)
    }

    /// Image coordinates of a camera-space point with `c.x > 0`.
    pub fn image_point(&self, c: Vec3) -> (f64, f64) {
        let k = &self.intrinsics;
        (k.cx + k.focal * (c.y / c.x), k.cy - k.focal * (c.z / c.x))
    }

    pub fn project(&self, world: Vec3) -> Option<Projection> {
        let c = self.to_camera(world);
        if c.x <= NEAR_PLANE {
            return None;
        }
        let (u, v) = self.image_point(c);
        Some(Projection { u, v, depth: c.x })
    }

    pub fn position(&self) -> Vec3 {
        self.pose.location
    }
}

pub fn project(point_world: Vec3, pose: &Transform, k: &CameraIntrinsics) -> Option<Projection> {
    Camera::new(*pose, *k).project(point_world)
}

/// Triangle wave with period `period` frames: 0 at frame 0, +1 at P/4,
/// 0 at P/2, -1 at 3P/4.
pub fn triangle_wave(frame: u64, period: u32) -> f64 {
    let p = u64::from(period.max(1));
    let t = (frame % p) as f64 / p as f64;
    if t <= 0.25 {
        4.0 * t
    } else if t <= 0.75 {
        2.0 - 4.0 * t
    } else {
        4.0 * t - 4.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensorTrack {
    pub index: usize,
    pub kind: SensorKind,
    pub base: Transform,
    pub placement: Placement,
    pub motion: Option<MotionSpec>,
    pub jitter_stream: String,
    seed: u64,
    fps: u32,
}

impl SensorTrack {
    pub fn new(index: usize, spec: &SensorSpec, seed: u64, fps: u32) -> Self {
        Self {
            index,
            kind: spec.kind,
            base: spec.transform,
            placement: spec.placement.clone(),
            motion: spec.motion,
            jitter_stream: format!("jitter/{index}"),
            seed,
            fps,
        }
    }

    /// Jitter offsets (location, rotation) drawn for `frame`.
    pub fn jitter_at(&self, frame: u64) -> Option<(Vec3, Rotator)> {
        let j = self.motion?.jitter?;
        let mut rng = SplitMix64::stream(self.seed, &format!("{}/{frame}", self.jitter_stream));
        let loc = Vec3::new(
            rng.symmetric(j.location_range.x),
            rng.symmetric(j.location_range.y),
            rng.symmetric(j.location_range.z),
        );
        let rot = Rotator::new(
            rng.symmetric(j.rotation_range.pitch),
            rng.symmetric(j.rotation_range.yaw),
            rng.symmetric(j.rotation_range.roll),
        );
        Some((loc, rot))
    }

    /// Pose in the placement frame, before attachment.
    pub fn local_pose_at(&self, frame: u64) -> Transform {
        let Some(m) = self.motion else {
            return self.base;
        };
        let mut location = self.base.location;
        let mut rotation = self.base.rotation;
        if let Some(l) = m.linear {
            let path = l.destination - self.base.location;
            let dist = path.length();
            if dist > 0.0 {
                let travelled = (frame as f64 * l.speed / f64::from(self.fps)).min(dist);
                location = if travelled >= dist {
                    l.destination
                } else {
                    self.base.location + path * (travelled / dist)
                };
            }
        }
        if let Some(r) = m.rotation {
            let offset = r.amplitude * triangle_wave(frame, r.period);
            match r.axis {
                Axis::Pitch => rotation.pitch += offset,
                Axis::Yaw => rotation.yaw += offset,
                Axis::Roll => rotation.roll += offset,
            }
        }
        if let Some((dl, dr)) = self.jitter_at(frame) {
            location = location + dl;
            rotation.pitch += dr.pitch;
            rotation.yaw += dr.yaw;
            rotation.roll += dr.roll;
        }
        Transform::new(location, rotation)
    }

    /// World pose at `frame`; `scene` must already be stepped to `frame`.
    pub fn pose_at(&self, frame: u64, scene: &Scene) -> Result<Transform, RigError> {
        let local = self.local_pose_at(frame);
        match &self.placement {
            Placement::Static => Ok(local),
            Placement::Attached { role_name } => {
                let host = scene
                    .actor_by_role(role_name)
                    .ok_or_else(|| RigError::MissingHost {
                        sensor: self.index,
                        role: role_name.clone(),
                    })?;
                Ok(host.transform.compose(&local))
            }
        }
    }
}

pub fn pose_at(track: &SensorTrack, frame: u64, scene: &Scene) -> Result<Transform, RigError> {
    track.pose_at(frame, scene)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{JitterMotion, LinearMotion, RotationMotion};

    fn spec() -> SensorSpec {
        SensorSpec {
            kind: SensorKind::Rgb,
            image_size_x: 800,
            image_size_y: 600,
            fov: 90.0,
            transform: Transform::from_location(Vec3::new(-95.0, 160.0, 1.6)),
            placement: Placement::Static,
            motion: None,
        }
    }

    #[test]
    fn intrinsics_examples() {
        let k = intrinsics(&spec());
        assert!((k.focal - 400.0).abs() < 1e-9);
        assert_eq!((k.cx, k.cy), (400.0, 300.0));
        let k60 = CameraIntrinsics::from_fov(800, 600, 60.0);
        // 400 / tan(30°) = 400·√3
        assert!((k60.focal - 400.0 * 3f64.sqrt()).abs() < 1e-9);
        assert!((k60.focal - 692.820).abs() < 1e-3);
        let wide = CameraIntrinsics::from_fov(800, 600, 179.9);
        assert!((wide.focal - 400.0 * (0.05f64).to_radians().tan()).abs() < 1e-12);
        assert!((wide.focal - 0.349).abs() < 1e-3);
    }

    #[test]
    fn projection_examples() {
        let k = intrinsics(&spec());
        let id = Transform::default();
        let p = project(Vec3::new(10.0, 0.0, 0.0), &id, &k).unwrap();
        assert_eq!((p.u, p.v, p.depth), (400.0, 300.0, 10.0));
        assert!(project(Vec3::new(-1.0, 0.0, 0.0), &id, &k).is_none());
        let q = project(Vec3::new(10.0, 5.0, 0.0), &id, &k).unwrap();
        assert_eq!(q.u, 600.0);
        let up = project(Vec3::new(10.0, 0.0, 1.0), &id, &k).unwrap();
        assert!(up.v < 300.0);
    }

    #[test]
    fn triangle_wave_extremes() {
        let p = 40;
        assert_eq!(triangle_wave(0, p), 0.0);
        assert_eq!(triangle_wave(10, p), 1.0);
        assert_eq!(triangle_wave(20, p), 0.0);
        assert_eq!(triangle_wave(30, p), -1.0);
        for f in 0..200 {
            assert!(triangle_wave(f, p).abs() <= 1.0);
        }
    }

    #[test]
    fn no_motion_is_identity() {
        let t = SensorTrack::new(0, &spec(), 30, 30);
        for f in [0, 1, 77, 299] {
            assert_eq!(t.local_pose_at(f), spec().transform);
        }
    }

    #[test]
    fn linear_motion_closed_form_and_stepwise() {
        let mut s = spec();
        s.motion = Some(MotionSpec {
            linear: Some(LinearMotion {
                destination: Vec3::new(-95.0, 140.0, 1.6),
                speed: 2.0,
            }),
            ..Default::default()
        });
        let t = SensorTrack::new(0, &s, 30, 30);
        let y150 = t.local_pose_at(150).location.y;
        // stepwise reference: accumulate the per-frame displacement
        let mut y = 160.0f64;
        for _ in 0..150 {
            y -= 2.0 / 30.0;
        }
        assert!((y150 - 150.0).abs() < 1e-9);
        assert!((y150 - y).abs() < 1e-9);
        // clamps at the destination
        assert_eq!(t.local_pose_at(10_000).location, Vec3::new(-95.0, 140.0, 1.6));
    }

    #[test]
    fn rotation_motion_peaks() {
        let mut s = spec();
        s.motion = Some(MotionSpec {
            rotation: Some(RotationMotion {
                axis: Axis::Yaw,
                amplitude: 15.0,
                period: 120,
            }),
            ..Default::default()
        });
        let t = SensorTrack::new(0, &s, 30, 30);
        assert_eq!(t.local_pose_at(30).rotation.yaw, 15.0);
        assert_eq!(t.local_pose_at(90).rotation.yaw, -15.0);
        assert_eq!(t.local_pose_at(60).rotation.yaw, 0.0);
    }

    #[test]
    fn jitter_statistics() {
        let mut s = spec();
        s.motion = Some(MotionSpec {
            jitter: Some(JitterMotion {
                location_range: Vec3::new(0.05, 0.05, 0.05),
                rotation_range: Rotator::new(1.0, 1.0, 1.0),
            }),
            ..Default::default()
        });
        let t = SensorTrack::new(2, &s, 30, 30);
        let n = 10_000u64;
        let mut sum = Vec3::ZERO;
        for f in 0..n {
            let (dl, dr) = t.jitter_at(f).unwrap();
            for c in [dl.x, dl.y, dl.z] {
                assert!((-0.05..=0.05).contains(&c));
            }
            for c in [dr.pitch, dr.yaw, dr.roll] {
                assert!((-1.0..=1.0).contains(&c));
            }
            sum = sum + dl;
        }
        let mean = sum * (1.0 / n as f64);
        for c in [mean.x, mean.y, mean.z] {
            assert!(c.abs() <= 0.005, "mean {c}");
        }
        assert_eq!(t.jitter_at(5), t.jitter_at(5));
        assert_ne!(t.jitter_at(5), t.jitter_at(6));
    }
}
