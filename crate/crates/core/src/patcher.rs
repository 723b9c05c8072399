//! Three ways of putting a patch into a frame:
//!
//! - **digital**: paste the patch over the rendered frame through the
//!   placeholder's homography. No lighting, shadow or fog is applied.
//! - **color-corrected**: the same paste, with patch colors first mapped by
//!   an affine transform estimated from how the green placeholder rendered.
//! - **rendered**: stream the patch onto the placeholder as a texture and
//!   render, so it is shaded, shadowed and fogged like everything else.

use crate::renderer::{render, sample_bilinear, to_u8, FrameBundle, InstancePlane, LightModel};
use crate::rng::SplitMix64;
use crate::scene::{PlaceholderId, Scene, SceneError, PLACEHOLDER_GREEN};
use crate::sensor_rig::Camera;
use image::RgbImage;
use serde::{Deserialize, Serialize};
use std::str::FromStr;
use thiserror::Error;

/// Placeholders need at least this many visible pixels to be located.
pub const MIN_VISIBLE_PIXELS: usize = 4;
/// Color estimation needs at least this many mask pixels.
pub const MIN_ESTIMATION_PIXELS: usize = 50;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PatchError {
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error("placeholder {0} is not visible ({1} pixels)")]
    NotVisible(usize, usize),
    #[error("placeholder {0} is not fully in front of the camera")]
    BehindCamera(usize),
    #[error("degenerate placeholder projection")]
    DegenerateHomography,
    #[error("color estimation mask has {0} pixels, need at least {MIN_ESTIMATION_PIXELS}")]
    MaskTooSmall(usize),
    #[error("color estimation saw an all-black placeholder")]
    DegenerateObservation,
    #[error("mask size {got} does not match frame size {expected}")]
    MaskSize { got: usize, expected: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PatchMethod {
    Digital,
    Corrected,
    Rendered,
}

impl FromStr for PatchMethod {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "digital" => Ok(PatchMethod::Digital),
            "corrected" => Ok(PatchMethod::Corrected),
            "rendered" => Ok(PatchMethod::Rendered),
            other => Err(format!(
                "unknown patch method `{other}` (expected digital, corrected or rendered)"
            )),
        }
    }
}

/// Projective map from patch UV coordinates to image pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Homography(pub [[f64; 3]; 3]);

impl Homography {
    pub fn apply(&self, u: f64, v: f64) -> Option<(f64, f64)> {
        let m = &self.0;
        let x = m[0][0] * u + m[0][1] * v + m[0][2];
        let y = m[1][0] * u + m[1][1] * v + m[1][2];
        let w = m[2][0] * u + m[2][1] * v + m[2][2];
        (w.abs() > 1e-15).then(|| (x / w, y / w))
    }

    pub fn inverse(&self) -> Option<Homography> {
        let m = &self.0;
        let cof = |r0: usize, r1: usize, c0: usize, c1: usize| {
            m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0]
        };
        let adj = [
            [cof(1, 2, 1, 2), -cof(0, 2, 1, 2), cof(0, 1, 1, 2)],
            [-cof(1, 2, 0, 2), cof(0, 2, 0, 2), -cof(0, 1, 0, 2)],
            [cof(1, 2, 0, 1), -cof(0, 2, 0, 1), cof(0, 1, 0, 1)],
        ];
        let det = m[0][0] * adj[0][0] + m[0][1] * adj[1][0] + m[0][2] * adj[2][0];
        if det.abs() < 1e-300 || !det.is_finite() {
            return None;
        }
        Some(Homography(adj.map(|row| row.map(|x| x / det))))
    }

    /// Direct linear transform from four correspondences, `h33 = 1`.
    pub fn from_correspondences(src: [(f64, f64); 4], dst: [(f64, f64); 4]) -> Option<Self> {
        let mut a = [[0.0f64; 9]; 8];
        for i in 0..4 {
            let ((u, v), (x, y)) = (src[i], dst[i]);
            a[2 * i] = [u, v, 1.0, 0.0, 0.0, 0.0, -u * x, -v * x, x];
            a[2 * i + 1] = [0.0, 0.0, 0.0, u, v, 1.0, -u * y, -v * y, y];
        }
        let h = solve8(a)?;
        Some(Homography([
            [h[0], h[1], h[2]],
            [h[3], h[4], h[5]],
            [h[6], h[7], 1.0],
        ]))
    }
}

/// Gaussian elimination with partial pivoting on an 8x8 augmented system.
fn solve8(mut a: [[f64; 9]; 8]) -> Option<[f64; 8]> {
    for col in 0..8 {
        let pivot = (col..8).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, pivot);
        for row in 0..8 {
            if row != col {
                let f = a[row][col] / a[col][col];
                if f != 0.0 {
                    for k in col..9 {
                        a[row][k] -= f * a[col][k];
                    }
                }
            }
        }
    }
    Some(std::array::from_fn(|i| a[i][8] / a[i][i]))
}

pub const UV_SQUARE: [(f64, f64); 4] = [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PatchPlacement {
    pub placeholder_id: PlaceholderId,
    /// Image positions of the UV corners (0,0), (1,0), (1,1), (0,1).
    pub projected_quad: [(f64, f64); 4],
    pub homography: Homography,
}

impl PatchPlacement {
    /// Calls `f(x, y, u, v)` for every pixel whose center lies inside the
    /// projected quad.
    pub fn for_each_pixel(&self, width: u32, height: u32, mut f: impl FnMut(u32, u32, f64, f64)) {
        let Some(inv) = self.homography.inverse() else {
            return;
        };
        let q = &self.projected_quad;
        let min_x = q.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
        let max_x = q.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
        let min_y = q.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
        let max_y = q.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
        let x0 = ((min_x - 0.5).ceil().max(0.0)) as u32;
        let y0 = ((min_y - 0.5).ceil().max(0.0)) as u32;
        let x1 = (max_x - 0.5).floor().min(f64::from(width) - 1.0);
        let y1 = (max_y - 0.5).floor().min(f64::from(height) - 1.0);
        if x1 < 0.0 || y1 < 0.0 {
            return;
        }
        for y in y0..=y1 as u32 {
            for x in x0..=x1 as u32 {
                let Some((u, v)) = inv.apply(f64::from(x) + 0.5, f64::from(y) + 0.5) else {
                    continue;
                };
                if (0.0..=1.0).contains(&u) && (0.0..=1.0).contains(&v) {
                    f(x, y, u, v);
                }
            }
        }
    }

    /// Row-major mask of pixels inside the projected quad.
    pub fn mask(&self, width: u32, height: u32) -> Vec<bool> {
        let mut m = vec![false; (width * height) as usize];
        self.for_each_pixel(width, height, |x, y, _, _| m[(y * width + x) as usize] = true);
        m
    }
}

/// Projects the placeholder's corners with the frame's camera and solves
/// the UV→image homography.
pub fn locate_placeholder(
    frame: &FrameBundle,
    scene: &Scene,
    id: PlaceholderId,
) -> Result<PatchPlacement, PatchError> {
    locate_in(&frame.instance, &frame.camera, scene, id)
}

/// [`locate_placeholder`] on a stored instance plane.
pub fn locate_in(
    instance: &InstancePlane,
    camera: &Camera,
    scene: &Scene,
    id: PlaceholderId,
) -> Result<PatchPlacement, PatchError> {
    let ph = scene.placeholder(id)?;
    let visible = instance
        .data
        .iter()
        .filter(|p| p.instance_id == ph.instance_id)
        .count();
    if visible < MIN_VISIBLE_PIXELS {
        return Err(PatchError::NotVisible(id.0, visible));
    }
    placement_for(camera, scene, id)
}

/// Placement from geometry alone, without a visibility check.
pub fn placement_for(
    camera: &Camera,
    scene: &Scene,
    id: PlaceholderId,
) -> Result<PatchPlacement, PatchError> {
    let ph = scene.placeholder(id)?;
    let mut quad = [(0.0, 0.0); 4];
    for (q, c) in quad.iter_mut().zip(ph.corners) {
        let p = camera.project(c).ok_or(PatchError::BehindCamera(id.0))?;
        *q = (p.u, p.v);
    }
    let homography =
        Homography::from_correspondences(UV_SQUARE, quad).ok_or(PatchError::DegenerateHomography)?;
    Ok(PatchPlacement {
        placeholder_id: id,
        projected_quad: quad,
        homography,
    })
}

/// Per-channel affine color map `out = gain · in + offset`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColorTransform {
    pub gain: [f64; 3],
    pub offset: [f64; 3],
}

impl ColorTransform {
    pub const IDENTITY: ColorTransform = ColorTransform {
        gain: [1.0; 3],
        offset: [0.0; 3],
    };

    pub fn apply(&self, c: [f64; 3]) -> [f64; 3] {
        std::array::from_fn(|k| self.gain[k] * c[k] + self.offset[k])
    }

    pub fn is_identity(&self) -> bool {
        *self == Self::IDENTITY
    }
}

/// Fits how the placeholder's known `reference` color was transformed.
///
/// The reference is constant over the mask, so the least-squares fit per
/// channel reduces to channel means. Channels where the reference is
/// nonzero determine the gain; channels where it is zero only reveal an
/// additive term (haze). Illumination is treated as achromatic: the gain is
/// shared by all channels, and the additive term on nonzero channels is the
/// mean of the zero channels' offsets.
pub fn estimate_color_transform(
    frame_rgb: &RgbImage,
    mask: &[bool],
    reference: [u8; 3],
) -> Result<ColorTransform, PatchError> {
    let expected = (frame_rgb.width() * frame_rgb.height()) as usize;
    if mask.len() != expected {
        return Err(PatchError::MaskSize {
            got: mask.len(),
            expected,
        });
    }
    let mut sum = [0.0f64; 3];
    let mut n = 0usize;
    let mut any_light = false;
    for (px, &m) in frame_rgb.pixels().zip(mask) {
        if m {
            n += 1;
            for c in 0..3 {
                sum[c] += f64::from(px.0[c]);
            }
            any_light |= px.0 != [0, 0, 0];
        }
    }
    if n < MIN_ESTIMATION_PIXELS {
        return Err(PatchError::MaskTooSmall(n));
    }
    if !any_light {
        return Err(PatchError::DegenerateObservation);
    }
    let mean = sum.map(|s| s / n as f64);
    let zero: Vec<usize> = (0..3).filter(|&c| reference[c] == 0).collect();
    let lit: Vec<usize> = (0..3).filter(|&c| reference[c] != 0).collect();
    let haze = if zero.is_empty() {
        0.0
    } else {
        zero.iter().map(|&c| mean[c]).sum::<f64>() / zero.len() as f64
    };
    let gain = if lit.is_empty() {
        0.0
    } else {
        lit.iter()
            .map(|&c| ((mean[c] - haze) / f64::from(reference[c])).max(0.0))
            .sum::<f64>()
            / lit.len() as f64
    };
    let mut offset = [haze; 3];
    for &c in &zero {
        offset[c] = mean[c];
    }
    Ok(ColorTransform {
        gain: [gain; 3],
        offset,
    })
}

fn composite_with(
    frame_rgb: &RgbImage,
    patch: &RgbImage,
    placement: &PatchPlacement,
    transform: &ColorTransform,
) -> RgbImage {
    let mut out = frame_rgb.clone();
    let (w, h) = out.dimensions();
    placement.for_each_pixel(w, h, |x, y, u, v| {
        let c = transform.apply(sample_bilinear(patch, u, v));
        out.put_pixel(x, y, image::Rgb(c.map(to_u8)));
    });
    out
}

/// Pastes `patch` over the projected quad. Pixels outside are untouched.
pub fn composite_digital(frame_rgb: &RgbImage, patch: &RgbImage, placement: &PatchPlacement) -> RgbImage {
    composite_with(frame_rgb, patch, placement, &ColorTransform::IDENTITY)
}

pub fn composite_color_corrected(
    frame_rgb: &RgbImage,
    patch: &RgbImage,
    placement: &PatchPlacement,
    transform: &ColorTransform,
) -> RgbImage {
    composite_with(frame_rgb, patch, placement, transform)
}

/// Streams `patch` onto the placeholder and renders the scene.
pub fn render_streamed(
    scene: &Scene,
    id: PlaceholderId,
    patch: &RgbImage,
    camera: &Camera,
    light: &LightModel,
    rain: SplitMix64,
) -> Result<FrameBundle, PatchError> {
    let mut s = scene.clone();
    s.set_patch_texture(id, patch.clone())?;
    Ok(render(&s, camera, light, rain))
}

/// Estimates the color transform from a placeholder render: the mask is
/// the visible placeholder pixels inside its projected quad.
pub fn estimate_from_frame(
    frame: &FrameBundle,
    scene: &Scene,
    placement: &PatchPlacement,
) -> Result<ColorTransform, PatchError> {
    estimate_in(&frame.rgb, &frame.instance, scene, placement)
}

/// [`estimate_from_frame`] on stored planes.
pub fn estimate_in(
    rgb: &RgbImage,
    instance: &InstancePlane,
    scene: &Scene,
    placement: &PatchPlacement,
) -> Result<ColorTransform, PatchError> {
    let ph = scene.placeholder(placement.placeholder_id)?;
    let quad = placement.mask(rgb.width(), rgb.height());
    let mask: Vec<bool> = quad
        .iter()
        .zip(&instance.data)
        .map(|(&q, p)| q && p.instance_id == ph.instance_id)
        .collect();
    estimate_color_transform(rgb, &mask, PLACEHOLDER_GREEN)
}

/// Mean absolute per-channel difference over `mask` (0..255 scale).
pub fn mean_abs_diff(a: &RgbImage, b: &RgbImage, mask: &[bool]) -> f64 {
    let mut total = 0u64;
    let mut n = 0u64;
    for ((pa, pb), &m) in a.pixels().zip(b.pixels()).zip(mask) {
        if m {
            n += 1;
            for c in 0..3 {
                total += u64::from(pa.0[c].abs_diff(pb.0[c]));
            }
        }
    }
    if n == 0 {
        0.0
    } else {
        total as f64 / (3 * n) as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Rotator, Transform, Vec3};
    use crate::scene::{PatchPlaceholder, Scene};
    use crate::sensor_rig::CameraIntrinsics;
    use std::sync::Arc;

    fn scene_with_patch(center: Vec3, yaw: f64, roll: f64, size: f64) -> Scene {
        let spec = crate::config::PatchSpec {
            name: "p".into(),
            transform: Transform::new(center, Rotator::new(0.0, yaw, roll)),
            width: size,
            height: size,
            texture: None,
        };
        Scene {
            statics: Arc::new(vec![]),
            actors: vec![],
            placeholders: vec![PatchPlaceholder::from_spec(&spec, 1)],
            frame_index: 0,
            fps: 30,
            seed: 0,
            layout: "test".into(),
        }
    }

    fn cam() -> Camera {
        Camera::new(Transform::default(), CameraIntrinsics::from_fov(64, 48, 90.0))
    }

    #[test]
    fn homography_hits_corners() {
        let dst = [(10.0, 5.0), (50.0, 8.0), (45.0, 40.0), (12.0, 30.0)];
        let h = Homography::from_correspondences(UV_SQUARE, dst).unwrap();
        for (s, d) in UV_SQUARE.iter().zip(dst) {
            let (x, y) = h.apply(s.0, s.1).unwrap();
            assert!((x - d.0).abs() < 1e-6 && (y - d.1).abs() < 1e-6);
        }
        let inv = h.inverse().unwrap();
        let (u, v) = inv.apply(50.0, 8.0).unwrap();
        assert!((u - 1.0).abs() < 1e-9 && v.abs() < 1e-9);
    }

    #[test]
    fn fronto_parallel_is_scale_translate() {
        let s = scene_with_patch(Vec3::new(10.0, 0.0, 0.0), 180.0, 0.0, 4.0);
        let f = render(&s, &cam(), &LightModel::ambient_only(1.0), SplitMix64::from_state(0));
        let p = locate_placeholder(&f, &s, PlaceholderId(0)).unwrap();
        let h = p.homography.0;
        assert!(h[0][1].abs() < 1e-9 && h[1][0].abs() < 1e-9);
        assert!(h[2][0].abs() < 1e-9 && h[2][1].abs() < 1e-9);
        // 4 m at 10 m with focal 32: 12.8 px wide, centered
        assert!((h[0][0] - 12.8).abs() < 1e-9);
        assert!((p.projected_quad[0].0 - 25.6).abs() < 1e-9);
    }

    #[test]
    fn rotated_quad_matches_per_vertex_projection() {
        let s = scene_with_patch(Vec3::new(8.0, 0.5, 0.2), 180.0, 45.0, 3.0);
        let c = cam();
        let f = render(&s, &c, &LightModel::ambient_only(1.0), SplitMix64::from_state(0));
        let p = locate_placeholder(&f, &s, PlaceholderId(0)).unwrap();
        for (q, corner) in p.projected_quad.iter().zip(s.placeholders[0].corners) {
            let e = c.project(corner).unwrap();
            assert!((q.0 - e.u).abs() < 1e-9 && (q.1 - e.v).abs() < 1e-9);
        }
    }

    #[test]
    fn occluded_placeholder_errors() {
        let mut s = scene_with_patch(Vec3::new(10.0, 0.0, 0.0), 180.0, 0.0, 2.0);
        let mut wall = crate::scene::Mesh::cuboid(
            Vec3::new(5.0, -5.0, -5.0),
            Vec3::new(5.2, 5.0, 5.0),
            crate::scene::Albedo::Flat([9, 9, 9]),
            11,
        );
        wall.instance_id = 2;
        s.statics = Arc::new(vec![wall]);
        let f = render(&s, &cam(), &LightModel::ambient_only(1.0), SplitMix64::from_state(0));
        assert!(matches!(
            locate_placeholder(&f, &s, PlaceholderId(0)),
            Err(PatchError::NotVisible(0, 0))
        ));
    }

    #[test]
    fn identity_transform_matches_digital() {
        let s = scene_with_patch(Vec3::new(6.0, 0.0, 0.0), 180.0, 0.0, 3.0);
        let f = render(&s, &cam(), &LightModel::ambient_only(0.5), SplitMix64::from_state(0));
        let p = locate_placeholder(&f, &s, PlaceholderId(0)).unwrap();
        let patch = RgbImage::from_fn(8, 8, |x, y| image::Rgb([(x * 30) as u8, (y * 30) as u8, 200]));
        let a = composite_digital(&f.rgb, &patch, &p);
        let b = composite_color_corrected(&f.rgb, &patch, &p, &ColorTransform::IDENTITY);
        assert_eq!(a, b);
        // outside the quad nothing changes
        let m = p.mask(64, 48);
        for ((pa, pf), &inside) in a.pixels().zip(f.rgb.pixels()).zip(&m) {
            if !inside {
                assert_eq!(pa, pf);
            }
        }
    }

    #[test]
    fn estimation_examples() {
        let s = scene_with_patch(Vec3::new(5.0, 0.0, 0.0), 180.0, 0.0, 4.0);
        let c = cam();
        let unlit = render(&s, &c, &LightModel::ambient_only(1.0), SplitMix64::from_state(0));
        let p = locate_placeholder(&unlit, &s, PlaceholderId(0)).unwrap();
        let t = estimate_from_frame(&unlit, &s, &p).unwrap();
        assert!(t.is_identity(), "{t:?}");
        let half = render(&s, &c, &LightModel::ambient_only(0.5), SplitMix64::from_state(0));
        let t = estimate_from_frame(&half, &s, &p).unwrap();
        assert!((t.gain[1] - 0.5).abs() <= 0.01);
    }

    #[test]
    fn estimation_errors() {
        let img = RgbImage::new(10, 10);
        let small = vec![true; 10].into_iter().chain(vec![false; 90]).collect::<Vec<_>>();
        assert_eq!(
            estimate_color_transform(&img, &small, PLACEHOLDER_GREEN),
            Err(PatchError::MaskTooSmall(10))
        );
        assert_eq!(
            estimate_color_transform(&img, &vec![true; 100], PLACEHOLDER_GREEN),
            Err(PatchError::DegenerateObservation)
        );
    }

    #[test]
    fn uniform_green_texture_matches_placeholder() {
        let s = scene_with_patch(Vec3::new(6.0, 0.3, 0.1), 170.0, 10.0, 3.0);
        let light = LightModel::ambient_only(0.7);
        let plain = render(&s, &cam(), &light, SplitMix64::from_state(0));
        let green = RgbImage::from_pixel(5, 3, image::Rgb(PLACEHOLDER_GREEN));
        let streamed = render_streamed(&s, PlaceholderId(0), &green, &cam(), &light, SplitMix64::from_state(0)).unwrap();
        assert_eq!(plain.rgb, streamed.rgb);
        assert_eq!(plain.instance, streamed.instance);
        assert!(render_streamed(&s, PlaceholderId(999), &green, &cam(), &light, SplitMix64::from_state(0)).is_err());
    }

    #[test]
    fn method_parsing() {
        assert_eq!("digital".parse::<PatchMethod>(), Ok(PatchMethod::Digital));
        assert!("sticker".parse::<PatchMethod>().is_err());
    }
}
