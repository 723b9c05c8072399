//! Depth and instance image encodings.
//!
//! Depth is stored two ways: a 24-bit RGB encoding over [0, 1000] m
//! (`v = round(d / 1000 · (2²⁴ − 1))`, little-endian across R, G, B), and a
//! 16-bit PNG of millimeters that saturates at 65.535 m.

use super::light::FAR;
use super::{FrameBundle, InstancePixel, InstancePlane};
use image::{ImageBuffer, Luma, RgbImage};

const DEPTH_LEVELS: f64 = 16_777_215.0; // 2^24 - 1

/// Largest round-trip error of the 24-bit depth encoding.
pub const DEPTH_QUANTUM: f64 = FAR / DEPTH_LEVELS;

/// Encodes `d` meters; values outside [0, 1000] are clamped and flagged.
pub fn encode_depth_checked(d: f64) -> ([u8; 3], bool) {
    let clamped = if d.is_nan() { 0.0 } else { d.clamp(0.0, FAR) };
    let out_of_range = clamped != d;
    let v = (clamped / FAR * DEPTH_LEVELS).round() as u32;
    ([(v & 0xff) as u8, ((v >> 8) & 0xff) as u8, (v >> 16) as u8], out_of_range)
}

pub fn encode_depth(d: f64) -> [u8; 3] {
    encode_depth_checked(d).0
}

pub fn decode_depth(rgb: [u8; 3]) -> f64 {
    let v = u32::from(rgb[0]) | (u32::from(rgb[1]) << 8) | (u32::from(rgb[2]) << 16);
    f64::from(v) / DEPTH_LEVELS * FAR
}

/// 24-bit encoded depth image and the number of clamped samples.
pub fn depth_to_png24(depth: &[f64], width: u32, height: u32) -> (RgbImage, u64) {
    let mut clamped = 0;
    let mut img = RgbImage::new(width, height);
    for (px, &d) in img.pixels_mut().zip(depth) {
        let (rgb, c) = encode_depth_checked(d);
        clamped += u64::from(c);
        px.0 = rgb;
    }
    (img, clamped)
}

pub fn depth_from_png24(img: &RgbImage) -> Vec<f64> {
    img.pixels().map(|p| decode_depth(p.0)).collect()
}

pub fn depth_to_mm16(depth: &[f64], width: u32, height: u32) -> ImageBuffer<Luma<u16>, Vec<u16>> {
    let data = depth
        .iter()
        .map(|&d| (d.max(0.0) * 1000.0).round().min(f64::from(u16::MAX)) as u16)
        .collect();
    ImageBuffer::from_raw(width, height, data).expect("plane size matches dimensions")
}

pub fn encode_instance_pixel(p: InstancePixel) -> [u8; 3] {
    [p.semantic_class, (p.instance_id & 0xff) as u8, (p.instance_id >> 8) as u8]
}

pub fn decode_instance_pixel(rgb: [u8; 3]) -> InstancePixel {
    InstancePixel {
        semantic_class: rgb[0],
        instance_id: u16::from(rgb[1]) | (u16::from(rgb[2]) << 8),
    }
}

pub fn encode_instance_png(plane: &InstancePlane) -> RgbImage {
    let mut img = RgbImage::new(plane.width, plane.height);
    for (px, &p) in img.pixels_mut().zip(&plane.data) {
        px.0 = encode_instance_pixel(p);
    }
    img
}

pub fn decode_instance_png(img: &RgbImage) -> InstancePlane {
    InstancePlane {
        width: img.width(),
        height: img.height(),
        data: img.pixels().map(|p| decode_instance_pixel(p.0)).collect(),
    }
}

impl FrameBundle {
    pub fn depth_png24(&self) -> (RgbImage, u64) {
        depth_to_png24(&self.depth, self.width(), self.height())
    }

    pub fn depth_mm16(&self) -> ImageBuffer<Luma<u16>, Vec<u16>> {
        depth_to_mm16(&self.depth, self.width(), self.height())
    }

    pub fn instance_png(&self) -> RgbImage {
        encode_instance_png(&self.instance)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    #[test]
    fn depth_fixed_points() {
        assert_eq!(encode_depth(0.0), [0, 0, 0]);
        assert_eq!(encode_depth(1000.0), [255, 255, 255]);
        // 500 / 1000 · 16777215 = 8388607.5, rounds half away from zero
        assert_eq!(encode_depth(500.0), [0, 0, 128]);
        assert_eq!(decode_depth([255, 255, 255]), 1000.0);
    }

    #[test]
    fn depth_out_of_range_is_flagged() {
        assert_eq!(encode_depth_checked(-3.0), ([0, 0, 0], true));
        assert_eq!(encode_depth_checked(2000.0), ([255, 255, 255], true));
        assert!(!encode_depth_checked(12.5).1);
        let (_, n) = depth_to_png24(&[1.0, 1e6, -1.0, 3.0], 2, 2);
        assert_eq!(n, 2);
    }

    #[test]
    fn depth_round_trip_bound() {
        let mut rng = SplitMix64::stream(1, "depth");
        for _ in 0..100_000 {
            let d = rng.next_f64() * FAR;
            let e = (decode_depth(encode_depth(d)) - d).abs();
            assert!(e <= DEPTH_QUANTUM, "{d} -> {e}");
        }
    }

    #[test]
    fn instance_examples() {
        let e = |c, i| {
            encode_instance_pixel(InstancePixel {
                semantic_class: c,
                instance_id: i,
            })
        };
        assert_eq!(e(4, 1), [4, 1, 0]);
        assert_eq!(e(4, 258), [4, 2, 1]);
        assert_eq!(e(0, 0), [0, 0, 0]);
        assert_eq!(
            decode_instance_pixel([4, 2, 1]),
            InstancePixel {
                semantic_class: 4,
                instance_id: 258
            }
        );
    }

    #[test]
    fn millimeter_plane_saturates() {
        let img = depth_to_mm16(&[0.0, 1.2345, 100.0, FAR], 2, 2);
        assert_eq!(img.as_raw(), &vec![0, 1235, 65535, 65535]);
    }
}
