//! Ground-truth annotations derived from instance planes.

pub mod kwcoco;
pub mod mots;
pub mod rle;

use crate::renderer::InstancePlane;
use rle::{encode_by, Rle};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

pub use rle::{rle_decode, rle_encode, Mask, RleError};

/// Instances smaller than this are dropped by default.
pub const DEFAULT_MIN_PIXELS: u64 = 10;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Detection {
    pub frame_index: u64,
    pub sensor_index: usize,
    pub track_id: u16,
    pub class_id: u8,
    /// Tight hull of the mask: x, y, width, height.
    pub bbox: [u32; 4],
    pub area: u64,
    pub mask: Rle,
}

impl Detection {
    pub fn centroid(&self) -> (f64, f64) {
        let [x, y, w, h] = self.bbox;
        (f64::from(x) + f64::from(w) / 2.0, f64::from(y) + f64::from(h) / 2.0)
    }
}

struct Accum {
    class: u8,
    min: (u32, u32),
    max: (u32, u32),
    count: u64,
}

/// One detection per visible instance with at least `min_pixels` pixels,
/// sorted by track id. Frame and sensor indices are zero; see
/// [`detections_for_frame`].
pub fn detections_from_instance(plane: &InstancePlane, min_pixels: u64) -> Vec<Detection> {
    detections_for_frame(plane, min_pixels, 0, 0)
}

pub fn detections_for_frame(
    plane: &InstancePlane,
    min_pixels: u64,
    frame_index: u64,
    sensor_index: usize,
) -> Vec<Detection> {
    let mut acc: BTreeMap<u16, Accum> = BTreeMap::new();
    for y in 0..plane.height {
        for x in 0..plane.width {
            let p = plane.get(x, y);
            if p.instance_id == 0 {
                continue;
            }
            let a = acc.entry(p.instance_id).or_insert(Accum {
                class: p.semantic_class,
                min: (x, y),
                max: (x, y),
                count: 0,
            });
            a.min = (a.min.0.min(x), a.min.1.min(y));
            a.max = (a.max.0.max(x), a.max.1.max(y));
            a.count += 1;
        }
    }
    acc.into_iter()
        .filter(|(_, a)| a.count >= min_pixels.max(1))
        .map(|(id, a)| Detection {
            frame_index,
            sensor_index,
            track_id: id,
            class_id: a.class,
            bbox: [a.min.0, a.min.1, a.max.0 - a.min.0 + 1, a.max.1 - a.min.1 + 1],
            area: a.count,
            mask: encode_by(plane.width, plane.height, |x, y| plane.get(x, y).instance_id == id),
        })
        .collect()
}
