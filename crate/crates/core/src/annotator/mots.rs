//! MOTS text and PNG exports. Object ids are `class_id * 1000 + instance_id`.

use super::Detection;
use crate::renderer::{InstancePixel, InstancePlane};
use image::{ImageBuffer, Luma};
use thiserror::Error;

pub const MAX_CLASS: u8 = 63;
pub const MAX_INSTANCE: u16 = 999;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MotsError {
    #[error("instance id {0} does not fit the MOTS id scheme (must be < 1000)")]
    InstanceTooLarge(u16),
    #[error("class id {0} does not fit the MOTS id scheme (must be < 64)")]
    ClassTooLarge(u8),
    #[error("MOTS id {0} is not a valid class*1000+instance value")]
    InvalidId(u16),
}

pub fn encode_mots_id(class_id: u8, instance_id: u16) -> Result<u16, MotsError> {
    if class_id > MAX_CLASS {
        return Err(MotsError::ClassTooLarge(class_id));
    }
    if instance_id > MAX_INSTANCE {
        return Err(MotsError::InstanceTooLarge(instance_id));
    }
    Ok(u16::from(class_id) * 1000 + instance_id)
}

pub fn decode_mots_id(value: u16) -> Result<(u8, u16), MotsError> {
    let class = value / 1000;
    if class > u16::from(MAX_CLASS) {
        return Err(MotsError::InvalidId(value));
    }
    Ok((class as u8, value % 1000))
}

/// One line per detection:
/// `frame_id track_with_class class_id img_height img_width rle`.
pub fn export_mots_text(detections: &[Detection]) -> Result<Vec<String>, MotsError> {
    let mut sorted: Vec<&Detection> = detections.iter().collect();
    sorted.sort_by_key(|d| (d.frame_index, d.track_id));
    sorted
        .into_iter()
        .map(|d| {
            let id = encode_mots_id(d.class_id, d.track_id)?;
            Ok(format!(
                "{} {} {} {} {} {}",
                d.frame_index,
                id,
                d.class_id,
                d.mask.height,
                d.mask.width,
                d.mask.to_compressed()
            ))
        })
        .collect()
}

pub fn export_mots_png(plane: &InstancePlane) -> Result<ImageBuffer<Luma<u16>, Vec<u16>>, MotsError> {
    let data = plane
        .data
        .iter()
        .map(|p| {
            if p.instance_id == 0 {
                Ok(0)
            } else {
                encode_mots_id(p.semantic_class, p.instance_id)
            }
        })
        .collect::<Result<Vec<u16>, _>>()?;
    Ok(ImageBuffer::from_raw(plane.width, plane.height, data).expect("plane dimensions"))
}

pub fn decode_mots_png(img: &ImageBuffer<Luma<u16>, Vec<u16>>) -> Result<InstancePlane, MotsError> {
    let data = img
        .pixels()
        .map(|p| {
            if p.0[0] == 0 {
                return Ok(InstancePixel::BACKGROUND);
            }
            let (semantic_class, instance_id) = decode_mots_id(p.0[0])?;
            Ok(InstancePixel {
                semantic_class,
                instance_id,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(InstancePlane {
        width: img.width(),
        height: img.height(),
        data,
    })
}
