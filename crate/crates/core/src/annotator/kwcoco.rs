//! kwcoco export: COCO plus `videos`, per-image `video_id` / `frame_index`
//! and per-annotation `track_id`.
//!
//! Emitted keys:
//! - top level: `info`, `videos`, `images`, `categories`, `annotations`
//! - video: `id`, `name`, `width`, `height`, `num_frames`, `sensor_index`
//! - image: `id`, `file_name`, `video_id`, `frame_index`, `width`, `height`
//! - category: `id` (the semantic class id), `name`
//! - annotation: `id`, `image_id`, `video_id`, `category_id`, `track_id`,
//!   `bbox` (x, y, w, h), `area`, `iscrowd` (always 0), `segmentation`
//!   (`size` = [h, w], `counts` = compressed RLE string)
//!
//! Video, image and annotation ids are dense from 1, ordered by
//! (video, frame, track).

use super::Detection;
use crate::scene::classes;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VideoInfo {
    pub name: String,
    pub sensor_index: usize,
    pub width: u32,
    pub height: u32,
    /// Directory of the frames, relative to the run root.
    pub frame_dir: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunMetadata {
    pub videos: Vec<VideoInfo>,
    pub num_frames: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub info: Info,
    pub videos: Vec<Video>,
    pub images: Vec<Image>,
    pub categories: Vec<Category>,
    pub annotations: Vec<Annotation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Info {
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Video {
    pub id: u64,
    pub name: String,
    pub width: u32,
    pub height: u32,
    pub num_frames: u64,
    pub sensor_index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Image {
    pub id: u64,
    pub file_name: String,
    pub video_id: u64,
    pub frame_index: u64,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Category {
    pub id: u8,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segmentation {
    pub size: [u32; 2],
    pub counts: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub id: u64,
    pub image_id: u64,
    pub video_id: u64,
    pub category_id: u8,
    pub track_id: u16,
    pub bbox: [u32; 4],
    pub area: u64,
    pub iscrowd: u8,
    pub segmentation: Segmentation,
}

pub fn frame_file_name(dir: &str, frame: u64) -> String {
    format!("{dir}/frame_{frame:06}.png")
}

pub fn export_kwcoco(detections: &[Detection], meta: &RunMetadata) -> Document {
    let mut videos = Vec::new();
    let mut images = Vec::new();
    let mut image_ids: BTreeMap<(usize, u64), (u64, u64)> = BTreeMap::new();
    for (vi, v) in meta.videos.iter().enumerate() {
        let video_id = vi as u64 + 1;
        videos.push(Video {
            id: video_id,
            name: v.name.clone(),
            width: v.width,
            height: v.height,
            num_frames: meta.num_frames,
            sensor_index: v.sensor_index,
        });
        for f in 0..meta.num_frames {
            let id = images.len() as u64 + 1;
            images.push(Image {
                id,
                file_name: frame_file_name(&v.frame_dir, f),
                video_id,
                frame_index: f,
                width: v.width,
                height: v.height,
            });
            image_ids.insert((v.sensor_index, f), (id, video_id));
        }
    }
    let mut sorted: Vec<&Detection> = detections
        .iter()
        .filter(|d| image_ids.contains_key(&(d.sensor_index, d.frame_index)))
        .collect();
    sorted.sort_by_key(|d| {
        let (image_id, _) = image_ids[&(d.sensor_index, d.frame_index)];
        (image_id, d.track_id)
    });
    let class_set: BTreeSet<u8> = sorted.iter().map(|d| d.class_id).collect();
    let annotations = sorted
        .iter()
        .enumerate()
        .map(|(i, d)| {
            let (image_id, video_id) = image_ids[&(d.sensor_index, d.frame_index)];
            Annotation {
                id: i as u64 + 1,
                image_id,
                video_id,
                category_id: d.class_id,
                track_id: d.track_id,
                bbox: d.bbox,
                area: d.area,
                iscrowd: 0,
                segmentation: Segmentation {
                    size: [d.mask.height, d.mask.width],
                    counts: d.mask.to_compressed(),
                },
            }
        })
        .collect();
    Document {
        info: Info {
            description: "synthetic scenario annotations".into(),
        },
        videos,
        images,
        categories: class_set
            .into_iter()
            .map(|c| Category {
                id: c,
                name: classes::name(c).to_string(),
            })
            .collect(),
        annotations,
    }
}

impl Document {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("document serializes");
        s.push('\n');
        s
    }
}
