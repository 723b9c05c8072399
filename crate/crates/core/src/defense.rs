//! Heuristic patch defenses and their metrics: background ablation and
//! three physical-constraint masks (rare colors, high frequency, high
//! hue/saturation).

use image::RgbImage;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_TOLERANCE: u8 = 8;
pub const MIN_BACKGROUND_FRAMES: usize = 3;
/// Quantization levels per channel for color statistics.
pub const COLOR_LEVELS: usize = 16;
pub const DEFAULT_RARE_FRACTION: f64 = 0.005;
pub const DEFAULT_HF_THRESHOLD: f64 = 24.0 / 255.0;
pub const DEFAULT_S_MIN: f64 = 0.7;
pub const DEFAULT_V_MIN: f64 = 0.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DefenseError {
    #[error("need at least {MIN_BACKGROUND_FRAMES} frames for a background model, got {0}")]
    TooFewFrames(usize),
    #[error("frame is {got:?}, expected {expected:?}")]
    SizeMismatch { got: (u32, u32), expected: (u32, u32) },
    #[error("color statistics are empty")]
    EmptyStats,
    #[error("ground-truth patch mask is empty")]
    EmptyGroundTruth,
}

fn check_dims(img: &RgbImage, expected: (u32, u32)) -> Result<(), DefenseError> {
    if img.dimensions() != expected {
        return Err(DefenseError::SizeMismatch {
            got: img.dimensions(),
            expected,
        });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackgroundModel {
    /// Per-pixel, per-channel median.
    pub median: RgbImage,
    pub window: usize,
    /// Max-channel distance (0..255) at or below which a pixel counts as
    /// background.
    pub tolerance: u8,
}

/// Per-pixel channel-wise median. With an even window the lower of the two
/// middle values is taken.
pub fn build_background(frames: &[RgbImage]) -> Result<BackgroundModel, DefenseError> {
    if frames.len() < MIN_BACKGROUND_FRAMES {
        return Err(DefenseError::TooFewFrames(frames.len()));
    }
    let dims = frames[0].dimensions();
    for f in frames {
        check_dims(f, dims)?;
    }
    let mut median = RgbImage::new(dims.0, dims.1);
    let row_len = dims.0 as usize * 3;
    let n = frames.len();
    let fill_row = |y: usize, row: &mut [u8]| {
        let mut vals = vec![0u8; n];
        for (i, out) in row.iter_mut().enumerate() {
            let idx = y * row_len + i;
            for (v, f) in vals.iter_mut().zip(frames) {
                *v = f.as_raw()[idx];
            }
            vals.sort_unstable();
            *out = vals[(n - 1) / 2];
        }
    };
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        median
            .par_chunks_mut(row_len)
            .enumerate()
            .for_each(|(y, row)| fill_row(y, row));
    }
    #[cfg(not(feature = "parallel"))]
    for (y, row) in median.chunks_mut(row_len).enumerate() {
        fill_row(y, row);
    }
    Ok(BackgroundModel {
        median,
        window: n,
        tolerance: DEFAULT_TOLERANCE,
    })
}

/// Zeroes every pixel within the model's tolerance of the background.
/// Returns the ablated frame and the row-major ablation mask.
pub fn ablate(frame: &RgbImage, model: &BackgroundModel) -> Result<(RgbImage, Vec<bool>), DefenseError> {
    ablate_with_tolerance(frame, model, model.tolerance)
}

pub fn ablate_with_tolerance(
    frame: &RgbImage,
    model: &BackgroundModel,
    tolerance: u8,
) -> Result<(RgbImage, Vec<bool>), DefenseError> {
    check_dims(frame, model.median.dimensions())?;
    let mut out = frame.clone();
    let mask: Vec<bool> = out
        .pixels_mut()
        .zip(model.median.pixels())
        .map(|(p, b)| {
            let d = (0..3).map(|c| p.0[c].abs_diff(b.0[c])).max().unwrap_or(0);
            let hit = d <= tolerance;
            if hit {
                p.0 = [0, 0, 0];
            }
            hit
        })
        .collect();
    Ok((out, mask))
}

/// Fraction of `region` pixels that are set in `mask`; 0 for an empty region.
pub fn fraction_within(mask: &[bool], region: &[bool]) -> f64 {
    let total = region.iter().filter(|&&r| r).count();
    if total == 0 {
        return 0.0;
    }
    let hit = mask.iter().zip(region).filter(|(&m, &r)| m && r).count();
    hit as f64 / total as f64
}

/// Quantized joint RGB histogram gathered from benign frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneStats {
    pub counts: Vec<u64>,
    pub total: u64,
}

pub fn color_bin(p: [u8; 3]) -> usize {
    let q = |c: u8| usize::from(c) * COLOR_LEVELS / 256;
    (q(p[0]) * COLOR_LEVELS + q(p[1])) * COLOR_LEVELS + q(p[2])
}

impl Default for SceneStats {
    fn default() -> Self {
        Self {
            counts: vec![0; COLOR_LEVELS.pow(3)],
            total: 0,
        }
    }
}

impl SceneStats {
    pub fn from_frames<'a>(frames: impl IntoIterator<Item = &'a RgbImage>) -> Self {
        let mut s = Self::default();
        for f in frames {
            s.add(f);
        }
        s
    }

    pub fn add(&mut self, frame: &RgbImage) {
        for p in frame.pixels() {
            self.counts[color_bin(p.0)] += 1;
        }
        self.total += u64::from(frame.width()) * u64::from(frame.height());
    }

    /// Bins that together hold at most `fraction` of the mass, taken from
    /// the least frequent upward. Bins with equal counts are taken or left
    /// together. Empty bins are always rare.
    pub fn rare_bins(&self, fraction: f64) -> Result<Vec<bool>, DefenseError> {
        if self.total == 0 {
            return Err(DefenseError::EmptyStats);
        }
        let mut order: Vec<usize> = (0..self.counts.len()).collect();
        order.sort_by_key(|&i| (self.counts[i], i));
        let budget = fraction * self.total as f64;
        let mut rare = vec![false; self.counts.len()];
        let mut cum = 0u64;
        let mut i = 0;
        while i < order.len() {
            let c = self.counts[order[i]];
            let mut j = i;
            while j < order.len() && self.counts[order[j]] == c {
                j += 1;
            }
            cum += c * (j - i) as u64;
            if c > 0 && cum as f64 > budget {
                break;
            }
            for &k in &order[i..j] {
                rare[k] = true;
            }
            i = j;
        }
        Ok(rare)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskReport {
    pub width: u32,
    pub height: u32,
    #[serde(skip)]
    pub mask: Vec<bool>,
    /// Fraction of the frame flagged.
    pub coverage: f64,
    /// Fraction of the ground-truth region flagged, once known.
    pub gt_overlap: Option<f64>,
}

impl MaskReport {
    pub fn new(width: u32, height: u32, mask: Vec<bool>) -> Self {
        let n = mask.len().max(1);
        let coverage = mask.iter().filter(|&&b| b).count() as f64 / n as f64;
        Self {
            width,
            height,
            mask,
            coverage,
            gt_overlap: None,
        }
    }

    pub fn with_ground_truth(mut self, gt: &[bool]) -> Self {
        self.gt_overlap = Some(fraction_within(&self.mask, gt));
        self
    }
}

/// Pixels whose color bin is rare in `stats`.
pub fn anomalous_color_mask(frame: &RgbImage, stats: &SceneStats) -> Result<MaskReport, DefenseError> {
    anomalous_color_mask_with(frame, stats, DEFAULT_RARE_FRACTION)
}

pub fn anomalous_color_mask_with(
    frame: &RgbImage,
    stats: &SceneStats,
    fraction: f64,
) -> Result<MaskReport, DefenseError> {
    let rare = stats.rare_bins(fraction)?;
    let mask = frame.pixels().map(|p| rare[color_bin(p.0)]).collect();
    Ok(MaskReport::new(frame.width(), frame.height(), mask))
}

fn luminance(frame: &RgbImage) -> Vec<f64> {
    frame
        .pixels()
        .map(|p| {
            (0.299 * f64::from(p.0[0]) + 0.587 * f64::from(p.0[1]) + 0.114 * f64::from(p.0[2])) / 255.0
        })
        .collect()
}

/// 3x3 dilation of a row-major mask.
pub fn dilate(mask: &[bool], width: u32, height: u32) -> Vec<bool> {
    let (w, h) = (width as i64, height as i64);
    let mut out = vec![false; mask.len()];
    for y in 0..h {
        for x in 0..w {
            if !mask[(y * w + x) as usize] {
                continue;
            }
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (nx, ny) = (x + dx, y + dy);
                    if (0..w).contains(&nx) && (0..h).contains(&ny) {
                        out[(ny * w + nx) as usize] = true;
                    }
                }
            }
        }
    }
    out
}

/// Pixels where the 4-neighbour Laplacian `4c - (n + s + e + w)` of
/// luminance exceeds `threshold` (luminance in 0..1), dilated by one pixel.
/// Only the positive lobe seeds the mask, so an ideal step edge yields a
/// single seed column. Borders replicate the edge pixel.
pub fn high_frequency_mask(frame: &RgbImage, threshold: f64) -> MaskReport {
    let (w, h) = frame.dimensions();
    let lum = luminance(frame);
    let at = |x: i64, y: i64| {
        let cx = x.clamp(0, i64::from(w) - 1);
        let cy = y.clamp(0, i64::from(h) - 1);
        lum[(cy * i64::from(w) + cx) as usize]
    };
    let mut seeds = vec![false; lum.len()];
    for y in 0..i64::from(h) {
        for x in 0..i64::from(w) {
            let l = 4.0 * at(x, y) - at(x - 1, y) - at(x + 1, y) - at(x, y - 1) - at(x, y + 1);
            seeds[(y * i64::from(w) + x) as usize] = l > threshold;
        }
    }
    MaskReport::new(w, h, dilate(&seeds, w, h))
}

/// Standard HSV saturation and value of an 8-bit color, both in 0..1.
pub fn saturation_value(p: [u8; 3]) -> (f64, f64) {
    let max = p.iter().copied().max().unwrap_or(0);
    let min = p.iter().copied().min().unwrap_or(0);
    let v = f64::from(max) / 255.0;
    let s = if max == 0 {
        0.0
    } else {
        f64::from(max - min) / f64::from(max)
    };
    (s, v)
}

pub fn hue_saturation_mask(frame: &RgbImage, s_min: f64, v_min: f64) -> MaskReport {
    let mask = frame
        .pixels()
        .map(|p| {
            let (s, v) = saturation_value(p.0);
            s >= s_min && v >= v_min
        })
        .collect();
    MaskReport::new(frame.width(), frame.height(), mask)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalizationScore {
    pub precision: f64,
    pub recall: f64,
    pub iou: f64,
}

/// Pixel counts of a mask against ground truth. Summing counts over frames
/// gives pooled scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct OverlapCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl OverlapCounts {
    pub fn of(mask: &[bool], gt: &[bool]) -> Self {
        let mut c = Self::default();
        for (&m, &g) in mask.iter().zip(gt) {
            match (m, g) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                _ => {}
            }
        }
        c
    }

    pub fn add(&mut self, o: OverlapCounts) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
    }

    pub fn score(&self) -> Result<LocalizationScore, DefenseError> {
        let (tp, fp, fneg) = (self.tp, self.fp, self.fn_);
        if tp + fneg == 0 {
            return Err(DefenseError::EmptyGroundTruth);
        }
        let ratio = |a: u64, b: u64| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        Ok(LocalizationScore {
            precision: ratio(tp, tp + fp),
            recall: ratio(tp, tp + fneg),
            iou: ratio(tp, tp + fp + fneg),
        })
    }
}

pub fn localization_score(mask: &[bool], gt: &[bool]) -> Result<LocalizationScore, DefenseError> {
    OverlapCounts::of(mask, gt).score()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskParams {
    pub rare_fraction: f64,
    pub hf_threshold: f64,
    pub s_min: f64,
    pub v_min: f64,
}

impl Default for MaskParams {
    fn default() -> Self {
        Self {
            rare_fraction: DEFAULT_RARE_FRACTION,
            hf_threshold: DEFAULT_HF_THRESHOLD,
            s_min: DEFAULT_S_MIN,
            v_min: DEFAULT_V_MIN,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskRow {
    pub mask: String,
    pub width: u32,
    pub height: u32,
    pub coverage: f64,
    #[serde(flatten)]
    pub score: LocalizationScore,
}

pub const MASK_NAMES: [&str; 3] = ["anomalous_color", "high_frequency", "hue_saturation"];

/// Runs all three masks on one frame and scores them against `gt`.
pub fn evaluate_masks(
    frame: &RgbImage,
    gt: &[bool],
    stats: &SceneStats,
    params: &MaskParams,
) -> Result<Vec<MaskRow>, DefenseError> {
    let reports = [
        anomalous_color_mask_with(frame, stats, params.rare_fraction)?,
        high_frequency_mask(frame, params.hf_threshold),
        hue_saturation_mask(frame, params.s_min, params.v_min),
    ];
    MASK_NAMES
        .iter()
        .zip(reports)
        .map(|(name, r)| {
            Ok(MaskRow {
                mask: (*name).to_string(),
                width: r.width,
                height: r.height,
                coverage: r.coverage,
                score: localization_score(&r.mask, gt)?,
            })
        })
        .collect()
}
