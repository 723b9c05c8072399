//! COCO-compatible run-length encoding of binary masks.
//!
//! Runs are counted in column-major order and alternate background /
//! foreground, starting with background. The compressed string form
//! difference-codes every count from index 3 on against the count two
//! positions earlier, then writes each signed value as little-endian 5-bit
//! groups with a continuation bit, offset by ASCII 48.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RleError {
    #[error("malformed RLE string at byte {0}")]
    Malformed(usize),
    #[error("RLE runs sum to {got}, expected {expected}")]
    SizeMismatch { got: u64, expected: u64 },
    #[error("mask must be at least 1x1")]
    Empty,
}

/// Row-major binary mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub width: u32,
    pub height: u32,
    pub data: Vec<bool>,
}

impl Mask {
    pub fn new(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            data: vec![false; width as usize * height as usize],
        }
    }

    pub fn from_fn(width: u32, height: u32, f: impl Fn(u32, u32) -> bool) -> Self {
        let data = (0..height)
            .flat_map(|y| (0..width).map(move |x| (x, y)))
            .map(|(x, y)| f(x, y))
            .collect();
        Self {
            width,
            height,
            data,
        }
    }

    pub fn get(&self, x: u32, y: u32) -> bool {
        self.data[(y * self.width + x) as usize]
    }

    pub fn count(&self) -> u64 {
        self.data.iter().filter(|&&b| b).count() as u64
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rle {
    pub height: u32,
    pub width: u32,
    pub counts: Vec<u32>,
}

impl Rle {
    pub fn area(&self) -> u64 {
        self.counts.iter().skip(1).step_by(2).map(|&c| u64::from(c)).sum()
    }

    /// Compressed string form.
    pub fn to_compressed(&self) -> String {
        let mut s = String::new();
        for (i, &c) in self.counts.iter().enumerate() {
            let mut x = i64::from(c);
            if i > 2 {
                x -= i64::from(self.counts[i - 2]);
            }
            loop {
                let mut c = (x & 0x1f) as u8;
                x >>= 5;
                let more = if c & 0x10 != 0 { x != -1 } else { x != 0 };
                if more {
                    c |= 0x20;
                }
                s.push(char::from(c + 48));
                if !more {
                    break;
                }
            }
        }
        s
    }

    pub fn from_compressed(s: &str, height: u32, width: u32) -> Result<Self, RleError> {
        let bytes = s.as_bytes();
        let mut counts: Vec<u32> = Vec::new();
        let mut i = 0;
        while i < bytes.len() {
            let mut x: i64 = 0;
            let mut shift = 0u32;
            loop {
                let b = bytes[i];
                if !(48..48 + 64).contains(&b) || shift > 60 {
                    return Err(RleError::Malformed(i));
                }
                let c = i64::from(b - 48);
                i += 1;
                x |= (c & 0x1f) << shift;
                shift += 5;
                if c & 0x20 == 0 {
                    if c & 0x10 != 0 {
                        x |= -1i64 << shift;
                    }
                    break;
                }
                if i >= bytes.len() {
                    return Err(RleError::Malformed(i));
                }
            }
            if counts.len() > 2 {
                x += i64::from(counts[counts.len() - 2]);
            }
            let c = u32::try_from(x).map_err(|_| RleError::Malformed(i))?;
            counts.push(c);
        }
        let rle = Rle {
            height,
            width,
            counts,
        };
        rle.check()?;
        Ok(rle)
    }

    fn check(&self) -> Result<(), RleError> {
        let got: u64 = self.counts.iter().map(|&c| u64::from(c)).sum();
        let expected = u64::from(self.height) * u64::from(self.width);
        if got != expected {
            return Err(RleError::SizeMismatch { got, expected });
        }
        Ok(())
    }
}

pub fn rle_encode(mask: &Mask) -> Result<Rle, RleError> {
    if mask.width == 0 || mask.height == 0 {
        return Err(RleError::Empty);
    }
    Ok(encode_by(mask.width, mask.height, |x, y| mask.get(x, y)))
}

/// Encodes the mask given by `pred` without materializing it.
pub fn encode_by(width: u32, height: u32, pred: impl Fn(u32, u32) -> bool) -> Rle {
    let mut counts = Vec::new();
    let mut current = false;
    let mut run = 0u32;
    for x in 0..width {
        for y in 0..height {
            let v = pred(x, y);
            if v != current {
                counts.push(run);
                run = 0;
                current = v;
            }
            run += 1;
        }
    }
    counts.push(run);
    Rle {
        height,
        width,
        counts,
    }
}

pub fn rle_decode(rle: &Rle) -> Result<Mask, RleError> {
    rle.check()?;
    let (w, h) = (rle.width as usize, rle.height as usize);
    let mut mask = Mask::new(rle.width, rle.height);
    let mut idx = 0usize;
    let mut value = false;
    for &c in &rle.counts {
        for k in idx..idx + c as usize {
            if value {
                let (x, y) = (k / h, k % h);
                mask.data[y * w + x] = true;
            }
        }
        idx += c as usize;
        value = !value;
    }
    Ok(mask)
}
