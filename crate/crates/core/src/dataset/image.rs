//! Image decoding and resizing.
//!
//! Resizing is plain bilinear interpolation with half-pixel centres and no
//! antialiasing, so the output is a deterministic function of the decoded pixels.

use std::path::Path;

use image::RgbImage;
use serde::{Deserialize, Serialize};

use super::manifest::ImageRecord;
use crate::error::{Error, Result};

/// Square RGB image, row-major, channel-interleaved, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageTensor {
    pub side: usize,
    pub data: Vec<f32>,
}

impl ImageTensor {
    pub fn new(side: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != side * side * 3 {
            return Err(Error::Shape {
                expected: format!("{side}x{side}x3 = {} values", side * side * 3),
                actual: format!("{} values", data.len()),
            });
        }
        Ok(ImageTensor { side, data })
    }

    pub fn filled(side: usize, rgb: [f32; 3]) -> Self {
        let mut data = Vec::with_capacity(side * side * 3);
        for _ in 0..side * side {
            data.extend_from_slice(&rgb);
        }
        ImageTensor { side, data }
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.side, self.side, 3]
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.side + x) * 3 + c]
    }

    pub fn to_rgb8(&self) -> RgbImage {
        let bytes = self
            .data
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        RgbImage::from_raw(self.side as u32, self.side as u32, bytes)
            .expect("buffer length matches dimensions")
    }
}

pub fn decode_rgb(path: &Path) -> Result<RgbImage> {
    let img = image::open(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    Ok(img.to_rgb8())
}

/// Loads the record's image as a `side`×`side`×3 tensor.
pub fn load_image(record: &ImageRecord, side: usize) -> Result<ImageTensor> {
    load_image_path(&record.image_path, side)
}

pub fn load_image_path(path: &Path, side: usize) -> Result<ImageTensor> {
    if side == 0 {
        return Err(Error::validation("image side must be positive"));
    }
    let rgb = decode_rgb(path)?;
    Ok(resize_bilinear(&rgb, side))
}

/// Bilinear resize to a square; identity when the source is already `side`×`side`.
pub fn resize_bilinear(src: &RgbImage, side: usize) -> ImageTensor {
    let (w, h) = (src.width() as usize, src.height() as usize);
    let raw = src.as_raw();
    let px = |y: usize, x: usize, c: usize| raw[(y * w + x) * 3 + c] as f32 / 255.0;

    let axis = |out: usize, input: usize| -> Vec<(usize, usize, f32)> {
        let scale = input as f32 / side as f32;
        (0..out)
            .map(|o| {
                let s = ((o as f32 + 0.5) * scale - 0.5).clamp(0.0, (input - 1) as f32);
                let lo = s.floor() as usize;
                let hi = (lo + 1).min(input - 1);
                (lo, hi, s - lo as f32)
            })
            .collect()
    };
    let xs = axis(side, w);
    let ys = axis(side, h);

    let mut data = Vec::with_capacity(side * side * 3);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            for c in 0..3 {
                let top = px(y0, x0, c) * (1.0 - fx) + px(y0, x1, c) * fx;
                let bottom = px(y1, x0, c) * (1.0 - fx) + px(y1, x1, c) * fx;
                data.push(top * (1.0 - fy) + bottom * fy);
            }
        }
    }
    ImageTensor { side, data }
}
