//! Geometric augmentation of under-represented groups.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use image::RgbImage;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::plan::AugmentationPlan;
use crate::dataset::{decode_rgb, DatasetManifest, GroupKey, ImageRecord, Origin};
use crate::error::{Error, Result};
use crate::util::rng_for;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum FillMode {
    /// Repeat the edge pixel.
    #[default]
    Nearest,
    /// Mirror about the edge (`abcd|dcba`).
    Reflect,
    /// Tile the image.
    Wrap,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TransformParams {
    /// Maximum absolute rotation, degrees.
    pub rotation_range: f64,
    /// Maximum horizontal shift as a fraction of the width.
    pub width_shift: f64,
    /// Maximum vertical shift as a fraction of the height.
    pub height_shift: f64,
    /// Zoom factors are drawn from `[1 - zoom_range, 1 + zoom_range]`.
    pub zoom_range: f64,
    pub horizontal_flip: bool,
    pub fill_mode: FillMode,
}

impl Default for TransformParams {
    fn default() -> Self {
        TransformParams {
            rotation_range: 20.0,
            width_shift: 0.1,
            height_shift: 0.1,
            zoom_range: 0.1,
            horizontal_flip: true,
            fill_mode: FillMode::Nearest,
        }
    }
}

impl TransformParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.rotation_range.is_finite() && self.rotation_range >= 0.0) {
            return Err(Error::validation(format!(
                "rotation_range must be nonnegative, got {}",
                self.rotation_range
            )));
        }
        for (name, v) in [
            ("width_shift", self.width_shift),
            ("height_shift", self.height_shift),
            ("zoom_range", self.zoom_range),
        ] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::validation(format!("{name} must be in [0, 1), got {v}")));
            }
        }
        Ok(())
    }
}

/// One sampled perturbation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transform {
    pub angle_deg: f64,
    pub shift_x: f64,
    pub shift_y: f64,
    pub zoom: f64,
    pub flip: bool,
}

impl Transform {
    pub fn sample(params: &TransformParams, rng: &mut impl Rng) -> Self {
        let mut sym = |r: f64| if r > 0.0 { rng.gen_range(-r..=r) } else { 0.0 };
        let angle_deg = sym(params.rotation_range);
        let shift_x = sym(params.width_shift);
        let shift_y = sym(params.height_shift);
        let zoom = 1.0 + sym(params.zoom_range);
        let flip = params.horizontal_flip && rng.gen_bool(0.5);
        Transform {
            angle_deg,
            shift_x,
            shift_y,
            zoom,
            flip,
        }
    }

    /// Warps `src` by inverse mapping with bilinear sampling; dimensions are kept.
    pub fn apply(&self, src: &RgbImage, fill: FillMode) -> RgbImage {
        let (w, h) = (src.width() as usize, src.height() as usize);
        let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
        let (sin, cos) = self.angle_deg.to_radians().sin_cos();
        let (tx, ty) = (self.shift_x * w as f64, self.shift_y * h as f64);
        let raw = src.as_raw();

        let mut out = RgbImage::new(w as u32, h as u32);
        for (x, y, px) in out.enumerate_pixels_mut() {
            let mut u = x as f64 - cx - tx;
            let v = y as f64 - cy - ty;
            if self.flip {
                u = -u;
            }
            let sx = (cos * u + sin * v) * self.zoom + cx;
            let sy = (-sin * u + cos * v) * self.zoom + cy;

            let (x0, y0) = (sx.floor(), sy.floor());
            let (fx, fy) = (sx - x0, sy - y0);
            let xi = [fill_index(x0 as i64, w, fill), fill_index(x0 as i64 + 1, w, fill)];
            let yi = [fill_index(y0 as i64, h, fill), fill_index(y0 as i64 + 1, h, fill)];
            for c in 0..3 {
                let at = |yy: usize, xx: usize| raw[(yy * w + xx) * 3 + c] as f64;
                let top = at(yi[0], xi[0]) * (1.0 - fx) + at(yi[0], xi[1]) * fx;
                let bottom = at(yi[1], xi[0]) * (1.0 - fx) + at(yi[1], xi[1]) * fx;
                px[c] = (top * (1.0 - fy) + bottom * fy).round().clamp(0.0, 255.0) as u8;
            }
        }
        out
    }
}

fn fill_index(i: i64, n: usize, mode: FillMode) -> usize {
    let n = n as i64;
    let idx = match mode {
        FillMode::Nearest => i.clamp(0, n - 1),
        FillMode::Wrap => i.rem_euclid(n),
        FillMode::Reflect => {
            let period = 2 * n;
            let m = i.rem_euclid(period);
            if m < n {
                m
            } else {
                period - 1 - m
            }
        }
    };
    idx as usize
}

/// Synthesizes the plan's copies as PNG files under `out_dir` and returns the
/// input records followed by one `Augmented` record per new image.
///
/// Copy `k` of the record at index `i` uses randomness derived from
/// `(seed, i, k)`. Every source image is decoded before anything is written; if
/// a write fails, files already written by this call are removed.
pub fn apply_augmentation(
    manifest: &DatasetManifest,
    plan: &AugmentationPlan,
    params: &TransformParams,
    seed: u64,
    out_dir: &Path,
) -> Result<DatasetManifest> {
    params.validate()?;
    let counts = manifest.group_counts();
    if counts != plan.source_counts {
        return Err(Error::Planning(
            "plan was computed against a different group distribution".into(),
        ));
    }

    // (record index, copies) in manifest order.
    let mut jobs: Vec<(usize, usize)> = Vec::new();
    let mut members: BTreeMap<GroupKey, Vec<usize>> = BTreeMap::new();
    for (i, r) in manifest.records.iter().enumerate() {
        members.entry(r.group()).or_default().push(i);
    }
    for (group, &total) in &plan.copies_per_group {
        if total == 0 {
            continue;
        }
        let mut idx = members.get(group).cloned().unwrap_or_default();
        if idx.is_empty() {
            return Err(Error::Planning(format!("no records in group {group}")));
        }
        idx.sort_by(|&a, &b| manifest.records[a].key().cmp(&manifest.records[b].key()));
        for (i, k) in idx.into_iter().zip(AugmentationPlan::per_image_copies(total, members[group].len())) {
            if k > 0 {
                jobs.push((i, k));
            }
        }
    }
    jobs.sort_unstable();

    let mut sources = BTreeMap::new();
    let mut unreadable = Vec::new();
    for &(i, _) in &jobs {
        let path = &manifest.records[i].image_path;
        match decode_rgb(path) {
            Ok(img) => {
                sources.insert(i, img);
            }
            Err(_) => unreadable.push(path.display().to_string()),
        }
    }
    if !unreadable.is_empty() {
        return Err(Error::Image {
            path: PathBuf::from(&unreadable[0]),
            message: format!("unreadable source images: {}", unreadable.join(", ")),
        });
    }

    if !jobs.is_empty() {
        fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    }
    let mut written: Vec<PathBuf> = Vec::new();
    let mut records = manifest.records.clone();
    let result = (|| -> Result<()> {
        for &(i, k) in &jobs {
            let src_rec = &manifest.records[i];
            let stem = src_rec
                .image_path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "image".into());
            for copy in 0..k {
                let mut rng = rng_for(seed, i as u64, copy as u64);
                let t = Transform::sample(params, &mut rng);
                let img = t.apply(&sources[&i], params.fill_mode);
                let path = out_dir.join(format!("{stem}__r{i}_aug{copy}.png"));
                img.save(&path).map_err(|e| Error::Image {
                    path: path.clone(),
                    message: e.to_string(),
                })?;
                written.push(path.clone());
                records.push(ImageRecord {
                    image_path: path,
                    origin: Origin::Augmented,
                    copy: 0,
                    ..src_rec.clone()
                });
            }
        }
        Ok(())
    })();
    if let Err(e) = result {
        for p in &written {
            let _ = fs::remove_file(p);
        }
        return Err(e);
    }

    Ok(DatasetManifest {
        name: format!("{}-augmented", manifest.name),
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_transform_preserves_pixels() {
        let img = RgbImage::from_fn(9, 7, |x, y| image::Rgb([x as u8 * 20, y as u8 * 30, 5]));
        let t = Transform {
            angle_deg: 0.0,
            shift_x: 0.0,
            shift_y: 0.0,
            zoom: 1.0,
            flip: false,
        };
        assert_eq!(t.apply(&img, FillMode::Nearest), img);
    }

    #[test]
    fn flip_mirrors_columns() {
        let img = RgbImage::from_fn(5, 3, |x, _| image::Rgb([x as u8 * 50, 0, 0]));
        let t = Transform {
            angle_deg: 0.0,
            shift_x: 0.0,
            shift_y: 0.0,
            zoom: 1.0,
            flip: true,
        };
        let out = t.apply(&img, FillMode::Nearest);
        for x in 0..5 {
            assert_eq!(out.get_pixel(x, 1)[0], img.get_pixel(4 - x, 1)[0]);
        }
    }

    #[test]
    fn fill_modes_index_correctly() {
        assert_eq!(fill_index(-1, 4, FillMode::Nearest), 0);
        assert_eq!(fill_index(5, 4, FillMode::Nearest), 3);
        assert_eq!(fill_index(-1, 4, FillMode::Wrap), 3);
        assert_eq!(fill_index(4, 4, FillMode::Wrap), 0);
        assert_eq!(fill_index(-1, 4, FillMode::Reflect), 0);
        assert_eq!(fill_index(4, 4, FillMode::Reflect), 3);
        assert_eq!(fill_index(5, 4, FillMode::Reflect), 2);
    }

    #[test]
    fn params_validation() {
        TransformParams::default().validate().unwrap();
        let bad = TransformParams {
            width_shift: 1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = TransformParams {
            rotation_range: -1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
