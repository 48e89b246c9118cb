//! Synthetic stripe-pattern face stand-ins for smoke tests and fixtures.
//!
//! Class signal is stripe orientation: horizontal for male, vertical for
//! female, a plaid of both for non-binary. Skin tone shifts the palette
//! brightness. Colours, period and phase are random per image.

use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{save_manifest, DatasetManifest, FitzpatrickType, GenderLabel, GroupKey, ImageRecord, ImageTensor, SkinTone};
use crate::error::{Error, Result};
use crate::util::rng_for;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub side: usize,
    /// Images to generate per group.
    pub counts: Vec<(GroupKey, usize)>,
    pub images_per_identity: usize,
    /// Half-width of uniform pixel noise.
    pub noise: f32,
    pub seed: u64,
}

impl SynthConfig {
    /// `per_group` images for every gender/tone pair with a known tone.
    pub fn balanced(genders: &[GenderLabel], per_group: usize, side: usize, seed: u64) -> Self {
        let counts = genders
            .iter()
            .flat_map(|&g| {
                [SkinTone::Light, SkinTone::Brown, SkinTone::Dark]
                    .into_iter()
                    .map(move |t| (GroupKey::new(g, t), per_group))
            })
            .collect();
        SynthConfig { side, counts, images_per_identity: 4, noise: 0.08, seed }
    }
}

fn fitzpatrick_for(tone: SkinTone) -> Option<FitzpatrickType> {
    let v = match tone {
        SkinTone::Light => 2,
        SkinTone::Brown => 4,
        SkinTone::Dark => 6,
        SkinTone::Unknown => return None,
    };
    FitzpatrickType::new(v).ok()
}

fn palette(tone: SkinTone, rng: &mut ChaCha8Rng) -> ([f32; 3], [f32; 3]) {
    let base = match tone {
        SkinTone::Light => 0.55,
        SkinTone::Brown => 0.4,
        SkinTone::Dark => 0.25,
        SkinTone::Unknown => 0.4,
    };
    let mut pick = |lo: f32| -> [f32; 3] { std::array::from_fn(|_| (lo + rng.gen_range(0.0..0.45f32)).min(1.0)) };
    let bg = pick(base - 0.2);
    let mut fg = pick(base);
    // Keep the stripes visible against the background.
    let gap: f32 = fg.iter().zip(&bg).map(|(a, b)| a - b).sum::<f32>() / 3.0;
    if gap.abs() < 0.2 {
        let shift = if gap >= 0.0 { 0.2 - gap } else { -0.2 - gap };
        fg.iter_mut().for_each(|v| *v = (*v + shift).clamp(0.0, 1.0));
    }
    (fg, bg)
}

/// Draws one image whose stripe layout encodes `gender`.
pub fn synth_image(
    gender: GenderLabel,
    colours: ([f32; 3], [f32; 3]),
    side: usize,
    noise: f32,
    rng: &mut ChaCha8Rng,
) -> ImageTensor {
    let period = (side as f32 / rng.gen_range(4.0..7.0f32)).max(4.0);
    let (py, px) = (rng.gen_range(0.0..period), rng.gen_range(0.0..period));
    let on = |t: f32, phase: f32| ((t + phase) / period).fract() < 0.5;
    let (fg, bg) = colours;
    let mut data = Vec::with_capacity(side * side * 3);
    for y in 0..side {
        for x in 0..side {
            let h = on(y as f32, py);
            let v = on(x as f32, px);
            let lit = match gender {
                GenderLabel::Male => h,
                GenderLabel::Female => v,
                GenderLabel::Nonbinary => h ^ v,
            };
            let c = if lit { fg } else { bg };
            for ch in c {
                let n = if noise > 0.0 { rng.gen_range(-noise..noise) } else { 0.0 };
                data.push((ch + n).clamp(0.0, 1.0));
            }
        }
    }
    ImageTensor { side, data }
}

/// Writes PNGs and `manifest.csv` into `dir` and returns the manifest.
pub fn generate_synthetic(dir: &Path, cfg: &SynthConfig) -> Result<DatasetManifest> {
    if cfg.side < 8 {
        return Err(Error::validation("synthetic images need side >= 8"));
    }
    if cfg.images_per_identity == 0 {
        return Err(Error::validation("images_per_identity must be at least 1"));
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut records = Vec::new();
    for (gi, &(group, count)) in cfg.counts.iter().enumerate() {
        let mut rng = rng_for(cfg.seed, gi as u64, 0x5717);
        let mut colours = palette(group.tone, &mut rng);
        for i in 0..count {
            let ident = i / cfg.images_per_identity;
            if i % cfg.images_per_identity == 0 {
                colours = palette(group.tone, &mut rng);
            }
            let img = synth_image(group.gender, colours, cfg.side, cfg.noise, &mut rng);
            let name = format!("{}_{}_{i:05}.png", group.gender, group.tone.as_str());
            let path: PathBuf = dir.join(&name);
            img.to_rgb8()
                .save(&path)
                .map_err(|e| Error::Image { path: path.clone(), message: e.to_string() })?;
            let id = format!("{}-{}-{ident}", group.gender, group.tone.as_str());
            records.push(ImageRecord::new(path, id, group.gender, fitzpatrick_for(group.tone))?);
        }
    }
    let manifest = DatasetManifest::new("synthetic", records);
    save_manifest(&manifest, dir.join("manifest.csv"))?;
    Ok(manifest)
}
