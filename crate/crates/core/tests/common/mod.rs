#![allow(dead_code)]

use gender_audit::dataset::{synth_image, GenderLabel};
use gender_audit::nets::{ArchitectureSpec, LabeledImages, LayerKind, LayerParams, LayerSpec, Network};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn layer_line(l: &LayerSpec) -> String {
    match l.kind {
        LayerKind::Conv => format!("conv {} {}", l.filters.unwrap(), l.kernel.unwrap()),
        LayerKind::Relu => "relu".into(),
        LayerKind::Maxpool => format!("maxpool {} {}", l.pool.unwrap(), l.stride.unwrap()),
        LayerKind::Batchnorm => "batchnorm".into(),
        LayerKind::Dropout => format!("dropout {}", l.rate.unwrap()),
        LayerKind::Flatten => "flatten".into(),
        LayerKind::Dense => format!("dense {}", l.units.unwrap()),
        LayerKind::Softmax => "softmax".into(),
    }
}

pub fn golden_baseline_227_2() -> Vec<String> {
    include_str!("../fixtures/baseline_227_2.layers").lines().map(str::to_owned).collect()
}

/// `per_class` stripe images for each of `classes`, random palettes.
pub fn stripes(classes: &[GenderLabel], per_class: usize, side: usize, seed: u64) -> LabeledImages {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut set = LabeledImages::default();
    for i in 0..per_class * classes.len() {
        let g = classes[i % classes.len()];
        let bg: [f32; 3] = std::array::from_fn(|_| rng.gen_range(0.0..0.4));
        let fg: [f32; 3] = std::array::from_fn(|c| bg[c] + rng.gen_range(0.3..0.6));
        set.images.push(synth_image(g, (fg, bg), side, 0.05, &mut rng));
        set.labels.push(g);
    }
    set
}

/// Parameters as f64, parallel to the engine's trainable tensors.
pub fn params_f64(net: &Network) -> Vec<Vec<Vec<f64>>> {
    net.weights
        .layers
        .iter()
        .map(|p| p.trainable().iter().map(|t| t.iter().map(|&v| v as f64).collect()).collect())
        .collect()
}

/// Independent double-precision forward pass + mean cross-entropy.
/// `x` is one `[c][h][w]` flat vector per sample. Batchnorm uses batch
/// statistics, dropout is not supported.
pub fn oracle_loss(spec: &ArchitectureSpec, params: &[Vec<Vec<f64>>], x: &[Vec<f64>], targets: &[usize]) -> f64 {
    let n = x.len();
    let (mut c, mut h, mut w) = (spec.channels, spec.input_side, spec.input_side);
    let mut acts: Vec<Vec<f64>> = x.to_vec();
    for (li, l) in spec.layers.iter().enumerate() {
        let p = &params[li];
        match l.kind {
            LayerKind::Conv => {
                let (f, k) = (l.filters.unwrap(), l.kernel.unwrap());
                let pad = (k / 2) as isize;
                acts = acts
                    .iter()
                    .map(|a| {
                        let mut out = vec![0.0; f * h * w];
                        for o in 0..f {
                            for yy in 0..h {
                                for xx in 0..w {
                                    let mut s = p[1][o];
                                    for ci in 0..c {
                                        for ky in 0..k {
                                            for kx in 0..k {
                                                let sy = yy as isize + ky as isize - pad;
                                                let sx = xx as isize + kx as isize - pad;
                                                if sy >= 0 && sx >= 0 && (sy as usize) < h && (sx as usize) < w {
                                                    s += p[0][((o * c + ci) * k + ky) * k + kx]
                                                        * a[(ci * h + sy as usize) * w + sx as usize];
                                                }
                                            }
                                        }
                                    }
                                    out[(o * h + yy) * w + xx] = s;
                                }
                            }
                        }
                        out
                    })
                    .collect();
                c = f;
            }
            LayerKind::Relu => acts.iter_mut().flatten().for_each(|v| *v = v.max(0.0)),
            LayerKind::Maxpool => {
                let (pool, stride) = (l.pool.unwrap(), l.stride.unwrap());
                let geo = |side: usize| {
                    let out = side.div_ceil(stride);
                    let pad = ((out - 1) * stride + pool).saturating_sub(side) / 2;
                    (out, pad)
                };
                let ((oh, py), (ow, px)) = (geo(h), geo(w));
                acts = acts
                    .iter()
                    .map(|a| {
                        let mut out = vec![f64::NEG_INFINITY; c * oh * ow];
                        for ch in 0..c {
                            for oy in 0..oh {
                                for ox in 0..ow {
                                    for yy in (oy * stride).saturating_sub(py)..(oy * stride + pool - py).min(h) {
                                        for xx in (ox * stride).saturating_sub(px)..(ox * stride + pool - px).min(w) {
                                            let v = a[(ch * h + yy) * w + xx];
                                            let o = &mut out[(ch * oh + oy) * ow + ox];
                                            *o = o.max(v);
                                        }
                                    }
                                }
                            }
                        }
                        out
                    })
                    .collect();
                h = oh;
                w = ow;
            }
            LayerKind::Batchnorm => {
                let m = (n * h * w) as f64;
                for ch in 0..c {
                    let vals = |a: &Vec<f64>| a[ch * h * w..(ch + 1) * h * w].to_vec();
                    let all: Vec<f64> = acts.iter().flat_map(vals).collect();
                    let mean = all.iter().sum::<f64>() / m;
                    let var = all.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / m;
                    let inv = 1.0 / (var + 1e-3).sqrt();
                    for a in acts.iter_mut() {
                        for v in &mut a[ch * h * w..(ch + 1) * h * w] {
                            *v = p[0][ch] * (*v - mean) * inv + p[1][ch];
                        }
                    }
                }
            }
            LayerKind::Dropout => panic!("oracle does not model dropout"),
            LayerKind::Flatten => {
                c *= h * w;
                h = 1;
                w = 1;
            }
            LayerKind::Dense => {
                let u = l.units.unwrap();
                acts = acts
                    .iter()
                    .map(|a| (0..u).map(|j| p[1][j] + (0..c).map(|i| p[0][j * c + i] * a[i]).sum::<f64>()).collect())
                    .collect();
                c = u;
            }
            LayerKind::Softmax => {
                for a in acts.iter_mut() {
                    let max = a.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let z: f64 = a.iter().map(|v| (v - max).exp()).sum();
                    a.iter_mut().for_each(|v| *v = (*v - max).exp() / z);
                }
            }
        }
    }
    -acts.iter().zip(targets).map(|(p, &t)| p[t].ln()).sum::<f64>() / n as f64
}

/// Samples as f64 `[c][h][w]` vectors from interleaved images.
pub fn chw_f64(set: &LabeledImages) -> Vec<Vec<f64>> {
    set.images
        .iter()
        .map(|img| {
            let hw = img.side * img.side;
            let mut out = vec![0.0; 3 * hw];
            for p in 0..hw {
                for c in 0..3 {
                    out[c * hw + p] = img.data[p * 3 + c] as f64;
                }
            }
            out
        })
        .collect()
}

pub fn is_frozen_params_equal(a: &LayerParams, b: &LayerParams) -> bool {
    a.tensors().iter().zip(b.tensors()).all(|((_, x), (_, y))| {
        x.iter().zip(y.iter()).all(|(p, q)| p.to_bits() == q.to_bits())
    })
}

/// Three base models on an N-row, 3-class task: `strong` is right with
/// probability `strong_acc` and confident, the other two emit noise.
pub fn meta_scenario(n: usize, strong_acc: f64, seed: u64) -> (Vec<gender_audit::stacking::ModelOutput>, Vec<GenderLabel>) {
    use gender_audit::stacking::ModelOutput;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let classes = GenderLabel::ALL.to_vec();
    let truths: Vec<GenderLabel> = (0..n).map(|_| classes[rng.gen_range(0..3)]).collect();
    let row_for = |pred: usize, rng: &mut ChaCha8Rng| {
        let top = rng.gen_range(0.5..0.95);
        let split = rng.gen_range(0.0..1.0);
        let mut r = vec![0.0; 3];
        r[pred] = top;
        r[(pred + 1) % 3] = (1.0 - top) * split;
        r[(pred + 2) % 3] = 1.0 - top - (1.0 - top) * split;
        r
    };
    let strong: Vec<Vec<f64>> = truths
        .iter()
        .map(|t| {
            let ti = classes.iter().position(|c| c == t).unwrap();
            let pred = if rng.gen_bool(strong_acc) { ti } else { (ti + rng.gen_range(1..3)) % 3 };
            row_for(pred, &mut rng)
        })
        .collect();
    let noise = |rng: &mut ChaCha8Rng| (0..n).map(|_| { let p = rng.gen_range(0..3); row_for(p, rng) }).collect::<Vec<_>>();
    let weak1 = noise(&mut rng);
    let weak2 = noise(&mut rng);
    let out = |id: &str, p: Vec<Vec<f64>>| ModelOutput { model_id: id.into(), class_order: classes.clone(), probabilities: p };
    (vec![out("strong", strong), out("weak1", weak1), out("weak2", weak2)], truths)
}

pub fn accuracy(preds: &[GenderLabel], truths: &[GenderLabel]) -> f64 {
    preds.iter().zip(truths).filter(|(p, t)| p == t).count() as f64 / truths.len() as f64
}

/// Writes a tiny-image dataset with the given group sizes.
pub fn group_fixture(
    dir: &std::path::Path,
    counts: &[(gender_audit::dataset::GroupKey, usize)],
) -> gender_audit::dataset::DatasetManifest {
    let cfg = gender_audit::dataset::SynthConfig {
        side: 8,
        counts: counts.to_vec(),
        images_per_identity: 4,
        noise: 0.05,
        seed: 11,
    };
    gender_audit::dataset::generate_synthetic(dir, &cfg).unwrap()
}

/// One published accuracy/selection-rate row, percentages.
pub struct PublishedRow {
    pub model: &'static str,
    pub wrong: usize,
    pub overall: f64,
    pub male: f64,
    pub female: f64,
    pub nonbinary: f64,
    pub selection_rate: f64,
}

/// Size of the three-class test set behind the published rows.
pub const PUBLISHED_TEST_SIZE: usize = 1260;

pub const PUBLISHED_ROWS: [PublishedRow; 6] = [
    PublishedRow { model: "Baseline", wrong: 609, overall: 51.67, male: 87.87, female: 85.75, nonbinary: 0.0, selection_rate: 0.0 },
    PublishedRow { model: "Baseline Feature Extraction", wrong: 150, overall: 88.10, male: 89.76, female: 85.49, nonbinary: 88.82, selection_rate: 95.24 },
    PublishedRow { model: "Baseline Fine-tuned", wrong: 149, overall: 88.17, male: 84.10, female: 88.39, nonbinary: 90.98, selection_rate: 92.44 },
    PublishedRow { model: "VGG16 Feature Extraction", wrong: 185, overall: 85.32, male: 85.71, female: 83.38, nonbinary: 86.47, selection_rate: 96.43 },
    PublishedRow { model: "Logistic Regression Ensemble", wrong: 121, overall: 90.39, male: 90.02, female: 88.65, nonbinary: 91.97, selection_rate: 96.40 },
    PublishedRow { model: "Adaboost Ensemble", wrong: 123, overall: 90.24, male: 91.11, female: 89.71, nonbinary: 90.00, selection_rate: 98.46 },
];

pub fn set_params(net: &mut Network, params: &[Vec<Vec<f64>>]) {
    for (layer, p) in net.weights.layers.iter_mut().zip(params) {
        for (dst, src) in layer.trainable_mut().into_iter().zip(p) {
            dst.iter_mut().zip(src).for_each(|(d, s)| *d = *s as f32);
        }
    }
}

/// Central finite differences of the oracle loss w.r.t. every trainable value.
pub fn numeric_grads(spec: &ArchitectureSpec, params: &[Vec<Vec<f64>>], x: &[Vec<f64>], t: &[usize]) -> Vec<Vec<Vec<f64>>> {
    let h = 1e-6;
    let mut p = params.to_vec();
    let mut out: Vec<Vec<Vec<f64>>> = params.iter().map(|l| l.iter().map(|t| vec![0.0; t.len()]).collect()).collect();
    for i in 0..p.len() {
        for j in 0..p[i].len() {
            for k in 0..p[i][j].len() {
                let orig = p[i][j][k];
                p[i][j][k] = orig + h;
                let up = oracle_loss(spec, &p, x, t);
                p[i][j][k] = orig - h;
                let down = oracle_loss(spec, &p, x, t);
                p[i][j][k] = orig;
                out[i][j][k] = (up - down) / (2.0 * h);
            }
        }
    }
    out
}

pub fn max_rel_error(analytic: &[f32], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| {
            let a = a as f64;
            (a - n).abs() / a.abs().max(n.abs()).max(1e-3)
        })
        .fold(0.0, f64::max)
}
