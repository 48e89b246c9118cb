//! Weights, forward/backward passes and inference.

use std::ops::Range;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::kernels::{self, Activations};
use super::spec::{ArchitectureSpec, LayerKind, Shape};
use crate::dataset::{GenderLabel, ImageTensor};
use crate::error::{Error, Result};
use crate::util::rng_for;

/// Parameters of one layer.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerParams {
    None,
    /// `weight` is `filters × (channels·k·k)`.
    Conv { weight: Vec<f32>, bias: Vec<f32> },
    /// `weight` is `units × inputs`.
    Dense { weight: Vec<f32>, bias: Vec<f32> },
    BatchNorm {
        gamma: Vec<f32>,
        beta: Vec<f32>,
        running_mean: Vec<f32>,
        running_var: Vec<f32>,
    },
}

impl LayerParams {
    /// Trainable tensors in a fixed order.
    pub fn trainable(&self) -> Vec<&[f32]> {
        match self {
            LayerParams::None => vec![],
            LayerParams::Conv { weight, bias } | LayerParams::Dense { weight, bias } => vec![weight, bias],
            LayerParams::BatchNorm { gamma, beta, .. } => vec![gamma, beta],
        }
    }

    pub fn trainable_mut(&mut self) -> Vec<&mut Vec<f32>> {
        match self {
            LayerParams::None => vec![],
            LayerParams::Conv { weight, bias } | LayerParams::Dense { weight, bias } => vec![weight, bias],
            LayerParams::BatchNorm { gamma, beta, .. } => vec![gamma, beta],
        }
    }

    /// Every tensor, trainable or not, with a stable name.
    pub fn tensors(&self) -> Vec<(&'static str, &[f32])> {
        match self {
            LayerParams::None => vec![],
            LayerParams::Conv { weight, bias } | LayerParams::Dense { weight, bias } => {
                vec![("weight", weight), ("bias", bias)]
            }
            LayerParams::BatchNorm {
                gamma,
                beta,
                running_mean,
                running_var,
            } => vec![
                ("gamma", gamma),
                ("beta", beta),
                ("running_mean", running_mean),
                ("running_var", running_var),
            ],
        }
    }
}

/// Per-layer parameters, parallel to `ArchitectureSpec::layers`.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights {
    pub layers: Vec<LayerParams>,
}

impl Weights {
    /// He-uniform conv/dense weights, zero biases, identity batchnorm.
    /// Layer `i` draws from an RNG stream derived from `(seed, i)`.
    pub fn init(spec: &ArchitectureSpec, seed: u64) -> Result<Self> {
        let shapes = spec.shapes()?;
        let layers = spec
            .layers
            .iter()
            .enumerate()
            .map(|(i, l)| init_layer(l.kind, l.filters, l.kernel, l.units, shapes[i], &mut rng_for(seed, i as u64, 0x5eed)))
            .collect();
        Ok(Weights { layers })
    }

    pub fn check_against(&self, spec: &ArchitectureSpec) -> Result<()> {
        let fresh = Weights::init_zeros(spec)?;
        if fresh.layers.len() != self.layers.len() {
            return Err(Error::Schema(format!(
                "weights have {} layers, architecture has {}",
                self.layers.len(),
                fresh.layers.len()
            )));
        }
        for (i, (a, b)) in self.layers.iter().zip(&fresh.layers).enumerate() {
            let sa: Vec<usize> = a.tensors().iter().map(|(_, t)| t.len()).collect();
            let sb: Vec<usize> = b.tensors().iter().map(|(_, t)| t.len()).collect();
            if sa != sb {
                return Err(Error::Schema(format!(
                    "layer {i}: weight sizes {sa:?} do not match architecture {sb:?}"
                )));
            }
        }
        Ok(())
    }

    pub(crate) fn init_zeros(spec: &ArchitectureSpec) -> Result<Self> {
        let shapes = spec.shapes()?;
        let layers = spec
            .layers
            .iter()
            .enumerate()
            .map(|(i, l)| {
                let s = shapes[i];
                match l.kind {
                    LayerKind::Conv => {
                        let (f, k) = (l.filters.unwrap_or(0), l.kernel.unwrap_or(0));
                        LayerParams::Conv {
                            weight: vec![0.0; f * s.c * k * k],
                            bias: vec![0.0; f],
                        }
                    }
                    LayerKind::Dense => {
                        let u = l.units.unwrap_or(0);
                        LayerParams::Dense {
                            weight: vec![0.0; u * s.c],
                            bias: vec![0.0; u],
                        }
                    }
                    LayerKind::Batchnorm => LayerParams::BatchNorm {
                        gamma: vec![0.0; s.c],
                        beta: vec![0.0; s.c],
                        running_mean: vec![0.0; s.c],
                        running_var: vec![0.0; s.c],
                    },
                    _ => LayerParams::None,
                }
            })
            .collect();
        Ok(Weights { layers })
    }
}

fn init_layer(
    kind: LayerKind,
    filters: Option<usize>,
    kernel: Option<usize>,
    units: Option<usize>,
    input: Shape,
    rng: &mut ChaCha8Rng,
) -> LayerParams {
    let mut he = |n: usize, fan_in: usize| -> Vec<f32> {
        let limit = (6.0 / fan_in as f64).sqrt();
        (0..n).map(|_| rng.gen_range(-limit..limit) as f32).collect()
    };
    match kind {
        LayerKind::Conv => {
            let (f, k) = (filters.unwrap_or(0), kernel.unwrap_or(0));
            let fan_in = input.c * k * k;
            LayerParams::Conv {
                weight: he(f * fan_in, fan_in),
                bias: vec![0.0; f],
            }
        }
        LayerKind::Dense => {
            let u = units.unwrap_or(0);
            LayerParams::Dense {
                weight: he(u * input.c, input.c),
                bias: vec![0.0; u],
            }
        }
        LayerKind::Batchnorm => LayerParams::BatchNorm {
            gamma: vec![1.0; input.c],
            beta: vec![0.0; input.c],
            running_mean: vec![0.0; input.c],
            running_var: vec![1.0; input.c],
        },
        _ => LayerParams::None,
    }
}

/// What a training-mode forward pass keeps for the backward pass.
pub(crate) enum Cache {
    None,
    Input(Activations),
    Relu(Vec<bool>),
    Pool { argmax: Vec<u32>, input: Shape },
    BnTrain { x_hat: Vec<f32>, inv_std: Vec<f32> },
    BnInfer,
    Dropout(Vec<f32>),
    Flatten(Shape),
}

/// Gradients of trainable tensors, parallel to the layers.
pub type Grads = Vec<Vec<Vec<f32>>>;

/// Architecture plus weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub spec: ArchitectureSpec,
    pub weights: Weights,
}

impl Network {
    pub fn new(spec: ArchitectureSpec, weights: Weights) -> Result<Self> {
        spec.validate()?;
        weights.check_against(&spec)?;
        Ok(Network { spec, weights })
    }

    pub fn init(spec: ArchitectureSpec, seed: u64) -> Result<Self> {
        let weights = Weights::init(&spec, seed)?;
        Ok(Network { spec, weights })
    }

    pub fn n_layers(&self) -> usize {
        self.spec.layers.len()
    }

    /// Number of leading layers that are frozen.
    pub fn frozen_prefix(&self) -> usize {
        self.spec.layers.iter().take_while(|l| l.frozen).count()
    }

    /// Inference-mode forward over `range` of layers.
    pub fn forward_infer(&self, mut x: Activations, range: Range<usize>) -> Activations {
        for i in range {
            x = self.layer_infer(i, x);
        }
        x
    }

    fn layer_infer(&self, i: usize, x: Activations) -> Activations {
        let l = &self.spec.layers[i];
        match (&l.kind, &self.weights.layers[i]) {
            (LayerKind::Conv, LayerParams::Conv { weight, bias }) => {
                kernels::conv_forward(&x, weight, bias, l.filters.unwrap_or(0), l.kernel.unwrap_or(0))
            }
            (LayerKind::Relu, _) => kernels::relu_forward(x).0,
            (LayerKind::Maxpool, _) => kernels::maxpool_forward(&x, l.pool.unwrap_or(1), l.stride.unwrap_or(1)).0,
            (
                LayerKind::Batchnorm,
                LayerParams::BatchNorm {
                    gamma,
                    beta,
                    running_mean,
                    running_var,
                },
            ) => kernels::batchnorm_forward_infer(x, gamma, beta, running_mean, running_var),
            (LayerKind::Dropout, _) => x,
            (LayerKind::Flatten, _) => kernels::flatten_forward(&x),
            (LayerKind::Dense, LayerParams::Dense { weight, bias }) => {
                kernels::dense_forward(&x, weight, bias, l.units.unwrap_or(0))
            }
            (LayerKind::Softmax, _) => kernels::softmax_columns(&x),
            (kind, _) => unreachable!("layer {i} ({kind:?}) has mismatched parameters"),
        }
    }

    /// Training-mode forward over `range`; frozen layers run in inference mode.
    /// The softmax layer is skipped, so the output is logits.
    pub(crate) fn forward_train(
        &mut self,
        mut x: Activations,
        range: Range<usize>,
        rng: &mut ChaCha8Rng,
    ) -> (Activations, Vec<Cache>) {
        let mut tape = Vec::with_capacity(range.len());
        for i in range {
            let l = self.spec.layers[i].clone();
            if l.kind == LayerKind::Softmax {
                tape.push(Cache::None);
                continue;
            }
            let train = !l.frozen;
            let (y, cache) = match (l.kind, &mut self.weights.layers[i]) {
                (LayerKind::Conv, LayerParams::Conv { weight, bias }) => {
                    let y = kernels::conv_forward(&x, weight, bias, l.filters.unwrap_or(0), l.kernel.unwrap_or(0));
                    (y, Cache::Input(x))
                }
                (LayerKind::Relu, _) => {
                    let (y, mask) = kernels::relu_forward(x);
                    (y, Cache::Relu(mask))
                }
                (LayerKind::Maxpool, _) => {
                    let input = x.shape();
                    let (y, argmax) = kernels::maxpool_forward(&x, l.pool.unwrap_or(1), l.stride.unwrap_or(1));
                    (y, Cache::Pool { argmax, input })
                }
                (
                    LayerKind::Batchnorm,
                    LayerParams::BatchNorm {
                        gamma,
                        beta,
                        running_mean,
                        running_var,
                    },
                ) => {
                    if train {
                        let (y, x_hat, inv_std) =
                            kernels::batchnorm_forward_train(&x, gamma, beta, running_mean, running_var);
                        (y, Cache::BnTrain { x_hat, inv_std })
                    } else {
                        let y = kernels::batchnorm_forward_infer(x, gamma, beta, running_mean, running_var);
                        (y, Cache::BnInfer)
                    }
                }
                (LayerKind::Dropout, _) => {
                    if train {
                        let rate = l.rate.unwrap_or(0.0);
                        let keep = 1.0 - rate;
                        let mask: Vec<f32> = (0..x.data.len())
                            .map(|_| if rng.gen::<f32>() < keep { 1.0 / keep } else { 0.0 })
                            .collect();
                        let mut y = x;
                        y.data.iter_mut().zip(&mask).for_each(|(v, m)| *v *= m);
                        (y, Cache::Dropout(mask))
                    } else {
                        (x, Cache::None)
                    }
                }
                (LayerKind::Flatten, _) => {
                    let s = x.shape();
                    (kernels::flatten_forward(&x), Cache::Flatten(s))
                }
                (LayerKind::Dense, LayerParams::Dense { weight, bias }) => {
                    let y = kernels::dense_forward(&x, weight, bias, l.units.unwrap_or(0));
                    (y, Cache::Input(x))
                }
                (kind, _) => unreachable!("layer {i} ({kind:?}) has mismatched parameters"),
            };
            tape.push(cache);
            x = y;
        }
        (x, tape)
    }

    /// Index of the lowest layer that receives updates, if any.
    pub fn first_trainable(&self) -> Option<usize> {
        self.spec
            .layers
            .iter()
            .position(|l| !l.frozen && l.has_params())
    }

    /// Back-propagates `grad` (w.r.t. the logits entering softmax) through
    /// the layers recorded on `tape`, which started at layer `start`.
    pub(crate) fn backward(&self, tape: Vec<Cache>, start: usize, mut grad: Activations) -> Grads {
        let n = self.n_layers();
        let mut grads: Grads = self
            .weights
            .layers
            .iter()
            .map(|p| p.trainable().iter().map(|t| vec![0.0; t.len()]).collect())
            .collect();
        let Some(stop) = self.first_trainable() else {
            return grads;
        };
        let mut tape = tape;
        for i in (start.max(stop)..n).rev() {
            let l = &self.spec.layers[i];
            let cache = std::mem::replace(&mut tape[i - start], Cache::None);
            if l.kind == LayerKind::Softmax {
                continue;
            }
            let need_dx = i > stop;
            let trainable = !l.frozen;
            let next = match (cache, &self.weights.layers[i]) {
                (Cache::Input(x), LayerParams::Conv { weight, .. }) => {
                    let (dw, rest) = grads[i].split_at_mut(1);
                    let param_grads = trainable.then(|| (dw[0].as_mut_slice(), rest[0].as_mut_slice()));
                    kernels::conv_backward(
                        &x,
                        &grad,
                        weight,
                        l.filters.unwrap_or(0),
                        l.kernel.unwrap_or(0),
                        param_grads,
                        need_dx,
                    )
                }
                (Cache::Input(x), LayerParams::Dense { weight, .. }) => {
                    if trainable {
                        let (dw, rest) = grads[i].split_at_mut(1);
                        kernels::dense_backward(&x, &grad, weight, &mut dw[0], &mut rest[0], need_dx)
                    } else {
                        let mut scratch_w = vec![0.0; weight.len()];
                        let mut scratch_b = vec![0.0; grad.c];
                        kernels::dense_backward(&x, &grad, weight, &mut scratch_w, &mut scratch_b, need_dx)
                    }
                }
                (Cache::Relu(mask), _) => Some(kernels::relu_backward(grad, &mask)),
                (Cache::Pool { argmax, input }, _) => Some(kernels::maxpool_backward(&grad, &argmax, input)),
                (Cache::BnTrain { x_hat, inv_std }, LayerParams::BatchNorm { gamma, .. }) => {
                    let (dg, rest) = grads[i].split_at_mut(1);
                    kernels::batchnorm_backward_train(&grad, &x_hat, &inv_std, gamma, &mut dg[0], &mut rest[0], need_dx)
                }
                (Cache::BnInfer, LayerParams::BatchNorm { gamma, running_var, .. }) => {
                    Some(kernels::batchnorm_backward_infer(grad, gamma, running_var))
                }
                (Cache::Dropout(mask), _) => {
                    let mut g = grad;
                    g.data.iter_mut().zip(&mask).for_each(|(v, m)| *v *= m);
                    Some(g)
                }
                (Cache::Flatten(shape), _) => Some(kernels::flatten_backward(&grad, shape)),
                (Cache::None, _) => Some(grad),
                (_, _) => unreachable!("layer {i}: cache does not match parameters"),
            };
            match next {
                Some(g) => grad = g,
                None => break,
            }
        }
        grads
    }

    /// Class probabilities, one row per image.
    pub fn predict_proba(&self, images: &[ImageTensor]) -> Result<Vec<Vec<f32>>> {
        let side = self.spec.input_side;
        for (i, img) in images.iter().enumerate() {
            if img.side != side || img.data.len() != side * side * 3 {
                return Err(Error::Shape {
                    expected: format!("{side}x{side}x3"),
                    actual: format!("image {i}: {}x{}x3 ({} values)", img.side, img.side, img.data.len()),
                });
            }
        }
        let mut rows = Vec::with_capacity(images.len());
        for chunk in images.chunks(INFERENCE_BATCH) {
            let x = images_to_batch(chunk);
            let p = self.forward_infer(x, 0..self.n_layers());
            rows.extend(columns_to_rows(&p));
        }
        Ok(rows)
    }
}

pub const INFERENCE_BATCH: usize = 32;

/// Interleaved RGB images → channel-major batch.
pub fn images_to_batch(images: &[ImageTensor]) -> Activations {
    let side = images.first().map_or(0, |i| i.side);
    let hw = side * side;
    let n = images.len();
    let mut x = Activations::zeros(3, n, side, side);
    for (b, img) in images.iter().enumerate() {
        for p in 0..hw {
            for c in 0..3 {
                x.data[(c * n + b) * hw + p] = img.data[p * 3 + c];
            }
        }
    }
    x
}

/// Image in channel-major order (the per-sample layout used by feature caches).
pub(crate) fn image_chw(img: &ImageTensor) -> Vec<f32> {
    let hw = img.side * img.side;
    let mut out = vec![0.0; 3 * hw];
    for p in 0..hw {
        for c in 0..3 {
            out[c * hw + p] = img.data[p * 3 + c];
        }
    }
    out
}

pub(crate) fn columns_to_rows(p: &Activations) -> Vec<Vec<f32>> {
    (0..p.n).map(|b| (0..p.c).map(|k| p.data[k * p.n + b]).collect()).collect()
}

/// A network whose output columns are gender classes.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub network: Network,
    pub class_order: Vec<GenderLabel>,
}

impl TrainedModel {
    pub fn new(network: Network, class_order: Vec<GenderLabel>) -> Result<Self> {
        if class_order.len() != network.spec.n_classes {
            return Err(Error::Schema(format!(
                "class order has {} labels but the network outputs {}",
                class_order.len(),
                network.spec.n_classes
            )));
        }
        Ok(TrainedModel { network, class_order })
    }

    /// Fresh weights for `spec` with the canonical class order.
    pub fn init(spec: ArchitectureSpec, seed: u64) -> Result<Self> {
        let order = GenderLabel::class_order(spec.n_classes)?;
        TrainedModel::new(Network::init(spec, seed)?, order)
    }

    pub fn spec(&self) -> &ArchitectureSpec {
        &self.network.spec
    }

    pub fn predict_proba(&self, images: &[ImageTensor]) -> Result<Vec<Vec<f32>>> {
        self.network.predict_proba(images)
    }

    /// Argmax label per image.
    pub fn predict(&self, images: &[ImageTensor]) -> Result<Vec<GenderLabel>> {
        Ok(self
            .predict_proba(images)?
            .iter()
            .map(|row| self.class_order[argmax(row)])
            .collect())
    }
}

/// Index of the largest value; the first wins ties.
pub fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}
