//! Mini-batch training with cross-entropy loss.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::kernels::{softmax_columns, Activations};
use super::network::{argmax, columns_to_rows, image_chw, Grads, Network, TrainedModel, INFERENCE_BATCH};
use crate::dataset::{load_image, DatasetManifest, GenderLabel, ImageTensor};
use crate::error::{Error, Result};
use crate::util::rng_for;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    /// SGD with 0.9 momentum.
    SgdMomentum,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    /// Stop after this many epochs without a lower validation loss and
    /// restore the best weights seen.
    pub early_stop_patience: Option<usize>,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            epochs: 50,
            batch_size: 32,
            learning_rate: 1e-4,
            optimizer: OptimizerKind::Adam,
            seed: 0,
            early_stop_patience: Some(5),
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::validation("epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::validation("batch_size must be at least 1"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::validation(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

/// Per-epoch learning curves.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingHistory {
    pub train_loss: Vec<f64>,
    pub train_accuracy: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub val_accuracy: Vec<f64>,
}

pub const HISTORY_HEADER: &str = "epoch,train_loss,train_acc,val_loss,val_acc";

impl TrainingHistory {
    pub fn epochs(&self) -> usize {
        self.train_loss.len()
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{HISTORY_HEADER}\n");
        for e in 0..self.epochs() {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                e + 1,
                self.train_loss[e],
                self.train_accuracy[e],
                self.val_loss[e],
                self.val_accuracy[e]
            );
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim() == HISTORY_HEADER => {}
            _ => return Err(Error::validation(format!("history header must be {HISTORY_HEADER:?}"))),
        }
        let mut h = TrainingHistory::default();
        for (i, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let bad = || Error::validation(format!("history line {}: cannot parse {line:?}", i + 1));
            let cols: Vec<&str> = line.split(',').map(str::trim).collect();
            if cols.len() != 5 {
                return Err(bad());
            }
            let v: Vec<f64> = cols[1..]
                .iter()
                .map(|c| c.parse::<f64>().map_err(|_| bad()))
                .collect::<Result<_>>()?;
            h.train_loss.push(v[0]);
            h.train_accuracy.push(v[1]);
            h.val_loss.push(v[2]);
            h.val_accuracy.push(v[3]);
        }
        Ok(h)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv(&text)
    }
}

/// Images paired with labels.
#[derive(Debug, Clone, Default)]
pub struct LabeledImages {
    pub images: Vec<ImageTensor>,
    pub labels: Vec<GenderLabel>,
}

impl LabeledImages {
    pub fn load(manifest: &DatasetManifest, side: usize) -> Result<Self> {
        let images = manifest
            .records
            .iter()
            .map(|r| load_image(r, side))
            .collect::<Result<Vec<_>>>()?;
        Ok(LabeledImages {
            images,
            labels: manifest.records.iter().map(|r| r.gender).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

/// Trains on the manifests' images at the model's input side.
pub fn train(
    model: TrainedModel,
    train: &DatasetManifest,
    val: &DatasetManifest,
    cfg: &TrainingConfig,
) -> Result<(TrainedModel, TrainingHistory)> {
    let side = model.spec().input_side;
    let train_set = LabeledImages::load(train, side)?;
    let val_set = LabeledImages::load(val, side)?;
    train_images(model, &train_set, &val_set, cfg)
}

struct FeatureSet {
    samples: Vec<Vec<f32>>,
    targets: Vec<usize>,
}

fn class_indices(labels: &[GenderLabel], order: &[GenderLabel]) -> Result<Vec<usize>> {
    labels
        .iter()
        .map(|l| {
            order.iter().position(|c| c == l).ok_or_else(|| {
                Error::Training(format!(
                    "label {l} is outside the model's classes {order:?}"
                ))
            })
        })
        .collect()
}

/// Runs the frozen prefix once in inference mode; its outputs are constant
/// throughout training.
fn prefix_features(net: &Network, images: &[ImageTensor], prefix: usize) -> Vec<Vec<f32>> {
    if prefix == 0 {
        return images.iter().map(image_chw).collect();
    }
    let mut out = Vec::with_capacity(images.len());
    for chunk in images.chunks(INFERENCE_BATCH) {
        let x = super::network::images_to_batch(chunk);
        let y = net.forward_infer(x, 0..prefix);
        out.extend((0..y.n).map(|b| y.sample(b)));
    }
    out
}

/// Trains on in-memory images. Layers flagged frozen are never updated and
/// run in inference mode; the leading frozen run is evaluated once up front.
pub fn train_images(
    mut model: TrainedModel,
    train: &LabeledImages,
    val: &LabeledImages,
    cfg: &TrainingConfig,
) -> Result<(TrainedModel, TrainingHistory)> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::Training("training and validation sets must be nonempty".into()));
    }
    let side = model.spec().input_side;
    for img in train.images.iter().chain(&val.images) {
        if img.side != side {
            return Err(Error::Shape {
                expected: format!("{side}x{side}x3"),
                actual: format!("{}x{}x3", img.side, img.side),
            });
        }
    }
    let train_targets = class_indices(&train.labels, &model.class_order)?;
    let val_targets = class_indices(&val.labels, &model.class_order)?;

    let net = &mut model.network;
    let n_layers = net.n_layers();
    let prefix = net.frozen_prefix().min(n_layers - 2);
    let shape = net.spec.shapes()?[prefix];
    let train_fs = FeatureSet {
        samples: prefix_features(net, &train.images, prefix),
        targets: train_targets,
    };
    let val_fs = FeatureSet {
        samples: prefix_features(net, &val.images, prefix),
        targets: val_targets,
    };

    let mut opt = OptimizerState::new(cfg, net);
    let mut history = TrainingHistory::default();
    let mut best: Option<(f64, super::network::Weights)> = None;
    let mut since_best = 0usize;

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..train_fs.samples.len()).collect();
        order.shuffle(&mut rng_for(cfg.seed, epoch as u64, 1));
        let mut dropout_rng = rng_for(cfg.seed, epoch as u64, 2);

        let (mut loss_sum, mut correct) = (0.0f64, 0usize);
        for (bi, batch) in order.chunks(cfg.batch_size).enumerate() {
            let x = Activations::from_samples(shape, batch.iter().map(|&i| train_fs.samples[i].as_slice()));
            let (logits, tape) = net.forward_train(x, prefix..n_layers, &mut dropout_rng);
            let probs = softmax_columns(&logits);
            let targets: Vec<usize> = batch.iter().map(|&i| train_fs.targets[i]).collect();
            let (loss, hits) = batch_loss(&probs, &targets);
            if !loss.is_finite() {
                let max_logit = logits.data.iter().fold(0.0f32, |m, v| m.max(v.abs()));
                return Err(Error::NonFiniteLoss {
                    epoch: epoch + 1,
                    batch: bi + 1,
                    diagnostics: format!(
                        "max |logit| = {max_logit}, learning_rate = {}, batch size = {}",
                        cfg.learning_rate,
                        batch.len()
                    ),
                });
            }
            loss_sum += loss * batch.len() as f64;
            correct += hits;

            let grad = loss_gradient(&probs, &targets);
            let grads = net.backward(tape, prefix, grad);
            opt.step(net, &grads);
        }
        let n = train_fs.samples.len() as f64;
        history.train_loss.push(loss_sum / n);
        history.train_accuracy.push(correct as f64 / n);

        let (val_loss, val_acc) = evaluate_features(net, &val_fs, shape, prefix);
        history.val_loss.push(val_loss);
        history.val_accuracy.push(val_acc);
        log::debug!(
            "epoch {}: loss {:.4} acc {:.4} val_loss {:.4} val_acc {:.4}",
            epoch + 1,
            loss_sum / n,
            correct as f64 / n,
            val_loss,
            val_acc
        );

        if let Some(patience) = cfg.early_stop_patience {
            if best.as_ref().is_none_or(|(b, _)| val_loss < *b) {
                best = Some((val_loss, net.weights.clone()));
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= patience {
                    break;
                }
            }
        }
    }
    if let Some((_, w)) = best {
        net.weights = w;
    }
    Ok((model, history))
}

/// Mean cross-entropy and number of argmax hits for a `classes × batch` matrix.
fn batch_loss(probs: &Activations, targets: &[usize]) -> (f64, usize) {
    let rows = columns_to_rows(probs);
    let mut loss = 0.0;
    let mut hits = 0;
    for (row, &t) in rows.iter().zip(targets) {
        loss -= (row[t] as f64).clamp(1e-7, 1.0).ln();
        if argmax(row) == t {
            hits += 1;
        }
    }
    (loss / targets.len() as f64, hits)
}

/// d(mean cross-entropy)/d(logits) = (p − onehot) / batch.
fn loss_gradient(probs: &Activations, targets: &[usize]) -> Activations {
    let n = probs.n;
    let mut g = probs.clone();
    for (b, &t) in targets.iter().enumerate() {
        g.data[t * n + b] -= 1.0;
    }
    let scale = 1.0 / n as f32;
    g.data.iter_mut().for_each(|v| *v *= scale);
    g
}

fn evaluate_features(net: &Network, set: &FeatureSet, shape: super::spec::Shape, prefix: usize) -> (f64, f64) {
    let mut loss = 0.0;
    let mut hits = 0;
    for (chunk_idx, chunk) in set.samples.chunks(INFERENCE_BATCH).enumerate() {
        let x = Activations::from_samples(shape, chunk.iter().map(Vec::as_slice));
        let p = net.forward_infer(x, prefix..net.n_layers());
        let start = chunk_idx * INFERENCE_BATCH;
        let (l, h) = batch_loss(&p, &set.targets[start..start + chunk.len()]);
        loss += l * chunk.len() as f64;
        hits += h;
    }
    let n = set.samples.len() as f64;
    (loss / n, hits as f64 / n)
}

/// Mean cross-entropy of `images` against class indices and its gradient for
/// every layer, computed in training mode with a fixed dropout stream.
pub fn loss_and_gradients(net: &Network, images: &[ImageTensor], targets: &[usize]) -> Result<(f64, Grads)> {
    let n_classes = net.spec.n_classes;
    if images.len() != targets.len() || targets.iter().any(|&t| t >= n_classes) {
        return Err(Error::validation("targets must match images and index the network's classes"));
    }
    let mut scratch = net.clone();
    let mut rng = rng_for(0, 0, 0);
    let (logits, tape) = scratch.forward_train(super::network::images_to_batch(images), 0..net.n_layers(), &mut rng);
    let probs = softmax_columns(&logits);
    let (loss, _) = batch_loss(&probs, targets);
    Ok((loss, scratch.backward(tape, 0, loss_gradient(&probs, targets))))
}

struct OptimizerState {
    kind: OptimizerKind,
    lr: f64,
    step: i32,
    first: Grads,
    second: Grads,
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPSILON: f64 = 1e-7;
const SGD_MOMENTUM: f32 = 0.9;

impl OptimizerState {
    fn new(cfg: &TrainingConfig, net: &Network) -> Self {
        let zeros = || -> Grads {
            net.weights
                .layers
                .iter()
                .map(|p| p.trainable().iter().map(|t| vec![0.0; t.len()]).collect())
                .collect()
        };
        OptimizerState {
            kind: cfg.optimizer,
            lr: cfg.learning_rate,
            step: 0,
            first: zeros(),
            second: if cfg.optimizer == OptimizerKind::Adam { zeros() } else { vec![] },
        }
    }

    fn step(&mut self, net: &mut Network, grads: &Grads) {
        self.step += 1;
        let (b1, b2) = (ADAM_BETA1, ADAM_BETA2);
        let adam_lr = (self.lr * (1.0 - b2.powi(self.step)).sqrt() / (1.0 - b1.powi(self.step))) as f32;
        for (i, (spec, params)) in net.spec.layers.iter().zip(net.weights.layers.iter_mut()).enumerate() {
            if spec.frozen {
                continue;
            }
            for (j, w) in params.trainable_mut().into_iter().enumerate() {
                let g = &grads[i][j];
                let m = &mut self.first[i][j];
                match self.kind {
                    OptimizerKind::Adam => {
                        let v = &mut self.second[i][j];
                        for k in 0..w.len() {
                            m[k] = b1 as f32 * m[k] + (1.0 - b1 as f32) * g[k];
                            v[k] = b2 as f32 * v[k] + (1.0 - b2 as f32) * g[k] * g[k];
                            w[k] -= adam_lr * m[k] / (v[k].sqrt() + ADAM_EPSILON as f32);
                        }
                    }
                    OptimizerKind::SgdMomentum => {
                        let lr = self.lr as f32;
                        for k in 0..w.len() {
                            m[k] = SGD_MOMENTUM * m[k] - lr * g[k];
                            w[k] += m[k];
                        }
                    }
                }
            }
        }
    }
}
