//! Transfer-learning derivatives of a trained baseline or a VGG16 backbone.

use std::ops::Range;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::network::{Network, TrainedModel, Weights};
use super::spec::{ArchitectureSpec, LayerKind, LayerSpec, BASELINE_DENSE_UNITS, BASELINE_FILTERS};
use crate::dataset::GenderLabel;
use crate::error::{Error, Result};

/// New conv layers appended by [`make_fine_tuned`].
pub const FINE_TUNE_FILTERS: [usize; 4] = [64, 64, 128, 128];
/// Conv blocks frozen by [`make_fine_tuned`].
pub const FINE_TUNE_FROZEN_BLOCKS: usize = 5;

/// Which end of the conv stack "the first five blocks" counts from.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FreezeOrientation {
    #[default]
    InputSide,
    OutputSide,
}

/// Layer ranges of each conv block: a conv and everything up to the next conv
/// or the flatten.
fn conv_blocks(spec: &ArchitectureSpec) -> Result<(Vec<Range<usize>>, usize)> {
    let flatten = spec
        .layers
        .iter()
        .position(|l| l.kind == LayerKind::Flatten)
        .ok_or_else(|| Error::Architecture("base has no flatten layer".into()))?;
    let starts: Vec<usize> = (0..flatten).filter(|&i| spec.layers[i].kind == LayerKind::Conv).collect();
    if starts.first() != Some(&0) {
        return Err(Error::Architecture("base must start with a conv layer".into()));
    }
    let blocks = starts
        .iter()
        .enumerate()
        .map(|(b, &s)| s..starts.get(b + 1).copied().unwrap_or(flatten))
        .collect();
    Ok((blocks, flatten))
}

/// Checks for the baseline layout: six conv blocks with the baseline filter
/// counts, then flatten, dense(512), relu, dense(512), relu, dense, softmax.
fn check_baseline(base: &TrainedModel) -> Result<(Vec<Range<usize>>, usize)> {
    let spec = base.spec();
    let (blocks, flatten) = conv_blocks(spec)?;
    if spec.conv_filters() != BASELINE_FILTERS {
        return Err(Error::Architecture(format!(
            "base conv filters {:?} are not the baseline's {:?}",
            spec.conv_filters(),
            BASELINE_FILTERS
        )));
    }
    let head: Vec<(LayerKind, Option<usize>)> = spec.layers[flatten + 1..].iter().map(|l| (l.kind, l.units)).collect();
    let expected = [
        (LayerKind::Dense, Some(BASELINE_DENSE_UNITS)),
        (LayerKind::Relu, None),
        (LayerKind::Dense, Some(BASELINE_DENSE_UNITS)),
        (LayerKind::Relu, None),
        (LayerKind::Dense, Some(spec.n_classes)),
        (LayerKind::Softmax, None),
    ];
    if head != expected {
        return Err(Error::Architecture(
            "base lacks the baseline head (dense(512), relu, dense(512), relu, dense(n), softmax)".into(),
        ));
    }
    Ok((blocks, flatten))
}

/// Builds a model from retained base layers plus new ones. Retained layers
/// keep the base weights; new layers are freshly initialised from `seed`.
fn assemble(
    base: &Network,
    retained: Vec<LayerSpec>,
    appended: Vec<LayerSpec>,
    n_classes: usize,
    seed: u64,
) -> Result<Network> {
    let keep = retained.len();
    let mut layers = retained;
    layers.extend(appended);
    let spec = ArchitectureSpec::new(base.spec.input_side, layers, n_classes)?;
    let mut weights = Weights::init(&spec, seed)?;
    weights.layers[..keep].clone_from_slice(&base.weights.layers[..keep]);
    Network::new(spec, weights)
}

fn head(n_classes: usize) -> [LayerSpec; 2] {
    [LayerSpec::dense(n_classes), LayerSpec::softmax()]
}

fn with_classes(network: Network, n_classes: usize) -> Result<TrainedModel> {
    TrainedModel::new(network, GenderLabel::class_order(n_classes)?)
}

/// Freezes all six conv blocks of a baseline, drops both dense(512) layers and
/// the old head, and attaches a single trainable dense(n_classes) + softmax.
pub fn make_feature_extractor(base: &TrainedModel, n_classes: usize, seed: u64) -> Result<TrainedModel> {
    let (_, flatten) = check_baseline(base)?;
    let retained = base.spec().layers[..=flatten].iter().cloned().map(|l| l.frozen(true)).collect();
    let net = assemble(&base.network, retained, head(n_classes).to_vec(), n_classes, seed)?;
    with_classes(net, n_classes)
}

/// Freezes five of the baseline's six conv blocks, drops the dense head and
/// appends conv(64) relu conv(64) relu maxpool batchnorm, conv(128) relu
/// conv(128) relu maxpool batchnorm, flatten and dense(n_classes) + softmax.
pub fn make_fine_tuned(
    base: &TrainedModel,
    n_classes: usize,
    orientation: FreezeOrientation,
    seed: u64,
) -> Result<TrainedModel> {
    let (blocks, flatten) = check_baseline(base)?;
    let frozen_blocks = match orientation {
        FreezeOrientation::InputSide => 0..FINE_TUNE_FROZEN_BLOCKS,
        FreezeOrientation::OutputSide => blocks.len() - FINE_TUNE_FROZEN_BLOCKS..blocks.len(),
    };
    let frozen = blocks[frozen_blocks.start].start..blocks[frozen_blocks.end - 1].end;
    let retained = base.spec().layers[..flatten]
        .iter()
        .enumerate()
        .map(|(i, l)| l.clone().frozen(frozen.contains(&i)))
        .collect();
    let mut appended = Vec::new();
    for pair in FINE_TUNE_FILTERS.chunks(2) {
        for &f in pair {
            appended.push(LayerSpec::conv(f, 3));
            appended.push(LayerSpec::relu());
        }
        appended.push(LayerSpec::maxpool(2, 2));
        appended.push(LayerSpec::batchnorm());
    }
    appended.push(LayerSpec::flatten());
    appended.extend(head(n_classes));
    let net = assemble(&base.network, retained, appended, n_classes, seed)?;
    with_classes(net, n_classes)
}

/// Where backbone weights come from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackboneSource {
    /// A network bundle directory (`architecture.json` + `weights.bin`).
    Pretrained(PathBuf),
    /// VGG16 topology with seeded random weights, for tests.
    RandomInit { seed: u64 },
}

/// Loads or initialises a VGG16-topology backbone with a 1000-way head.
pub fn load_backbone(source: &BackboneSource, input_side: usize) -> Result<Network> {
    let net = match source {
        BackboneSource::Pretrained(dir) => {
            if !dir.join("weights.bin").is_file() || !dir.join("architecture.json").is_file() {
                return Err(Error::Config(format!(
                    "pretrained backbone requested but {} has no architecture.json/weights.bin",
                    dir.display()
                )));
            }
            super::bundle::load_network(dir)?
        }
        BackboneSource::RandomInit { seed } => Network::init(super::spec::build_vgg16(input_side, 1000)?, *seed)?,
    };
    if net.spec.conv_filters().len() != 13 {
        return Err(Error::Architecture(format!(
            "backbone has {} conv layers; VGG16 has 13",
            net.spec.conv_filters().len()
        )));
    }
    Ok(net)
}

/// Freezes every backbone layer, replaces the final dense + softmax with a
/// trainable dense(n_classes) + softmax.
pub fn make_backbone_extractor(backbone: &Network, n_classes: usize, seed: u64) -> Result<TrainedModel> {
    let n = backbone.n_layers();
    let retained = backbone.spec.layers[..n - 2].iter().cloned().map(|l| l.frozen(true)).collect();
    let net = assemble(backbone, retained, head(n_classes).to_vec(), n_classes, seed)?;
    with_classes(net, n_classes)
}
