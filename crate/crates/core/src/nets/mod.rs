//! Convolutional networks: architecture descriptions, a CPU engine, training
//! and transfer-learning builders.

mod bundle;
mod kernels;
mod network;
mod spec;
mod train;
mod transfer;

pub use bundle::{
    decode_weights, encode_weights, load_model, load_network, save_model, save_network, ARCHITECTURE_FILE,
    CLASSES_FILE, HISTORY_FILE, WEIGHTS_FILE,
};
pub use kernels::{Activations, BN_EPSILON, BN_MOMENTUM};
pub use network::{argmax, images_to_batch, Grads, LayerParams, Network, TrainedModel, Weights, INFERENCE_BATCH};
pub use spec::{
    build_baseline, build_baseline_with, build_vgg16, ArchitectureSpec, LayerKind, LayerSpec, Shape,
    ARCHITECTURE_SCHEMA_VERSION, BASELINE_DENSE_UNITS, BASELINE_FILTERS, BASELINE_KERNELS, DEFAULT_DROPOUT,
    MIN_INPUT_SIDE,
};
pub use train::{
    loss_and_gradients, train, train_images, LabeledImages, OptimizerKind, TrainingConfig, TrainingHistory,
    HISTORY_HEADER,
};
pub use transfer::{
    load_backbone, make_backbone_extractor, make_feature_extractor, make_fine_tuned, BackboneSource,
    FreezeOrientation, FINE_TUNE_FILTERS, FINE_TUNE_FROZEN_BLOCKS,
};
