//! Moving a dataset toward target group proportions, either by synthesizing
//! perturbed copies of images or by duplicating manifest rows.

mod augment;
mod oversample;
mod plan;

pub use augment::{apply_augmentation, FillMode, Transform, TransformParams};
pub use oversample::{oversample, ClassKey, OversamplePlan};
pub use plan::{plan_augmentation, AugmentationPlan, PROPORTION_TOLERANCE};
