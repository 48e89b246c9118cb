//! Gender classification with a non-binary class, bias mitigation and
//! disparate-impact auditing.
//!
//! The crate is organised by pipeline stage: [`dataset`] ingests labeled
//! manifests, [`rebalance`] moves group proportions toward targets, [`nets`]
//! trains the baseline CNN and its transfer-learning derivatives, [`stacking`]
//! fits meta-learners over base-model outputs and [`fairness`] audits every
//! model with per-class accuracies and the selection-rate 80% rule.

pub mod dataset;
pub mod error;
pub mod fairness;
pub mod nets;
pub mod plot;
pub mod rebalance;
mod render;
pub mod stacking;
mod util;

pub use error::{Error, Result};
pub use render::read_png_text;
pub use util::round_half_up;
