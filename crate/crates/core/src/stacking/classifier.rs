//! Base models plus a fitted meta-learner, usable as one classifier.

use super::ensemble::{EnsembleKind, EnsembleModel};
use super::meta::{stack_predictions, stack_probabilities, MetaFeatures, ModelOutput};
use crate::dataset::{GenderLabel, ImageTensor};
use crate::error::{Error, Result};
use crate::fairness::Classifier;
use crate::nets::TrainedModel;

#[derive(Debug, Clone)]
pub struct StackedClassifier {
    pub bases: Vec<(String, TrainedModel)>,
    pub ensemble: EnsembleModel,
}

impl StackedClassifier {
    /// Base models must be given in the ensemble's model order and share its
    /// class order and one input size.
    pub fn new(bases: Vec<(String, TrainedModel)>, ensemble: EnsembleModel) -> Result<Self> {
        let ids: Vec<&str> = bases.iter().map(|(id, _)| id.as_str()).collect();
        if ids != ensemble.model_order {
            return Err(Error::Schema(format!(
                "base models {ids:?} do not match the ensemble's model order {:?}",
                ensemble.model_order
            )));
        }
        for (id, m) in &bases {
            if m.class_order != ensemble.class_order {
                return Err(Error::Schema(format!(
                    "base model {id} has classes {:?}, ensemble expects {:?}",
                    m.class_order, ensemble.class_order
                )));
            }
            if m.spec().input_side != bases[0].1.spec().input_side {
                return Err(Error::Schema("base models must share one input size".into()));
            }
        }
        Ok(StackedClassifier { bases, ensemble })
    }

    pub fn base_outputs(&self, images: &[ImageTensor]) -> Result<Vec<ModelOutput>> {
        self.bases
            .iter()
            .map(|(id, m)| Ok(ModelOutput::from_f32(id.clone(), m.class_order.clone(), &m.predict_proba(images)?)))
            .collect()
    }

    /// The meta-features this classifier's ensemble consumes.
    pub fn meta_features(&self, images: &[ImageTensor]) -> Result<MetaFeatures> {
        let outputs = self.base_outputs(images)?;
        Ok(match self.ensemble.kind {
            EnsembleKind::Logistic => MetaFeatures::Prob(stack_probabilities(&outputs)?),
            EnsembleKind::Adaboost => {
                let preds: Vec<_> = outputs.iter().map(ModelOutput::predictions).collect();
                MetaFeatures::Pred(stack_predictions(&preds)?)
            }
        })
    }
}

impl Classifier for StackedClassifier {
    fn class_order(&self) -> &[GenderLabel] {
        &self.ensemble.class_order
    }

    fn input_side(&self) -> usize {
        self.bases[0].1.spec().input_side
    }

    fn predict(&self, images: &[ImageTensor]) -> Result<Vec<GenderLabel>> {
        if images.is_empty() {
            return Ok(vec![]);
        }
        self.ensemble.predict(&self.meta_features(images)?)
    }
}
