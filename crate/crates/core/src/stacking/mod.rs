//! Stacked ensembles over base-model outputs.

mod adaboost;
mod classifier;
mod ensemble;
mod logistic;
mod meta;

pub use adaboost::{fit_adaboost, AdaBoostModel, Stump};
pub use classifier::StackedClassifier;
pub use ensemble::{
    ensemble_predict, fit_adaboost_ensemble, fit_logistic_ensemble, load_ensemble, save_ensemble, stratified_folds,
    AdaBoostGrid, CvCandidate, CvReport, EnsembleKind, EnsembleModel, EnsembleParams, PredEncoding,
    DEFAULT_CV_FOLDS, ENSEMBLE_FILE, ENSEMBLE_SCHEMA_VERSION, LOGISTIC_CS, PARAMS_FILE,
};
pub use logistic::{fit_logistic, LogisticModel};
pub use meta::{
    load_meta_csv, parse_meta_csv, render_meta_csv, save_meta_csv, stack_predictions, stack_probabilities,
    MetaFeatures, MetaFeaturesPred, MetaFeaturesProb, ModelOutput, ModelPredictions, ROW_SUM_TOLERANCE,
};
