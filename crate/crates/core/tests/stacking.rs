mod common;

use common::*;
use gender_audit::dataset::GenderLabel;
use gender_audit::stacking::*;
use gender_audit::Error;
use proptest::prelude::*;

fn split<T: Clone>(v: &[T], at: usize) -> (Vec<T>, Vec<T>) {
    (v[..at].to_vec(), v[at..].to_vec())
}

fn slice_outputs(outputs: &[ModelOutput], range: std::ops::Range<usize>) -> Vec<ModelOutput> {
    outputs
        .iter()
        .map(|o| ModelOutput { probabilities: o.probabilities[range.clone()].to_vec(), ..o.clone() })
        .collect()
}

fn preds_of(outputs: &[ModelOutput]) -> Vec<ModelPredictions> {
    outputs.iter().map(ModelOutput::predictions).collect()
}

#[test]
fn three_models_three_classes_shapes() {
    let (outputs, _) = meta_scenario(50, 0.9, 1);
    let p = stack_probabilities(&outputs).unwrap();
    assert_eq!((p.matrix.len(), p.matrix[0].len()), (50, 9));
    for row in &p.matrix {
        for block in row.chunks(3) {
            assert!((block.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }
    let h = stack_predictions(&preds_of(&outputs)).unwrap();
    assert_eq!((h.matrix.len(), h.matrix[0].len()), (50, 3));
}

#[test]
fn logistic_separable_toy() {
    let (mut outputs, truths) = meta_scenario(60, 1.0, 2);
    outputs.truncate(2);
    let meta = stack_probabilities(&outputs).unwrap();
    let m = fit_logistic_ensemble(&meta, &truths, 5, 0).unwrap();
    assert_eq!(m.cv_report.training_accuracy, 1.0);
    assert_eq!(m.predict(&MetaFeatures::Prob(meta)).unwrap(), truths);
    assert_eq!(m.cv_report.candidates.len(), LOGISTIC_CS.len());
}

#[test]
fn adaboost_oracle_column_generalises() {
    let (outputs, truths) = meta_scenario(200, 1.0, 3);
    let (train_t, test_t) = split(&truths, 150);
    let train = stack_predictions(&preds_of(&slice_outputs(&outputs, 0..150))).unwrap();
    let test = stack_predictions(&preds_of(&slice_outputs(&outputs, 150..200))).unwrap();
    for enc in [PredEncoding::OneHot, PredEncoding::RawIndex] {
        let m = fit_adaboost_ensemble(&train, &train_t, &AdaBoostGrid::default(), enc, 5, 0).unwrap();
        assert_eq!(accuracy(&m.predict(&MetaFeatures::Pred(test.clone())).unwrap(), &test_t), 1.0, "{enc:?}");
    }
}

#[test]
fn single_point_grid_skips_search() {
    let (outputs, truths) = meta_scenario(40, 0.9, 4);
    let meta = stack_predictions(&preds_of(&outputs)).unwrap();
    let grid = AdaBoostGrid { n_estimators: vec![10], learning_rates: vec![0.5] };
    let m = fit_adaboost_ensemble(&meta, &truths, &grid, PredEncoding::OneHot, 5, 0).unwrap();
    assert_eq!(m.cv_report.candidates.len(), 1);
    assert_eq!(m.cv_report.candidates[0].mean_accuracy, None);
    assert_eq!(m.cv_report.chosen["n_estimators"], 10.0);
    assert_eq!(m.cv_report.chosen["learning_rate"], 0.5);
}

#[test]
fn empty_and_duplicated_rows() {
    let (outputs, truths) = meta_scenario(40, 0.9, 5);
    let meta = stack_probabilities(&outputs).unwrap();
    let m = fit_logistic_ensemble(&meta, &truths, 5, 0).unwrap();
    let empty = MetaFeaturesProb { matrix: vec![], ..meta.clone() };
    assert!(m.predict(&MetaFeatures::Prob(empty)).unwrap().is_empty());
    let dup = MetaFeaturesProb { matrix: vec![meta.matrix[3].clone(), meta.matrix[3].clone()], ..meta.clone() };
    let p = m.predict(&MetaFeatures::Prob(dup)).unwrap();
    assert_eq!(p[0], p[1]);
}

#[test]
fn schema_mismatch_names_expected_order() {
    let (outputs, truths) = meta_scenario(40, 0.9, 6);
    let meta = stack_probabilities(&outputs).unwrap();
    let m = fit_logistic_ensemble(&meta, &truths, 5, 0).unwrap();
    let mut renamed = meta.clone();
    renamed.model_order[0] = "other".into();
    let err = m.predict(&MetaFeatures::Prob(renamed)).unwrap_err();
    assert!(matches!(err, Error::Schema(_)));
    assert!(err.to_string().contains("strong"), "{err}");
    let preds = stack_predictions(&preds_of(&outputs)).unwrap();
    assert!(m.predict(&MetaFeatures::Pred(preds)).is_err());
}

#[test]
fn invalid_training_inputs() {
    let (outputs, truths) = meta_scenario(40, 0.9, 7);
    let meta = stack_probabilities(&outputs).unwrap();
    assert!(fit_logistic_ensemble(&meta, &vec![GenderLabel::Male; 40], 5, 0).is_err());
    assert!(fit_logistic_ensemble(&meta, &truths, 1, 0).is_err());
    assert!(fit_logistic_ensemble(&meta, &truths, 41, 0).is_err());
    let mut bad = meta.clone();
    bad.matrix[0][0] = f64::NAN;
    assert!(fit_logistic_ensemble(&bad, &truths, 5, 0).is_err());
    let pred = stack_predictions(&preds_of(&outputs)).unwrap();
    let empty = AdaBoostGrid { n_estimators: vec![], learning_rates: vec![1.0] };
    assert!(fit_adaboost_ensemble(&pred, &truths, &empty, PredEncoding::OneHot, 5, 0).is_err());
}

#[test]
fn ensemble_bundle_round_trip() {
    let (outputs, truths) = meta_scenario(60, 0.8, 8);
    let dir = tempfile::tempdir().unwrap();
    let prob = stack_probabilities(&outputs).unwrap();
    let pred = stack_predictions(&preds_of(&outputs)).unwrap();
    let lr = fit_logistic_ensemble(&prob, &truths, 5, 0).unwrap();
    let ab = fit_adaboost_ensemble(&pred, &truths, &AdaBoostGrid::default(), PredEncoding::RawIndex, 5, 0).unwrap();
    for (m, name) in [(lr, "lr"), (ab, "ab")] {
        let d = dir.path().join(name);
        save_ensemble(&m, &d).unwrap();
        assert_eq!(load_ensemble(&d).unwrap(), m);
    }
}

#[test]
fn fits_are_deterministic_under_seed() {
    let (outputs, truths) = meta_scenario(80, 0.8, 9);
    let prob = stack_probabilities(&outputs).unwrap();
    let a = fit_logistic_ensemble(&prob, &truths, 5, 3).unwrap();
    let b = fit_logistic_ensemble(&prob, &truths, 5, 3).unwrap();
    assert_eq!(a, b);
}

#[test]
fn meta_csv_file_round_trip() {
    let (outputs, truths) = meta_scenario(10, 0.8, 10);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("meta.csv");
    let meta = MetaFeatures::Prob(stack_probabilities(&outputs).unwrap());
    save_meta_csv(&path, &meta, Some(&truths)).unwrap();
    let (back, labels) = load_meta_csv(&path).unwrap();
    assert_eq!(back, meta);
    assert_eq!(labels.unwrap(), truths);
}

fn distribution(c: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(1u32..100, c).prop_map(|w| {
        let s: u32 = w.iter().sum();
        let mut r: Vec<f64> = w.iter().map(|&v| v as f64 / s as f64).collect();
        // Put the rounding residue in the last cell so the block sums to 1.
        let head: f64 = r[..r.len() - 1].iter().sum();
        *r.last_mut().unwrap() = 1.0 - head;
        r
    })
}

fn outputs_strategy() -> impl Strategy<Value = Vec<ModelOutput>> {
    (1usize..4, 2usize..4, 0usize..6).prop_flat_map(|(k, c, n)| {
        prop::collection::vec(prop::collection::vec(distribution(c), n), k).prop_map(move |mats| {
            mats.into_iter()
                .enumerate()
                .map(|(j, m)| ModelOutput {
                    model_id: format!("m{j}"),
                    class_order: GenderLabel::ALL[..c].to_vec(),
                    probabilities: m,
                })
                .collect()
        })
    })
}

proptest! {
    #[test]
    fn stacking_probabilities_is_lossless(outputs in outputs_strategy()) {
        let meta = stack_probabilities(&outputs).unwrap();
        let c = outputs[0].class_order.len();
        prop_assert_eq!(meta.matrix.len(), outputs[0].probabilities.len());
        for (j, o) in outputs.iter().enumerate() {
            for (r, row) in o.probabilities.iter().enumerate() {
                prop_assert_eq!(meta.matrix[r].len(), outputs.len() * c);
                for (ci, v) in row.iter().enumerate() {
                    prop_assert_eq!(meta.matrix[r][j * c + ci].to_bits(), v.to_bits());
                }
            }
        }
    }

    #[test]
    fn stacking_predictions_is_lossless(outputs in outputs_strategy()) {
        let preds = preds_of(&outputs);
        let meta = stack_predictions(&preds).unwrap();
        for (j, p) in preds.iter().enumerate() {
            for (r, l) in p.labels.iter().enumerate() {
                prop_assert_eq!(meta.class_order[meta.matrix[r][j]], *l);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn joint_row_permutation_leaves_predictions_unchanged(seed in 0u64..1000, perm_seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let (outputs, truths) = meta_scenario(45, 0.8, seed);
        let prob = stack_probabilities(&outputs).unwrap();
        let pred = stack_predictions(&preds_of(&outputs)).unwrap();
        let mut order: Vec<usize> = (0..45).collect();
        order.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(perm_seed));
        let prob_p = MetaFeaturesProb { matrix: order.iter().map(|&i| prob.matrix[i].clone()).collect(), ..prob.clone() };
        let pred_p = MetaFeaturesPred { matrix: order.iter().map(|&i| pred.matrix[i].clone()).collect(), ..pred.clone() };
        let truths_p: Vec<GenderLabel> = order.iter().map(|&i| truths[i]).collect();
        let (probe, _) = meta_scenario(20, 0.5, seed + 1);
        let probe_prob = MetaFeatures::Prob(stack_probabilities(&probe).unwrap());
        let probe_pred = MetaFeatures::Pred(stack_predictions(&preds_of(&probe)).unwrap());

        let a = fit_logistic_ensemble(&prob, &truths, 5, 1).unwrap();
        let b = fit_logistic_ensemble(&prob_p, &truths_p, 5, 1).unwrap();
        prop_assert_eq!(a.predict(&probe_prob).unwrap(), b.predict(&probe_prob).unwrap());

        let grid = AdaBoostGrid { n_estimators: vec![20, 40], learning_rates: vec![1.0] };
        let a = fit_adaboost_ensemble(&pred, &truths, &grid, PredEncoding::OneHot, 5, 1).unwrap();
        let b = fit_adaboost_ensemble(&pred_p, &truths_p, &grid, PredEncoding::OneHot, 5, 1).unwrap();
        prop_assert_eq!(a.predict(&probe_pred).unwrap(), b.predict(&probe_pred).unwrap());
    }

    #[test]
    fn prediction_is_row_wise(seed in 0u64..1000) {
        let (outputs, truths) = meta_scenario(40, 0.8, seed);
        let prob = stack_probabilities(&outputs).unwrap();
        let m = fit_logistic_ensemble(&prob, &truths, 5, 0).unwrap();
        let all = m.predict(&MetaFeatures::Prob(prob.clone())).unwrap();
        for (r, row) in prob.matrix.iter().enumerate().take(10) {
            let one = MetaFeaturesProb { matrix: vec![row.clone()], ..prob.clone() };
            prop_assert_eq!(m.predict(&MetaFeatures::Prob(one)).unwrap()[0], all[r]);
        }
    }
}
