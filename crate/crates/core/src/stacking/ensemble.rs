//! Cross-validated meta-learners and their persisted form.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::adaboost::{fit_adaboost, AdaBoostModel, Stump};
use super::logistic::{fit_logistic, LogisticModel};
use super::meta::{MetaFeatures, MetaFeaturesPred, MetaFeaturesProb};
use crate::dataset::GenderLabel;
use crate::error::{Error, Result};
use crate::util::rng_for;

pub const ENSEMBLE_SCHEMA_VERSION: u32 = 1;
/// Inverse regularisation strengths searched by the logistic meta-learner.
pub const LOGISTIC_CS: [f64; 7] = [1e-3, 1e-2, 1e-1, 1.0, 1e1, 1e2, 1e3];
pub const DEFAULT_CV_FOLDS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnsembleKind {
    Logistic,
    Adaboost,
}

/// How hard predictions become stump features.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredEncoding {
    /// One indicator column per (model, class).
    #[default]
    OneHot,
    /// The class index itself, treated as ordinal.
    RawIndex,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdaBoostGrid {
    pub n_estimators: Vec<usize>,
    pub learning_rates: Vec<f64>,
}

impl Default for AdaBoostGrid {
    fn default() -> Self {
        AdaBoostGrid { n_estimators: vec![50, 100, 200], learning_rates: vec![0.5, 1.0] }
    }
}

impl AdaBoostGrid {
    pub fn points(&self) -> Vec<(usize, f64)> {
        self.n_estimators
            .iter()
            .flat_map(|&n| self.learning_rates.iter().map(move |&lr| (n, lr)))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_estimators.is_empty() || self.learning_rates.is_empty() {
            return Err(Error::validation("AdaBoost grid must be nonempty"));
        }
        if self.n_estimators.contains(&0) {
            return Err(Error::validation("n_estimators must be at least 1"));
        }
        if self.learning_rates.iter().any(|&lr| !(lr.is_finite() && lr > 0.0)) {
            return Err(Error::validation("learning rates must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvCandidate {
    pub hyperparameters: BTreeMap<String, f64>,
    /// Mean held-out fold accuracy; absent when the grid had one point.
    pub mean_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub cv_folds: usize,
    pub chosen: BTreeMap<String, f64>,
    pub candidates: Vec<CvCandidate>,
    pub training_accuracy: f64,
    pub training_rows: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum EnsembleParams {
    Logistic(LogisticModel),
    Adaboost { model: AdaBoostModel, encoding: PredEncoding },
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleModel {
    pub kind: EnsembleKind,
    pub model_order: Vec<String>,
    pub class_order: Vec<GenderLabel>,
    pub params: EnsembleParams,
    pub cv_report: CvReport,
}

fn label_indices(labels: &[GenderLabel], classes: &[GenderLabel], n_rows: usize, folds: usize) -> Result<Vec<usize>> {
    if labels.len() != n_rows {
        return Err(Error::validation(format!("{} labels for {n_rows} meta-feature rows", labels.len())));
    }
    let y = labels
        .iter()
        .map(|l| {
            classes
                .iter()
                .position(|c| c == l)
                .ok_or_else(|| Error::validation(format!("label {l} is not in the class order {classes:?}")))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut distinct = y.clone();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(Error::validation("meta-learner labels must contain at least two classes"));
    }
    if folds < 2 || n_rows < folds {
        return Err(Error::validation(format!(
            "cv_folds must satisfy 2 <= cv_folds <= rows, got {folds} folds for {n_rows} rows"
        )));
    }
    Ok(y)
}

/// Row order that depends only on the multiset of (row, label) pairs.
fn canonical_order(x: &[Vec<f64>], y: &[usize]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| {
        x[a].iter()
            .zip(&x[b])
            .map(|(p, q)| p.total_cmp(q))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(y[a].cmp(&y[b]))
    });
    idx
}

/// Stratified fold id per row: each class is shuffled and dealt round-robin,
/// continuing where the previous class stopped.
pub fn stratified_folds(y: &[usize], folds: usize, seed: u64) -> Vec<usize> {
    let mut out = vec![0; y.len()];
    let n_classes = y.iter().max().map_or(0, |m| m + 1);
    let mut next = 0;
    for c in 0..n_classes {
        let mut members: Vec<usize> = (0..y.len()).filter(|&i| y[i] == c).collect();
        members.shuffle(&mut rng_for(seed, c as u64, 0xf01d));
        for i in members {
            out[i] = next % folds;
            next += 1;
        }
    }
    out
}

type Fitter<'a, M> = dyn Fn(&BTreeMap<String, f64>, &[Vec<f64>], &[usize]) -> M + 'a;

fn accuracy<M>(model: &M, predict: &dyn Fn(&M, &[f64]) -> usize, x: &[Vec<f64>], y: &[usize]) -> f64 {
    let hits = x.iter().zip(y).filter(|(r, &t)| predict(model, r) == t).count();
    hits as f64 / x.len().max(1) as f64
}

fn cv_accuracy<M>(fit: &dyn Fn(&[Vec<f64>], &[usize]) -> M, predict: &dyn Fn(&M, &[f64]) -> usize, x: &[Vec<f64>], y: &[usize], fold_of: &[usize], folds: usize) -> f64 {
    let mut total = 0.0;
    let mut counted = 0;
    for f in 0..folds {
        let (mut xtr, mut ytr, mut xte, mut yte) = (vec![], vec![], vec![], vec![]);
        for i in 0..x.len() {
            if fold_of[i] == f {
                xte.push(x[i].clone());
                yte.push(y[i]);
            } else {
                xtr.push(x[i].clone());
                ytr.push(y[i]);
            }
        }
        if xte.is_empty() || xtr.is_empty() {
            continue;
        }
        let m = fit(&xtr, &ytr);
        total += accuracy(&m, predict, &xte, &yte);
        counted += 1;
    }
    total / counted.max(1) as f64
}

/// Grid search: best mean fold accuracy wins, earliest grid point on ties.
/// A single-point grid is fitted directly without CV.
fn search<M>(
    grid: &[BTreeMap<String, f64>],
    fit: &Fitter<'_, M>,
    predict: &dyn Fn(&M, &[f64]) -> usize,
    x: &[Vec<f64>],
    y: &[usize],
    folds: usize,
    seed: u64,
) -> (M, CvReport) {
    let fold_of = stratified_folds(y, folds, seed);
    let mut candidates = Vec::new();
    let mut best = 0;
    let mut best_acc = f64::NEG_INFINITY;
    for (gi, point) in grid.iter().enumerate() {
        let mean_accuracy = (grid.len() > 1).then(|| cv_accuracy(&|x: &[Vec<f64>], y: &[usize]| fit(point, x, y), predict, x, y, &fold_of, folds));
        if let Some(a) = mean_accuracy {
            if a > best_acc + 1e-12 {
                best_acc = a;
                best = gi;
            }
        }
        candidates.push(CvCandidate { hyperparameters: point.clone(), mean_accuracy });
    }
    let model = fit(&grid[best], x, y);
    let training_accuracy = accuracy(&model, predict, x, y);
    let report = CvReport {
        cv_folds: folds,
        chosen: grid[best].clone(),
        candidates,
        training_accuracy,
        training_rows: x.len(),
    };
    (model, report)
}

/// Multinomial logistic regression over stacked probabilities; the inverse
/// regularisation strength is picked from [`LOGISTIC_CS`] by stratified CV.
pub fn fit_logistic_ensemble(meta: &MetaFeaturesProb, labels: &[GenderLabel], cv_folds: usize, seed: u64) -> Result<EnsembleModel> {
    meta.validate()?;
    let y = label_indices(labels, &meta.class_order, meta.n_rows(), cv_folds)?;
    let order = canonical_order(&meta.matrix, &y);
    let x: Vec<Vec<f64>> = order.iter().map(|&i| meta.matrix[i].clone()).collect();
    let y: Vec<usize> = order.iter().map(|&i| y[i]).collect();
    let k = meta.class_order.len();
    let grid: Vec<BTreeMap<String, f64>> = LOGISTIC_CS.iter().map(|&c| BTreeMap::from([("C".to_owned(), c)])).collect();
    let fit = |p: &BTreeMap<String, f64>, x: &[Vec<f64>], y: &[usize]| fit_logistic(x, y, k, p["C"]);
    let (model, cv_report) = search(&grid, &fit, &|m: &LogisticModel, r: &[f64]| m.predict(r), &x, &y, cv_folds, seed);
    Ok(EnsembleModel {
        kind: EnsembleKind::Logistic,
        model_order: meta.model_order.clone(),
        class_order: meta.class_order.clone(),
        params: EnsembleParams::Logistic(model),
        cv_report,
    })
}

fn encode(meta: &MetaFeaturesPred, encoding: PredEncoding) -> Vec<Vec<f64>> {
    let c = meta.class_order.len();
    meta.matrix
        .iter()
        .map(|row| match encoding {
            PredEncoding::RawIndex => row.iter().map(|&v| v as f64).collect(),
            PredEncoding::OneHot => row
                .iter()
                .flat_map(|&v| (0..c).map(move |j| f64::from(u8::from(j == v))))
                .collect(),
        })
        .collect()
}

/// SAMME AdaBoost over stacked hard predictions, grid-searched by stratified CV.
pub fn fit_adaboost_ensemble(
    meta: &MetaFeaturesPred,
    labels: &[GenderLabel],
    grid: &AdaBoostGrid,
    encoding: PredEncoding,
    cv_folds: usize,
    seed: u64,
) -> Result<EnsembleModel> {
    meta.validate()?;
    grid.validate()?;
    let y = label_indices(labels, &meta.class_order, meta.n_rows(), cv_folds)?;
    let enc = encode(meta, encoding);
    let order = canonical_order(&enc, &y);
    let x: Vec<Vec<f64>> = order.iter().map(|&i| enc[i].clone()).collect();
    let y: Vec<usize> = order.iter().map(|&i| y[i]).collect();
    let k = meta.class_order.len();
    let points: Vec<BTreeMap<String, f64>> = grid
        .points()
        .into_iter()
        .map(|(n, lr)| BTreeMap::from([("n_estimators".to_owned(), n as f64), ("learning_rate".to_owned(), lr)]))
        .collect();
    let fit = |p: &BTreeMap<String, f64>, x: &[Vec<f64>], y: &[usize]| {
        fit_adaboost(x, y, k, p["n_estimators"] as usize, p["learning_rate"])
    };
    let (model, cv_report) = search(&points, &fit, &|m: &AdaBoostModel, r: &[f64]| m.predict(r), &x, &y, cv_folds, seed);
    Ok(EnsembleModel {
        kind: EnsembleKind::Adaboost,
        model_order: meta.model_order.clone(),
        class_order: meta.class_order.clone(),
        params: EnsembleParams::Adaboost { model, encoding },
        cv_report,
    })
}

impl EnsembleModel {
    fn check_schema(&self, meta: &MetaFeatures) -> Result<()> {
        let kind_ok = matches!(
            (self.kind, meta),
            (EnsembleKind::Logistic, MetaFeatures::Prob(_)) | (EnsembleKind::Adaboost, MetaFeatures::Pred(_))
        );
        if !kind_ok {
            return Err(Error::Schema(format!(
                "{:?} ensemble cannot use {} meta-features",
                self.kind,
                meta.kind()
            )));
        }
        if meta.model_order() != self.model_order || meta.class_order() != self.class_order {
            return Err(Error::Schema(format!(
                "meta-features have models {:?} / classes {:?}; ensemble expects models {:?} / classes {:?}",
                meta.model_order(),
                meta.class_order(),
                self.model_order,
                self.class_order
            )));
        }
        Ok(())
    }

    /// One label per meta-feature row.
    pub fn predict(&self, meta: &MetaFeatures) -> Result<Vec<GenderLabel>> {
        self.check_schema(meta)?;
        let idx: Vec<usize> = match (&self.params, meta) {
            (EnsembleParams::Logistic(m), MetaFeatures::Prob(p)) => {
                p.validate()?;
                p.matrix.iter().map(|r| m.predict(r)).collect()
            }
            (EnsembleParams::Adaboost { model, encoding }, MetaFeatures::Pred(p)) => {
                p.validate()?;
                encode(p, *encoding).iter().map(|r| model.predict(r)).collect()
            }
            _ => unreachable!("kind checked above"),
        };
        Ok(idx.into_iter().map(|i| self.class_order[i]).collect())
    }
}

/// Applies a fitted ensemble to matching meta-features.
pub fn ensemble_predict(model: &EnsembleModel, meta: &MetaFeatures) -> Result<Vec<GenderLabel>> {
    model.predict(meta)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EnsembleJson {
    schema_version: u32,
    kind: EnsembleKind,
    model_order: Vec<String>,
    class_order: Vec<GenderLabel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    encoding: Option<PredEncoding>,
    hyperparameters: BTreeMap<String, f64>,
    cv_report: CvReport,
}

pub const ENSEMBLE_FILE: &str = "ensemble.json";
pub const PARAMS_FILE: &str = "params.bin";
const PARAMS_MAGIC: &[u8; 4] = b"GAEN";

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N]> {
        let s = self
            .bytes
            .get(self.pos..self.pos + N)
            .ok_or_else(|| Error::Schema("params file truncated".into()))?;
        self.pos += N;
        Ok(s.try_into().unwrap_or([0; N]))
    }
    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take()?) as usize)
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take()?))
    }
}

fn encode_params(params: &EnsembleParams) -> Vec<u8> {
    let mut out = PARAMS_MAGIC.to_vec();
    let u = |out: &mut Vec<u8>, v: usize| out.extend_from_slice(&(v as u32).to_le_bytes());
    let f = |out: &mut Vec<u8>, v: f64| out.extend_from_slice(&v.to_le_bytes());
    match params {
        EnsembleParams::Logistic(m) => {
            u(&mut out, m.n_classes);
            u(&mut out, m.n_features);
            m.coef.iter().chain(&m.intercept).for_each(|&v| f(&mut out, v));
        }
        EnsembleParams::Adaboost { model, .. } => {
            u(&mut out, model.n_classes);
            u(&mut out, model.stumps.len());
            for (s, a) in &model.stumps {
                u(&mut out, s.feature);
                f(&mut out, s.threshold);
                u(&mut out, s.left);
                u(&mut out, s.right);
                f(&mut out, *a);
            }
        }
    }
    out
}

fn decode_params(bytes: &[u8], kind: EnsembleKind, encoding: Option<PredEncoding>) -> Result<EnsembleParams> {
    let mut r = Reader { bytes, pos: 0 };
    if &r.take::<4>()? != PARAMS_MAGIC {
        return Err(Error::Schema("params file has a bad magic number".into()));
    }
    let params = match kind {
        EnsembleKind::Logistic => {
            let (k, d) = (r.u32()?, r.u32()?);
            let coef = (0..k * d).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            let intercept = (0..k).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            EnsembleParams::Logistic(LogisticModel { n_features: d, n_classes: k, coef, intercept })
        }
        EnsembleKind::Adaboost => {
            let (k, n) = (r.u32()?, r.u32()?);
            let mut stumps = Vec::with_capacity(n);
            for _ in 0..n {
                let s = Stump { feature: r.u32()?, threshold: r.f64()?, left: r.u32()?, right: r.u32()? };
                stumps.push((s, r.f64()?));
            }
            EnsembleParams::Adaboost {
                model: AdaBoostModel { n_classes: k, stumps },
                encoding: encoding.unwrap_or_default(),
            }
        }
    };
    if r.pos != bytes.len() {
        return Err(Error::Schema("params file has trailing bytes".into()));
    }
    Ok(params)
}

/// Writes `ensemble.json` and `params.bin` into `dir`.
pub fn save_ensemble(model: &EnsembleModel, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let json = EnsembleJson {
        schema_version: ENSEMBLE_SCHEMA_VERSION,
        kind: model.kind,
        model_order: model.model_order.clone(),
        class_order: model.class_order.clone(),
        encoding: match &model.params {
            EnsembleParams::Adaboost { encoding, .. } => Some(*encoding),
            EnsembleParams::Logistic(_) => None,
        },
        hyperparameters: model.cv_report.chosen.clone(),
        cv_report: model.cv_report.clone(),
    };
    let path = dir.join(ENSEMBLE_FILE);
    fs::write(&path, serde_json::to_string_pretty(&json)?).map_err(|e| Error::io(&path, e))?;
    let path = dir.join(PARAMS_FILE);
    fs::write(&path, encode_params(&model.params)).map_err(|e| Error::io(&path, e))
}

pub fn load_ensemble(dir: &Path) -> Result<EnsembleModel> {
    let path = dir.join(ENSEMBLE_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let json: EnsembleJson = serde_json::from_str(&text)?;
    if json.schema_version != ENSEMBLE_SCHEMA_VERSION {
        return Err(Error::Schema(format!("unsupported ensemble schema_version {}", json.schema_version)));
    }
    let path = dir.join(PARAMS_FILE);
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let params = decode_params(&bytes, json.kind, json.encoding)?;
    Ok(EnsembleModel {
        kind: json.kind,
        model_order: json.model_order,
        class_order: json.class_order,
        params,
        cv_report: json.cv_report,
    })
}
