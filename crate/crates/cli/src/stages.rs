//! Steps shared by the individual commands and the pipeline.

use std::fs;
use std::path::{Path, PathBuf};

use gender_audit::dataset::*;
use gender_audit::fairness::*;
use gender_audit::nets::*;
use gender_audit::plot::plot_curves;
use gender_audit::rebalance::*;
use gender_audit::stacking::*;
use gender_audit::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::config::{parse_class_key, RunConfig};

pub const MEMBERS_FILE: &str = "members.toml";
pub const PLAN_FILE: &str = "plan.txt";
pub const CURVES_FILE: &str = "curves.png";

/// Assigns splits unless every record already has one (or `resplit` is set).
pub fn prepare_splits(m: &DatasetManifest, cfg: &RunConfig) -> Result<DatasetManifest> {
    let assigned = m.records.iter().all(|r| r.split != Split::Unassigned);
    if assigned && !cfg.data.resplit {
        return Ok(m.clone());
    }
    split_dataset(m, cfg.split_fractions()?, cfg.seed, cfg.data.identity_disjoint)
}

pub fn require_split(m: &DatasetManifest, split: Split) -> Result<DatasetManifest> {
    let sub = m.subset(split);
    if sub.is_empty() {
        return Err(Error::validation(format!(
            "manifest {} has no {} records; assign splits with `ingest --split`",
            m.name,
            split.as_str()
        )));
    }
    Ok(sub)
}

pub fn restrict(m: &DatasetManifest, classes: &[GenderLabel]) -> DatasetManifest {
    DatasetManifest::new(
        m.name.clone(),
        m.records.iter().filter(|r| classes.contains(&r.gender)).cloned().collect(),
    )
}

/// Applies the configured augmentation and oversampling to `train`.
/// Returns the grown manifest and a readable account of what was done.
pub fn rebalance(train: &DatasetManifest, cfg: &RunConfig, out_dir: &Path) -> Result<(DatasetManifest, String)> {
    let mut m = train.clone();
    let mut notes = String::new();
    let targets = cfg.targets()?;
    if !targets.is_empty() {
        let plan = plan_augmentation(&group_distribution(&m)?, &m.group_counts(), &targets)?;
        m = apply_augmentation(&m, &plan, &cfg.rebalance.transform, cfg.seed, &out_dir.join("augmented"))?;
        notes.push_str(&plan.to_kv());
    }
    if let Some(o) = &cfg.rebalance.oversample {
        let key = parse_class_key(&o.class)?;
        let target_count = match (o.target_count, o.proportion) {
            (Some(n), _) => n,
            (None, Some(p)) => OversamplePlan::count_for_proportion(&m, key, p)?,
            (None, None) => return Err(Error::validation("oversample needs target_count or proportion")),
        };
        let before = m.count_where(|r| key.matches(r));
        m = oversample(&m, &OversamplePlan { class_key: key, target_count, seed: cfg.seed })?;
        notes.push_str(&format!("oversample.{key} = {before} -> {target_count}\n"));
    }
    Ok((m, notes))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Trains, then saves the bundle, history and learning curves under `dir`.
pub fn train_and_save(
    model: TrainedModel,
    train_set: &DatasetManifest,
    val_set: &DatasetManifest,
    tcfg: &TrainingConfig,
    dir: &Path,
) -> Result<(TrainedModel, TrainingHistory)> {
    let (model, history) = train(model, train_set, val_set, tcfg)?;
    save_model(&model, Some(&history), dir)?;
    plot_curves(&history, &dir.join(CURVES_FILE))?;
    log::info!(
        "saved {} after {} epochs (val accuracy {:.4})",
        dir.display(),
        history.epochs(),
        history.val_accuracy.last().copied().unwrap_or(f64::NAN)
    );
    Ok((model, history))
}

/// Base-model probabilities over `rows`, plus the rows' labels.
pub fn base_outputs(bases: &[(String, TrainedModel)], rows: &DatasetManifest) -> Result<(Vec<ModelOutput>, Vec<GenderLabel>)> {
    let side = bases
        .first()
        .map(|(_, m)| m.spec().input_side)
        .ok_or_else(|| Error::validation("stacking needs at least one base model"))?;
    let set = LabeledImages::load(rows, side)?;
    let outputs = bases
        .iter()
        .map(|(id, m)| Ok(ModelOutput::from_f32(id.clone(), m.class_order.clone(), &m.predict_proba(&set.images)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok((outputs, set.labels))
}

pub fn fit_ensemble(kind: EnsembleKind, outputs: &[ModelOutput], labels: &[GenderLabel], cfg: &RunConfig) -> Result<EnsembleModel> {
    let s = &cfg.stacking;
    match kind {
        EnsembleKind::Logistic => fit_logistic_ensemble(&stack_probabilities(outputs)?, labels, s.cv_folds, cfg.seed),
        EnsembleKind::Adaboost => {
            let preds: Vec<ModelPredictions> = outputs.iter().map(ModelOutput::predictions).collect();
            fit_adaboost_ensemble(&stack_predictions(&preds)?, labels, &s.adaboost, s.encoding, s.cv_folds, cfg.seed)
        }
    }
}

/// Rows the meta-learner is fitted on.
pub fn meta_rows(split_manifest: &DatasetManifest, cfg: &RunConfig) -> Result<DatasetManifest> {
    let mut rows = require_split(split_manifest, Split::Train)?;
    if cfg.stacking.pool_train_val {
        rows.records.extend(split_manifest.subset(Split::Val).records);
    }
    Ok(rows)
}

#[derive(Debug, Serialize, Deserialize)]
struct Members {
    members: Vec<Member>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Member {
    id: String,
    path: PathBuf,
}

/// Saves the ensemble with a list of the base-model bundles it stacks.
pub fn save_stacked(ensemble: &EnsembleModel, members: &[(String, PathBuf)], dir: &Path) -> Result<()> {
    save_ensemble(ensemble, dir)?;
    let list = Members {
        members: members.iter().map(|(id, path)| Member { id: id.clone(), path: path.clone() }).collect(),
    };
    let text = toml::to_string_pretty(&list).map_err(|e| Error::Serde(e.to_string()))?;
    write_text(&dir.join(MEMBERS_FILE), &text)
}

pub fn load_stacked(dir: &Path) -> Result<StackedClassifier> {
    let ensemble = load_ensemble(dir)?;
    let path = dir.join(MEMBERS_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let list: Members = toml::from_str(&text).map_err(|e| Error::Schema(format!("{}: {e}", path.display())))?;
    let bases = list
        .members
        .into_iter()
        .map(|m| Ok((m.id, load_model(&m.path)?.0)))
        .collect::<Result<Vec<_>>>()?;
    StackedClassifier::new(bases, ensemble)
}

/// File-name form of a model name.
pub fn slug(name: &str) -> String {
    let s: String = name
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '_' })
        .collect();
    s.split('_').filter(|p| !p.is_empty()).collect::<Vec<_>>().join("_")
}

/// Evaluates and writes `reports/<slug>.json` and, when anything is
/// misclassified, `grids/<slug>.png` under `dir`.
pub fn audit(model: &dyn Classifier, test: &DatasetManifest, name: &str, cfg: &RunConfig, dir: &Path) -> Result<EvaluationReport> {
    let opts = EvaluateOptions {
        threshold: cfg.fairness.threshold,
        intersectional: cfg.fairness.intersectional,
        ..EvaluateOptions::default()
    };
    let report = evaluate(model, test, name, &opts)?;
    let reports = dir.join("reports");
    fs::create_dir_all(&reports).map_err(|e| Error::io(&reports, e))?;
    save_report(&report, &reports.join(format!("{}.json", slug(name))))?;
    let grids = dir.join("grids");
    fs::create_dir_all(&grids).map_err(|e| Error::io(&grids, e))?;
    misclassified_grid(&report, cfg.fairness.grid_columns, &grids.join(format!("{}.png", slug(name))))?;
    Ok(report)
}

/// Writes `table.csv` and `table.txt` under `dir` and returns the display form.
pub fn write_table(reports: &[EvaluationReport], dir: &Path) -> Result<String> {
    let table = report_table(reports)?;
    write_text(&dir.join("table.csv"), &table.csv)?;
    write_text(&dir.join("table.txt"), &table.text)?;
    Ok(table.text)
}
