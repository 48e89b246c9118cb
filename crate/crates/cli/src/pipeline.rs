//! The full experiment as one run: data, rebalance, baseline, three transfer
//! models, two ensembles, evaluation of all six, and the summary table.

use std::path::{Path, PathBuf};

use gender_audit::dataset::*;
use gender_audit::fairness::{Classifier, EvaluationReport};
use gender_audit::nets::*;
use gender_audit::stacking::{EnsembleKind, StackedClassifier};

use crate::config::RunConfig;
use crate::failure::{CliResult, Failure};
use crate::stages::*;

pub const BASELINE: &str = "Baseline";
pub const FEATURE_EXTRACTION: &str = "Baseline Feature Extraction";
pub const FINE_TUNED: &str = "Baseline Fine-tuned";
pub const BACKBONE_EXTRACTION: &str = "VGG16 Feature Extraction";
pub const LOGISTIC: &str = "Logistic Regression Ensemble";
pub const ADABOOST: &str = "Adaboost Ensemble";

fn stage<T>(name: &str, f: impl FnOnce() -> gender_audit::Result<T>) -> CliResult<T> {
    log::info!("stage {name}");
    f().map_err(|e| Failure::from(e).in_stage(name))
}

pub struct PipelineOutput {
    pub reports: Vec<EvaluationReport>,
    pub table: String,
}

pub fn run(cfg: &RunConfig, dir: &Path) -> CliResult<PipelineOutput> {
    let side = cfg.input_side;
    let (manifest, train_set, val_set, test_set) = stage("data", || {
        let source = match (&cfg.data.manifest, &cfg.data.synthetic) {
            (Some(path), _) => load_manifest(path)?,
            (None, Some(s)) => {
                let synth = SynthConfig {
                    images_per_identity: s.images_per_identity,
                    noise: s.noise,
                    ..SynthConfig::balanced(&GenderLabel::ALL, s.per_group, side, cfg.seed)
                };
                generate_synthetic(&dir.join("data"), &synth)?
            }
            (None, None) => return Err(gender_audit::Error::Config("no data source configured".into())),
        };
        let m = prepare_splits(&source, cfg)?;
        save_manifest(&m, dir.join("manifests").join("split.csv"))?;
        let (tr, va, te) = (require_split(&m, Split::Train)?, require_split(&m, Split::Val)?, require_split(&m, Split::Test)?);
        Ok((m, tr, va, te))
    })?;

    let train_set = stage("rebalance", || {
        let (m, notes) = rebalance(&train_set, cfg, dir)?;
        write_text(&dir.join(PLAN_FILE), &notes)?;
        save_manifest(&m, dir.join("manifests").join("train.csv"))?;
        Ok(m)
    })?;

    let models = dir.join("models");
    let classes = &cfg.data.baseline_classes;
    let baseline = stage("baseline", || {
        let ordered: Vec<GenderLabel> = GenderLabel::ALL.into_iter().filter(|c| classes.contains(c)).collect();
        let spec = build_baseline(side, ordered.len())?;
        let model = TrainedModel::new(Network::init(spec, cfg.seed)?, ordered.clone())?;
        let (m, _) = train_and_save(
            model,
            &restrict(&train_set, &ordered),
            &restrict(&val_set, &ordered),
            &cfg.baseline,
            &models.join("baseline"),
        )?;
        Ok(m)
    })?;

    let tcfg = &cfg.transfer.training;
    let n = GenderLabel::ALL.len();
    let feature = stage("feature_extraction", || {
        let m = make_feature_extractor(&baseline, n, cfg.seed + 1)?;
        Ok(train_and_save(m, &train_set, &val_set, tcfg, &models.join("feature_extraction"))?.0)
    })?;
    let fine = stage("fine_tuned", || {
        let m = make_fine_tuned(&baseline, n, cfg.transfer.orientation, cfg.seed + 2)?;
        Ok(train_and_save(m, &train_set, &val_set, tcfg, &models.join("fine_tuned"))?.0)
    })?;
    let backbone = stage("backbone_extraction", || {
        let net = load_backbone(&cfg.transfer.backbone, side)?;
        let m = make_backbone_extractor(&net, n, cfg.seed + 3)?;
        Ok(train_and_save(m, &train_set, &val_set, tcfg, &models.join("backbone_extraction"))?.0)
    })?;

    let member_dirs: Vec<(String, PathBuf)> = ["feature_extraction", "fine_tuned", "backbone_extraction"]
        .iter()
        .map(|id| (id.to_string(), models.join(id)))
        .collect();
    let bases: Vec<(String, TrainedModel)> = member_dirs
        .iter()
        .map(|(id, _)| id.clone())
        .zip([feature.clone(), fine.clone(), backbone.clone()])
        .collect();
    let (outputs, labels) = stage("stack", || base_outputs(&bases, &meta_rows(&manifest, cfg)?))?;
    let mut stacked = Vec::new();
    for (kind, id) in [(EnsembleKind::Logistic, "logistic"), (EnsembleKind::Adaboost, "adaboost")] {
        let s = stage(&format!("stack_{id}"), || {
            let ensemble = fit_ensemble(kind, &outputs, &labels, cfg)?;
            save_stacked(&ensemble, &member_dirs, &dir.join("ensembles").join(id))?;
            StackedClassifier::new(bases.clone(), ensemble)
        })?;
        stacked.push(s);
    }

    let all: [(&str, &dyn Classifier); 6] = [
        (BASELINE, &baseline),
        (FEATURE_EXTRACTION, &feature),
        (FINE_TUNED, &fine),
        (BACKBONE_EXTRACTION, &backbone),
        (LOGISTIC, &stacked[0]),
        (ADABOOST, &stacked[1]),
    ];
    let reports = stage("evaluate", || {
        all.iter().map(|(name, model)| audit(*model, &test_set, name, cfg, dir)).collect::<gender_audit::Result<Vec<_>>>()
    })?;
    let table = stage("report", || write_table(&reports, dir))?;
    Ok(PipelineOutput { reports, table })
}
