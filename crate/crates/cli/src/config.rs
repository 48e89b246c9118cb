//! The run configuration file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use gender_audit::dataset::{GenderLabel, GroupKey, SplitFractions};
use gender_audit::nets::{BackboneSource, FreezeOrientation, TrainingConfig, MIN_INPUT_SIDE};
use gender_audit::rebalance::{ClassKey, TransformParams};
use gender_audit::stacking::{AdaBoostGrid, PredEncoding, DEFAULT_CV_FOLDS};
use gender_audit::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub input_side: usize,
    pub data: DataConfig,
    pub rebalance: RebalanceConfig,
    pub baseline: TrainingConfig,
    pub transfer: TransferConfig,
    pub stacking: StackingConfig,
    pub fairness: FairnessConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            input_side: 227,
            data: DataConfig::default(),
            rebalance: RebalanceConfig::default(),
            baseline: TrainingConfig::default(),
            transfer: TransferConfig::default(),
            stacking: StackingConfig::default(),
            fairness: FairnessConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Manifest to run on. Mutually exclusive with `synthetic`.
    pub manifest: Option<PathBuf>,
    pub synthetic: Option<SyntheticConfig>,
    /// Train/val/test fractions, used when the manifest has unassigned records.
    pub split: [f64; 3],
    pub identity_disjoint: bool,
    /// Ignore splits already present in the manifest.
    pub resplit: bool,
    /// Classes the baseline is trained on.
    pub baseline_classes: Vec<GenderLabel>,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            manifest: None,
            synthetic: None,
            split: [0.8, 0.1, 0.1],
            identity_disjoint: true,
            resplit: false,
            baseline_classes: vec![GenderLabel::Male, GenderLabel::Female],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticConfig {
    pub per_group: usize,
    pub images_per_identity: usize,
    pub noise: f32,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig { per_group: 16, images_per_identity: 4, noise: 0.08 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RebalanceConfig {
    /// Target proportions of the training split, keyed `gender/tone`.
    pub targets: BTreeMap<String, f64>,
    pub transform: TransformParams,
    pub oversample: Option<OversampleConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OversampleConfig {
    /// A gender (`male`) or an audit group (`male/dark`).
    pub class: String,
    pub target_count: Option<usize>,
    pub proportion: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TransferConfig {
    pub training: TrainingConfig,
    pub orientation: FreezeOrientation,
    pub backbone: BackboneSource,
}

impl Default for TransferConfig {
    fn default() -> Self {
        TransferConfig {
            training: TrainingConfig::default(),
            orientation: FreezeOrientation::default(),
            backbone: BackboneSource::RandomInit { seed: 0 },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StackingConfig {
    pub cv_folds: usize,
    /// Fit meta-learners on train and val rows together.
    pub pool_train_val: bool,
    pub adaboost: AdaBoostGrid,
    pub encoding: PredEncoding,
}

impl Default for StackingConfig {
    fn default() -> Self {
        StackingConfig {
            cv_folds: DEFAULT_CV_FOLDS,
            pool_train_val: true,
            adaboost: AdaBoostGrid::default(),
            encoding: PredEncoding::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FairnessConfig {
    pub threshold: f64,
    /// Also audit gender × tone groups.
    pub intersectional: bool,
    pub grid_columns: usize,
}

impl Default for FairnessConfig {
    fn default() -> Self {
        FairnessConfig { threshold: 0.8, intersectional: false, grid_columns: 6 }
    }
}

pub fn parse_class_key(s: &str) -> Result<ClassKey> {
    if s.contains('/') {
        Ok(ClassKey::Group(s.parse()?))
    } else {
        Ok(ClassKey::Gender(s.parse()?))
    }
}

impl RunConfig {
    /// Parses a config file; relative paths in it are resolved against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: RunConfig =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(m) = self.data.manifest.as_mut() {
            fix(m);
        }
        if let BackboneSource::Pretrained(p) = &mut self.transfer.backbone {
            fix(p);
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Serde(e.to_string()))
    }

    pub fn split_fractions(&self) -> Result<SplitFractions> {
        let [a, b, c] = self.data.split;
        SplitFractions::new(a, b, c)
    }

    pub fn targets(&self) -> Result<BTreeMap<GroupKey, f64>> {
        self.rebalance
            .targets
            .iter()
            .map(|(k, &v)| Ok((k.parse::<GroupKey>()?, v)))
            .collect()
    }

    /// Checks everything that can be checked without touching data.
    pub fn validate(&self) -> Result<()> {
        if self.input_side < MIN_INPUT_SIDE {
            return Err(Error::validation(format!(
                "input_side must be at least {MIN_INPUT_SIDE}, got {}",
                self.input_side
            )));
        }
        self.split_fractions()?;
        let classes = &self.data.baseline_classes;
        if classes.len() < 2 || (1..classes.len()).any(|i| classes[..i].contains(&classes[i])) {
            return Err(Error::validation("data.baseline_classes needs at least two distinct classes"));
        }
        if let Some(s) = &self.data.synthetic {
            if s.per_group == 0 || s.images_per_identity == 0 {
                return Err(Error::validation("data.synthetic counts must be positive"));
            }
            if !(s.noise.is_finite() && s.noise >= 0.0) {
                return Err(Error::validation("data.synthetic.noise must be nonnegative"));
            }
        }
        for (k, &v) in &self.targets()? {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::validation(format!("rebalance target for {k} must be in (0, 1), got {v}")));
            }
        }
        self.rebalance.transform.validate()?;
        if let Some(o) = &self.rebalance.oversample {
            parse_class_key(&o.class)?;
            match (o.target_count, o.proportion) {
                (Some(_), None) => {}
                (None, Some(p)) if p > 0.0 && p < 1.0 => {}
                (None, Some(p)) => {
                    return Err(Error::validation(format!("oversample proportion must be in (0, 1), got {p}")))
                }
                _ => {
                    return Err(Error::validation(
                        "rebalance.oversample needs exactly one of target_count or proportion",
                    ))
                }
            }
        }
        self.baseline.validate()?;
        self.transfer.training.validate()?;
        if self.stacking.cv_folds < 2 {
            return Err(Error::validation("stacking.cv_folds must be at least 2"));
        }
        self.stacking.adaboost.validate()?;
        if !(0.0..=1.0).contains(&self.fairness.threshold) {
            return Err(Error::validation("fairness.threshold must be in [0, 1]"));
        }
        if self.fairness.grid_columns == 0 {
            return Err(Error::validation("fairness.grid_columns must be at least 1"));
        }
        Ok(())
    }

    /// Extra checks for a full pipeline run: a data source and any
    /// referenced files must exist before the first stage starts.
    pub fn validate_for_pipeline(&self) -> Result<()> {
        self.validate()?;
        match (&self.data.manifest, &self.data.synthetic) {
            (Some(_), Some(_)) => {
                return Err(Error::Config("set either data.manifest or data.synthetic, not both".into()))
            }
            (None, None) => return Err(Error::Config("set data.manifest or data.synthetic".into())),
            (Some(m), None) if !m.is_file() => {
                return Err(Error::Config(format!("manifest {} does not exist", m.display())))
            }
            _ => {}
        }
        if let BackboneSource::Pretrained(dir) = &self.transfer.backbone {
            if !dir.join("weights.bin").is_file() || !dir.join("architecture.json").is_file() {
                return Err(Error::Config(format!(
                    "pretrained backbone requested but {} has no architecture.json/weights.bin",
                    dir.display()
                )));
            }
        }
        Ok(())
    }
}
