use std::collections::HashMap;
use std::fmt;
use std::path::PathBuf;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{DatasetManifest, GenderLabel, GroupKey, ImageRecord, Origin};
use crate::error::{Error, Result};

/// The class whose frequency is raised: a whole gender or one audit group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassKey {
    Gender(GenderLabel),
    Group(GroupKey),
}

impl ClassKey {
    pub fn matches(&self, r: &ImageRecord) -> bool {
        match self {
            ClassKey::Gender(g) => r.gender == *g,
            ClassKey::Group(k) => r.group() == *k,
        }
    }
}

impl fmt::Display for ClassKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ClassKey::Gender(g) => write!(f, "{g}"),
            ClassKey::Group(k) => write!(f, "{k}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OversamplePlan {
    pub class_key: ClassKey,
    pub target_count: usize,
    pub seed: u64,
}

impl OversamplePlan {
    /// Count that makes the class a fraction `proportion` of the grown manifest,
    /// rounded to the nearest record.
    pub fn count_for_proportion(manifest: &DatasetManifest, class_key: ClassKey, proportion: f64) -> Result<usize> {
        if !(proportion > 0.0 && proportion < 1.0) {
            return Err(Error::validation(format!(
                "oversampling proportion must be in (0, 1), got {proportion}"
            )));
        }
        let current = manifest.count_where(|r| class_key.matches(r));
        let others = (manifest.len() - current) as f64;
        let target = (proportion * others / (1.0 - proportion)).round() as usize;
        Ok(target.max(current))
    }
}

/// Appends uniform-with-replacement duplicates of the class's current members
/// until the class holds exactly `target_count` records.
pub fn oversample(manifest: &DatasetManifest, plan: &OversamplePlan) -> Result<DatasetManifest> {
    let members: Vec<usize> = manifest
        .records
        .iter()
        .enumerate()
        .filter(|(_, r)| plan.class_key.matches(r))
        .map(|(i, _)| i)
        .collect();
    let current = members.len();
    if plan.target_count < current {
        return Err(Error::validation(format!(
            "target count {} for {} is below its current count {current}",
            plan.target_count, plan.class_key
        )));
    }
    let needed = plan.target_count - current;
    if needed > 0 && members.is_empty() {
        return Err(Error::validation(format!(
            "class {} has no records to duplicate",
            plan.class_key
        )));
    }

    let mut next_copy: HashMap<PathBuf, u32> = HashMap::new();
    for r in &manifest.records {
        let e = next_copy.entry(r.image_path.clone()).or_insert(0);
        *e = (*e).max(r.copy + 1);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
    let mut out = manifest.clone();
    out.records.reserve(needed);
    for _ in 0..needed {
        let src = &manifest.records[members[rng.gen_range(0..current)]];
        let counter = next_copy.get_mut(&src.image_path).expect("path recorded above");
        let copy = *counter;
        *counter += 1;
        out.records.push(ImageRecord {
            origin: Origin::Duplicated,
            copy,
            ..src.clone()
        });
    }
    Ok(out)
}
