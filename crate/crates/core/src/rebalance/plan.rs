use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::dataset::GroupKey;
use crate::error::{Error, Result};

/// Largest allowed gap between a target and the proportion a plan achieves.
pub const PROPORTION_TOLERANCE: f64 = 0.005;

/// Number of synthesized images per group and the proportions they aim for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentationPlan {
    /// Total new images per group. Within a group they are spread evenly over
    /// the originals, with the remainder going to the lexicographically first paths.
    pub copies_per_group: BTreeMap<GroupKey, usize>,
    pub target_proportions: BTreeMap<GroupKey, f64>,
    /// Group counts the plan was computed against.
    pub source_counts: BTreeMap<GroupKey, usize>,
}

impl AugmentationPlan {
    pub fn total_copies(&self) -> usize {
        self.copies_per_group.values().sum()
    }

    /// Group proportions after applying the plan.
    pub fn achieved_proportions(&self) -> BTreeMap<GroupKey, f64> {
        let total = (self.source_counts.values().sum::<usize>() + self.total_copies()) as f64;
        self.source_counts
            .iter()
            .map(|(k, &n)| {
                let x = self.copies_per_group.get(k).copied().unwrap_or(0);
                (*k, (n + x) as f64 / total)
            })
            .collect()
    }

    /// `copies` per original for each member of a group of `n` records,
    /// in lexicographic member order.
    pub fn per_image_copies(total: usize, n: usize) -> impl Iterator<Item = usize> {
        let (base, rem) = if n == 0 { (0, 0) } else { (total / n, total % n) };
        (0..n).map(move |i| base + usize::from(i < rem))
    }

    /// Human-readable `key = value` form, one group per line.
    pub fn to_kv(&self) -> String {
        let mut out = String::from("# augmentation plan\n");
        for (k, v) in &self.source_counts {
            let _ = writeln!(out, "count.{k} = {v}");
        }
        for (k, v) in &self.target_proportions {
            let _ = writeln!(out, "target.{k} = {v}");
        }
        for (k, v) in &self.copies_per_group {
            let _ = writeln!(out, "copies.{k} = {v}");
        }
        out
    }

    pub fn from_kv(text: &str) -> Result<Self> {
        let mut plan = AugmentationPlan {
            copies_per_group: BTreeMap::new(),
            target_proportions: BTreeMap::new(),
            source_counts: BTreeMap::new(),
        };
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = || Error::validation(format!("plan line {}: cannot parse {line:?}", i + 1));
            let (key, value) = line.split_once('=').ok_or_else(bad)?;
            let (field, group) = key.trim().split_once('.').ok_or_else(bad)?;
            let group: GroupKey = group.parse()?;
            let value = value.trim();
            match field {
                "count" => {
                    plan.source_counts.insert(group, value.parse().map_err(|_| bad())?);
                }
                "target" => {
                    plan.target_proportions.insert(group, value.parse().map_err(|_| bad())?);
                }
                "copies" => {
                    plan.copies_per_group.insert(group, value.parse().map_err(|_| bad())?);
                }
                _ => return Err(bad()),
            }
        }
        Ok(plan)
    }
}

/// Solves for per-group copy counts that bring each targeted group to its
/// target proportion of the grown dataset.
///
/// With `n` the current counts, `N` the total and `T` the targeted groups, the
/// grown total is `N + X` where `X = (τN − S) / (1 − τ)`, `τ = Σ_T target` and
/// `S = Σ_T n`. Each targeted group receives `target·(N + X) − n` copies,
/// rounded to the nearest integer; untargeted groups receive none.
pub fn plan_augmentation(
    dist: &BTreeMap<GroupKey, f64>,
    current_counts: &BTreeMap<GroupKey, usize>,
    targets: &BTreeMap<GroupKey, f64>,
) -> Result<AugmentationPlan> {
    let total: usize = current_counts.values().sum();
    if total == 0 {
        return Err(Error::Planning("cannot plan augmentation for an empty dataset".into()));
    }
    let n_total = total as f64;
    for (k, &p) in dist {
        let actual = current_counts.get(k).copied().unwrap_or(0) as f64 / n_total;
        if (actual - p).abs() > 1e-9 {
            return Err(Error::Planning(format!(
                "distribution entry {k} = {p} disagrees with counts ({actual})"
            )));
        }
    }

    let mut tau = 0.0;
    let mut targeted_count = 0usize;
    for (k, &t) in targets {
        if !(t > 0.0 && t <= 1.0) {
            return Err(Error::Planning(format!("target for {k} must be in (0, 1], got {t}")));
        }
        let n = current_counts.get(k).copied().unwrap_or(0);
        if n == 0 {
            return Err(Error::Planning(format!(
                "group {k} has no images to augment from"
            )));
        }
        let current = n as f64 / n_total;
        if t + 1e-12 < current {
            return Err(Error::Planning(format!(
                "target {t} for {k} is below its current proportion {current:.6}; \
                 reaching it would require deleting images"
            )));
        }
        tau += t;
        targeted_count += n;
    }
    let untargeted = total - targeted_count;

    let grown_total = if untargeted == 0 {
        if (tau - 1.0).abs() > 1e-9 {
            return Err(Error::Planning(format!(
                "targets cover every group but sum to {tau}, not 1"
            )));
        }
        // Smallest total at which no group needs negative copies.
        targets
            .iter()
            .map(|(k, &t)| current_counts[k] as f64 / t)
            .fold(n_total, f64::max)
    } else {
        if tau >= 1.0 {
            return Err(Error::Planning(format!(
                "targets sum to {tau} but untargeted groups hold {untargeted} images"
            )));
        }
        n_total + (tau * n_total - targeted_count as f64) / (1.0 - tau)
    };

    let mut copies = BTreeMap::new();
    for (k, &n) in current_counts {
        let x = match targets.get(k) {
            Some(&t) => (t * grown_total - n as f64).round().max(0.0) as usize,
            None => 0,
        };
        copies.insert(*k, x);
    }

    let plan = AugmentationPlan {
        copies_per_group: copies,
        target_proportions: targets.clone(),
        source_counts: current_counts.clone(),
    };
    let achieved = plan.achieved_proportions();
    for (k, &t) in targets {
        let got = achieved[k];
        if (got - t).abs() > PROPORTION_TOLERANCE {
            return Err(Error::Planning(format!(
                "dataset too small to reach {t} for {k} within tolerance (achieved {got:.4})"
            )));
        }
    }
    Ok(plan)
}
