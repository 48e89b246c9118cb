//! Train/validation/test assignment.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::labels::Split;
use super::manifest::DatasetManifest;
use crate::error::{Error, Result};

const SPLITS: [Split; 3] = [Split::Train, Split::Val, Split::Test];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl SplitFractions {
    pub fn new(train: f64, val: f64, test: f64) -> Result<Self> {
        let f = SplitFractions { train, val, test };
        f.validate()?;
        Ok(f)
    }

    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|p| !p.is_finite() || *p <= 0.0) {
            return Err(Error::validation(format!(
                "split fractions must be positive, got {parts:?}"
            )));
        }
        let sum: f64 = parts.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::validation(format!(
                "split fractions must sum to 1, got {sum}"
            )));
        }
        Ok(())
    }

    fn as_array(&self) -> [f64; 3] {
        [self.train, self.val, self.test]
    }

    /// Largest-remainder apportionment of `n` items; ties favour the earlier split.
    pub fn target_counts(&self, n: usize) -> [usize; 3] {
        let exact = self.as_array().map(|f| f * n as f64);
        let mut counts = exact.map(|e| e.floor() as usize);
        let assigned: usize = counts.iter().sum();
        let mut order = [0usize, 1, 2];
        order.sort_by(|&a, &b| {
            let ra = exact[a] - exact[a].floor();
            let rb = exact[b] - exact[b].floor();
            rb.total_cmp(&ra).then(a.cmp(&b))
        });
        for &i in order.iter().take(n.saturating_sub(assigned)) {
            counts[i] += 1;
        }
        counts
    }
}

/// Assigns every record to train, val or test.
///
/// With `identity_disjoint`, all records of an identity land in the same
/// split: identities are shuffled under `seed`, ordered by descending size and
/// placed greedily into the split with the largest remaining deficit (ties go to
/// train, then val). Each split then lands within one identity-group size of its
/// target. An identity larger than the largest split's target is infeasible.
pub fn split_dataset(
    manifest: &DatasetManifest,
    fractions: SplitFractions,
    seed: u64,
    identity_disjoint: bool,
) -> Result<DatasetManifest> {
    fractions.validate()?;
    let n = manifest.len();
    let targets = fractions.target_counts(n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignment = vec![Split::Unassigned; n];

    if identity_disjoint {
        let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, r) in manifest.records.iter().enumerate() {
            groups.entry(r.identity_id.as_str()).or_default().push(i);
        }
        let mut groups: Vec<(&str, Vec<usize>)> = groups.into_iter().collect();
        let capacity = targets.iter().copied().max().unwrap_or(0);
        if let Some((id, members)) = groups.iter().find(|(_, m)| m.len() > capacity) {
            return Err(Error::InfeasibleSplit(format!(
                "identity {id:?} has {} records but the largest split holds {capacity}",
                members.len()
            )));
        }
        groups.shuffle(&mut rng);
        groups.sort_by(|a, b| b.1.len().cmp(&a.1.len()));

        let mut filled = [0usize; 3];
        for (_, members) in &groups {
            let mut best = 0;
            for s in 1..3 {
                let deficit = |k: usize| targets[k] as i64 - filled[k] as i64;
                if deficit(s) > deficit(best) {
                    best = s;
                }
            }
            filled[best] += members.len();
            for &i in members {
                assignment[i] = SPLITS[best];
            }
        }
    } else {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let mut pos = 0;
        for (s, &count) in targets.iter().enumerate() {
            for &i in &order[pos..pos + count] {
                assignment[i] = SPLITS[s];
            }
            pos += count;
        }
    }

    let mut out = manifest.clone();
    for (r, s) in out.records.iter_mut().zip(assignment) {
        r.split = s;
    }
    Ok(out)
}
