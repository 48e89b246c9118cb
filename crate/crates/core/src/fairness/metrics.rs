//! Group accuracies, selection rate and the 80% rule.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::{GenderLabel, GroupKey};
use crate::error::{Error, Result};

/// Selection rates strictly below this indicate disparate impact.
pub const DEFAULT_THRESHOLD: f64 = 0.8;

/// A gender class or an intersectional gender × tone group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum AuditGroup {
    Class(GenderLabel),
    Group(GroupKey),
}

impl fmt::Display for AuditGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AuditGroup::Class(g) => write!(f, "{g}"),
            AuditGroup::Group(k) => write!(f, "{k}"),
        }
    }
}

impl FromStr for AuditGroup {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.contains('/') {
            Ok(AuditGroup::Group(s.parse()?))
        } else {
            Ok(AuditGroup::Class(s.parse()?))
        }
    }
}

impl From<AuditGroup> for String {
    fn from(g: AuditGroup) -> String {
        g.to_string()
    }
}

impl TryFrom<String> for AuditGroup {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupAccuracy {
    pub group: AuditGroup,
    pub correct: usize,
    pub total: usize,
    pub accuracy: f64,
}

impl GroupAccuracy {
    pub fn new(group: AuditGroup, correct: usize, total: usize) -> Result<Self> {
        if total == 0 || correct > total {
            return Err(Error::validation(format!(
                "group {group}: need 0 <= correct <= total and total >= 1, got {correct}/{total}"
            )));
        }
        Ok(GroupAccuracy { group, correct, total, accuracy: correct as f64 / total as f64 })
    }
}

fn tally<K: Ord + Copy>(keys: impl Iterator<Item = (K, bool)>) -> BTreeMap<K, (usize, usize)> {
    let mut m: BTreeMap<K, (usize, usize)> = BTreeMap::new();
    for (k, hit) in keys {
        let e = m.entry(k).or_default();
        e.1 += 1;
        if hit {
            e.0 += 1;
        }
    }
    m
}

/// Accuracy per class in `classes` order. Classes with no truth instances are
/// left out and logged.
pub fn per_class_accuracy(preds: &[GenderLabel], truths: &[GenderLabel], classes: &[GenderLabel]) -> Result<Vec<GroupAccuracy>> {
    if preds.len() != truths.len() {
        return Err(Error::validation(format!(
            "{} predictions for {} truths",
            preds.len(),
            truths.len()
        )));
    }
    if let Some(t) = truths.iter().find(|t| !classes.contains(t)) {
        return Err(Error::validation(format!("truth label {t} is not among the audited classes {classes:?}")));
    }
    let counts = tally(truths.iter().zip(preds).map(|(t, p)| (*t, t == p)));
    let mut out = Vec::new();
    for c in classes {
        match counts.get(c) {
            Some(&(correct, total)) => out.push(GroupAccuracy::new(AuditGroup::Class(*c), correct, total)?),
            None => log::warn!("class {c} has no test instances; excluded from the audit"),
        }
    }
    Ok(out)
}

/// Accuracy per gender × tone group, in [`GroupKey`] order, present groups only.
pub fn per_group_accuracy(preds: &[GenderLabel], truths: &[GroupKey]) -> Result<Vec<GroupAccuracy>> {
    if preds.len() != truths.len() {
        return Err(Error::validation(format!(
            "{} predictions for {} truths",
            preds.len(),
            truths.len()
        )));
    }
    tally(truths.iter().zip(preds).map(|(t, p)| (*t, t.gender == *p)))
        .into_iter()
        .map(|(k, (c, n))| GroupAccuracy::new(AuditGroup::Group(k), c, n))
        .collect()
}

/// Worst accuracy over best accuracy.
pub fn selection_rate(accuracies: &[f64]) -> Result<f64> {
    if accuracies.is_empty() {
        return Err(Error::validation("selection rate needs at least one accuracy"));
    }
    if let Some(a) = accuracies.iter().find(|a| !(0.0..=1.0).contains(*a)) {
        return Err(Error::validation(format!("accuracy {a} is outside [0, 1]")));
    }
    let min = accuracies.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = accuracies.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == 0.0 {
        return Err(Error::Undefined(
            "selection rate is 0/0 when every group accuracy is zero; check that predictions and truths share labels".into(),
        ));
    }
    Ok(min / max)
}

/// True iff `rate < threshold`.
pub fn disparate_impact(rate: f64, threshold: f64) -> Result<bool> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::validation(format!("selection rate {rate} is outside [0, 1]")));
    }
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::validation(format!("threshold {threshold} is outside [0, 1]")));
    }
    Ok(rate < threshold)
}

#[cfg(test)]
mod tests {
    use super::*;
    use GenderLabel::*;

    #[test]
    fn hand_enumerated_accuracies() {
        let r = per_class_accuracy(&[Male, Female, Female, Nonbinary], &[Male, Male, Female, Nonbinary], &GenderLabel::ALL).unwrap();
        let acc: Vec<f64> = r.iter().map(|g| g.accuracy).collect();
        assert_eq!(acc, [0.5, 1.0, 1.0]);
    }

    #[test]
    fn absent_class_omitted() {
        let r = per_class_accuracy(&[Male, Female], &[Male, Female], &GenderLabel::ALL).unwrap();
        assert_eq!(r.len(), 2);
        assert!(per_class_accuracy(&[Male], &[Male, Female], &GenderLabel::ALL).is_err());
        assert!(per_class_accuracy(&[Male], &[Nonbinary], &[Male, Female]).is_err());
    }

    #[test]
    fn never_predicted_class_has_zero_accuracy() {
        let r = per_class_accuracy(&[Male, Female, Male], &[Male, Female, Nonbinary], &GenderLabel::ALL).unwrap();
        assert_eq!(r[2].accuracy, 0.0);
        assert_eq!(selection_rate(&r.iter().map(|g| g.accuracy).collect::<Vec<_>>()).unwrap(), 0.0);
    }

    #[test]
    fn selection_rate_examples() {
        assert!((selection_rate(&[0.9111, 0.8971, 0.9000]).unwrap() - 0.9846).abs() < 5e-5);
        assert_eq!(selection_rate(&[0.8787, 0.8575, 0.0]).unwrap(), 0.0);
        assert_eq!(selection_rate(&[0.4, 0.4, 0.4]).unwrap(), 1.0);
        assert!(matches!(selection_rate(&[0.0, 0.0]), Err(Error::Undefined(_))));
        assert!(selection_rate(&[]).is_err());
        assert!(selection_rate(&[1.2]).is_err());
    }

    #[test]
    fn strict_threshold() {
        assert!(disparate_impact(0.0, DEFAULT_THRESHOLD).unwrap());
        assert!(!disparate_impact(0.9846, DEFAULT_THRESHOLD).unwrap());
        assert!(!disparate_impact(0.80, DEFAULT_THRESHOLD).unwrap());
        assert!(disparate_impact(1.5, DEFAULT_THRESHOLD).is_err());
    }

    #[test]
    fn audit_group_strings() {
        let g: AuditGroup = "female/dark".parse().unwrap();
        assert_eq!(g.to_string(), "female/dark");
        assert_eq!(serde_json::to_string(&AuditGroup::Class(Nonbinary)).unwrap(), "\"nonbinary\"");
    }
}
