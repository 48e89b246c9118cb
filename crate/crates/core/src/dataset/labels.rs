//! Label vocabulary shared by every stage of the pipeline.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Gender class. The vocabulary is closed; all non-binary identities
/// (agender, genderfluid, genderqueer, ...) are folded into `Nonbinary`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GenderLabel {
    Male,
    Female,
    Nonbinary,
}

impl GenderLabel {
    /// Canonical column order used by every model and report.
    pub const ALL: [GenderLabel; 3] = [GenderLabel::Male, GenderLabel::Female, GenderLabel::Nonbinary];

    pub fn as_str(self) -> &'static str {
        match self {
            GenderLabel::Male => "male",
            GenderLabel::Female => "female",
            GenderLabel::Nonbinary => "nonbinary",
        }
    }

    /// `[male, female, nonbinary]` truncated to `n_classes`.
    pub fn class_order(n_classes: usize) -> Result<Vec<GenderLabel>> {
        if !(1..=3).contains(&n_classes) {
            return Err(Error::validation(format!(
                "n_classes must be between 1 and 3, got {n_classes}"
            )));
        }
        Ok(Self::ALL[..n_classes].to_vec())
    }
}

impl fmt::Display for GenderLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for GenderLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "male" => Ok(GenderLabel::Male),
            "female" => Ok(GenderLabel::Female),
            "nonbinary" => Ok(GenderLabel::Nonbinary),
            other => Err(Error::validation(format!(
                "unknown gender token {other:?} (expected male, female or nonbinary)"
            ))),
        }
    }
}

/// Fitzpatrick skin phototype, 1 through 6.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct FitzpatrickType(u8);

impl FitzpatrickType {
    pub fn new(value: u8) -> Result<Self> {
        if (1..=6).contains(&value) {
            Ok(FitzpatrickType(value))
        } else {
            Err(Error::validation(format!(
                "Fitzpatrick type must be in 1..=6, got {value}"
            )))
        }
    }

    pub fn value(self) -> u8 {
        self.0
    }

    pub fn tone(self) -> SkinTone {
        match self.0 {
            1 | 2 => SkinTone::Light,
            3 | 4 => SkinTone::Brown,
            _ => SkinTone::Dark,
        }
    }
}

impl TryFrom<u8> for FitzpatrickType {
    type Error = Error;

    fn try_from(value: u8) -> Result<Self> {
        FitzpatrickType::new(value)
    }
}

impl From<FitzpatrickType> for u8 {
    fn from(t: FitzpatrickType) -> u8 {
        t.0
    }
}

/// Buckets a raw Fitzpatrick value: 1-2 light, 3-4 brown, 5-6 dark.
pub fn fitzpatrick_to_tone(value: i64) -> Result<SkinTone> {
    let v = u8::try_from(value).map_err(|_| {
        Error::validation(format!("Fitzpatrick type must be in 1..=6, got {value}"))
    })?;
    Ok(FitzpatrickType::new(v)?.tone())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SkinTone {
    Light,
    Brown,
    Dark,
    /// No Fitzpatrick annotation available.
    Unknown,
}

impl SkinTone {
    pub const ALL: [SkinTone; 4] = [SkinTone::Light, SkinTone::Brown, SkinTone::Dark, SkinTone::Unknown];

    pub fn as_str(self) -> &'static str {
        match self {
            SkinTone::Light => "light",
            SkinTone::Brown => "brown",
            SkinTone::Dark => "dark",
            SkinTone::Unknown => "unknown",
        }
    }
}

impl fmt::Display for SkinTone {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SkinTone {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "light" => Ok(SkinTone::Light),
            "brown" => Ok(SkinTone::Brown),
            "dark" => Ok(SkinTone::Dark),
            "unknown" => Ok(SkinTone::Unknown),
            other => Err(Error::validation(format!("unknown skin tone {other:?}"))),
        }
    }
}

/// Audit group: gender crossed with skin tone.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GroupKey {
    pub gender: GenderLabel,
    pub tone: SkinTone,
}

impl GroupKey {
    pub fn new(gender: GenderLabel, tone: SkinTone) -> Self {
        GroupKey { gender, tone }
    }

    /// Every possible group, gender-major.
    pub fn all() -> impl Iterator<Item = GroupKey> {
        GenderLabel::ALL
            .into_iter()
            .flat_map(|g| SkinTone::ALL.into_iter().map(move |t| GroupKey::new(g, t)))
    }
}

impl fmt::Display for GroupKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.gender, self.tone)
    }
}

impl FromStr for GroupKey {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (g, t) = s
            .split_once('/')
            .ok_or_else(|| Error::validation(format!("group key {s:?} is not gender/tone")))?;
        Ok(GroupKey::new(g.trim().parse()?, t.trim().parse()?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
    #[default]
    Unassigned,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
            Split::Unassigned => "",
        }
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            "" | "unassigned" => Ok(Split::Unassigned),
            other => Err(Error::validation(format!("unknown split {other:?}"))),
        }
    }
}

/// How a record came to exist.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    #[default]
    Original,
    Augmented,
    Duplicated,
}
