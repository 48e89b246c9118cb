//! Manifest records and the comma-delimited manifest file format.
//!
//! The file has the fixed header `image_path,identity_id,gender,fitzpatrick,split`.
//! Relative image paths are resolved against the manifest's directory on load
//! and written back relative to the target directory on save. Record origin is
//! in-memory metadata: a path that occurs more than once in a file is loaded as
//! one original plus numbered duplicates.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::labels::{FitzpatrickType, GenderLabel, GroupKey, Origin, SkinTone, Split};
use crate::error::{Error, Result};

pub const MANIFEST_HEADER: [&str; 5] = ["image_path", "identity_id", "gender", "fitzpatrick", "split"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub image_path: PathBuf,
    pub identity_id: String,
    pub gender: GenderLabel,
    pub fitzpatrick: Option<FitzpatrickType>,
    pub tone: SkinTone,
    pub split: Split,
    pub origin: Origin,
    /// Distinguishes synthetic copies that share an `image_path`.
    pub copy: u32,
}

impl ImageRecord {
    pub fn new(
        image_path: impl Into<PathBuf>,
        identity_id: impl Into<String>,
        gender: GenderLabel,
        fitzpatrick: Option<FitzpatrickType>,
    ) -> Result<Self> {
        let rec = ImageRecord {
            image_path: image_path.into(),
            identity_id: identity_id.into(),
            gender,
            tone: fitzpatrick.map_or(SkinTone::Unknown, FitzpatrickType::tone),
            fitzpatrick,
            split: Split::Unassigned,
            origin: Origin::Original,
            copy: 0,
        };
        rec.validate()?;
        Ok(rec)
    }

    pub fn with_split(mut self, split: Split) -> Self {
        self.split = split;
        self
    }

    pub fn group(&self) -> GroupKey {
        GroupKey::new(self.gender, self.tone)
    }

    pub fn validate(&self) -> Result<()> {
        if self.image_path.as_os_str().is_empty() {
            return Err(Error::validation("image_path is empty"));
        }
        if self.identity_id.is_empty() {
            return Err(Error::validation("identity_id is empty"));
        }
        match self.fitzpatrick {
            Some(f) if f.tone() != self.tone => Err(Error::validation(format!(
                "{}: tone {} disagrees with Fitzpatrick type {}",
                self.image_path.display(),
                self.tone,
                f.value()
            ))),
            None if self.tone != SkinTone::Unknown => Err(Error::validation(format!(
                "{}: tone {} without a Fitzpatrick annotation",
                self.image_path.display(),
                self.tone
            ))),
            _ => Ok(()),
        }
    }

    /// Identity of this record inside a manifest.
    pub fn key(&self) -> (&Path, u32) {
        (&self.image_path, self.copy)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub records: Vec<ImageRecord>,
}

impl DatasetManifest {
    pub fn new(name: impl Into<String>, records: Vec<ImageRecord>) -> Self {
        DatasetManifest {
            name: name.into(),
            records,
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Records of one split, as a new manifest.
    pub fn subset(&self, split: Split) -> DatasetManifest {
        DatasetManifest {
            name: format!("{}-{}", self.name, split_name(split)),
            records: self.records.iter().filter(|r| r.split == split).cloned().collect(),
        }
    }

    pub fn count_where(&self, mut pred: impl FnMut(&ImageRecord) -> bool) -> usize {
        self.records.iter().filter(|r| pred(r)).count()
    }

    pub fn group_counts(&self) -> BTreeMap<GroupKey, usize> {
        let mut counts = BTreeMap::new();
        for r in &self.records {
            *counts.entry(r.group()).or_insert(0) += 1;
        }
        counts
    }

    pub fn gender_counts(&self) -> BTreeMap<GenderLabel, usize> {
        let mut counts = BTreeMap::new();
        for r in &self.records {
            *counts.entry(r.gender).or_insert(0) += 1;
        }
        counts
    }

    /// Checks every record and the key-uniqueness invariant.
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::with_capacity(self.records.len());
        for (i, r) in self.records.iter().enumerate() {
            r.validate()
                .map_err(|e| Error::validation(format!("record {i}: {e}")))?;
            if !seen.insert(r.key()) {
                return Err(Error::validation(format!(
                    "record {i}: duplicate key ({}, copy {})",
                    r.image_path.display(),
                    r.copy
                )));
            }
        }
        Ok(())
    }
}

fn split_name(split: Split) -> &'static str {
    match split {
        Split::Unassigned => "unassigned",
        s => s.as_str(),
    }
}

fn parse_err(path: &Path, row: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        row,
        message: message.into(),
    }
}

/// Reads a manifest. `row` in parse errors is the 1-based line number.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "manifest".to_string());
    parse_manifest(&text, path, &base, name)
}

pub(crate) fn parse_manifest(
    text: &str,
    path: &Path,
    base: &Path,
    name: String,
) -> Result<DatasetManifest> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(text.as_bytes());

    if text.trim().is_empty() {
        return Err(parse_err(path, 1, "missing header row"));
    }
    let header = reader
        .headers()
        .map_err(|e| parse_err(path, 1, e.to_string()))?
        .clone();
    for (i, col) in MANIFEST_HEADER.iter().enumerate() {
        match header.get(i) {
            Some(h) if h.trim() == *col => {}
            Some(h) if header.iter().any(|x| x.trim() == *col) => {
                return Err(parse_err(
                    path,
                    1,
                    format!("column {col:?} out of place (found {h:?} at position {})", i + 1),
                ))
            }
            _ => return Err(parse_err(path, 1, format!("missing required column {col:?}"))),
        }
    }
    if header.len() != MANIFEST_HEADER.len() {
        return Err(parse_err(
            path,
            1,
            format!("expected {} columns, found {}", MANIFEST_HEADER.len(), header.len()),
        ));
    }

    let mut records = Vec::new();
    let mut occurrences: HashMap<PathBuf, u32> = HashMap::new();
    for (i, row) in reader.records().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| parse_err(path, line, e.to_string()))?;
        let field = |j: usize| row.get(j).unwrap_or("").trim();

        let raw_path = field(0);
        if raw_path.is_empty() {
            return Err(parse_err(path, line, "image_path is empty"));
        }
        let identity = field(1);
        if identity.is_empty() {
            return Err(parse_err(path, line, "identity_id is empty"));
        }
        let gender: GenderLabel = field(2)
            .parse()
            .map_err(|e: Error| parse_err(path, line, e.to_string()))?;
        let fitzpatrick = match field(3) {
            "" => None,
            s => {
                let v: u8 = s.parse().map_err(|_| {
                    parse_err(path, line, format!("malformed Fitzpatrick value {s:?}"))
                })?;
                Some(
                    FitzpatrickType::new(v)
                        .map_err(|e| parse_err(path, line, e.to_string()))?,
                )
            }
        };
        let split: Split = field(4)
            .parse()
            .map_err(|e: Error| parse_err(path, line, e.to_string()))?;

        let rel = PathBuf::from(raw_path);
        let image_path = if rel.is_absolute() { rel } else { base.join(rel) };
        let counter = occurrences.entry(image_path.clone()).or_insert(0);
        let copy = *counter;
        *counter += 1;

        let mut rec = ImageRecord::new(image_path, identity, gender, fitzpatrick)
            .map_err(|e| parse_err(path, line, e.to_string()))?;
        rec.split = split;
        if copy > 0 {
            rec.origin = Origin::Duplicated;
            rec.copy = copy;
        }
        records.push(rec);
    }
    Ok(DatasetManifest { name, records })
}

/// Writes a manifest; image paths under the target directory are stored relative to it.
pub fn save_manifest(manifest: &DatasetManifest, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let text = render_manifest(manifest, &base)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub(crate) fn render_manifest(manifest: &DatasetManifest, base: &Path) -> Result<String> {
    let mut writer = csv::WriterBuilder::new().from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::Serde(e.to_string());
    writer.write_record(MANIFEST_HEADER).map_err(csv_err)?;
    for r in &manifest.records {
        let p = match r.image_path.strip_prefix(base) {
            Ok(rel) if !base.as_os_str().is_empty() => rel,
            _ => r.image_path.as_path(),
        };
        let fitz = r.fitzpatrick.map(|f| f.value().to_string()).unwrap_or_default();
        writer
            .write_record([
                p.to_string_lossy().as_ref(),
                r.identity_id.as_str(),
                r.gender.as_str(),
                fitz.as_str(),
                r.split.as_str(),
            ])
            .map_err(csv_err)?;
    }
    let bytes = writer.into_inner().map_err(|e| Error::Serde(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Serde(e.to_string()))
}

/// Fraction of records in each (gender, tone) group present in the manifest.
pub fn group_distribution(manifest: &DatasetManifest) -> Result<BTreeMap<GroupKey, f64>> {
    if manifest.is_empty() {
        return Err(Error::Undefined(
            "group distribution of an empty manifest".to_string(),
        ));
    }
    let n = manifest.len() as f64;
    Ok(manifest
        .group_counts()
        .into_iter()
        .map(|(k, c)| (k, c as f64 / n))
        .collect())
}
