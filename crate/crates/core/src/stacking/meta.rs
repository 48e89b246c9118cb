//! Meta-feature matrices built from base-model outputs.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::GenderLabel;
use crate::error::{Error, Result};

/// Per-row block sums must be within this of 1.
pub const ROW_SUM_TOLERANCE: f64 = 1e-6;

/// One base model's class probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelOutput {
    pub model_id: String,
    pub class_order: Vec<GenderLabel>,
    /// N × C.
    pub probabilities: Vec<Vec<f64>>,
}

impl ModelOutput {
    pub fn from_f32(model_id: impl Into<String>, class_order: Vec<GenderLabel>, rows: &[Vec<f32>]) -> Self {
        ModelOutput {
            model_id: model_id.into(),
            class_order,
            probabilities: rows.iter().map(|r| r.iter().map(|&v| v as f64).collect()).collect(),
        }
    }

    /// Argmax labels, first class on ties.
    pub fn predictions(&self) -> ModelPredictions {
        let labels = self
            .probabilities
            .iter()
            .map(|row| {
                let mut best = 0;
                for (i, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = i;
                    }
                }
                self.class_order[best]
            })
            .collect();
        ModelPredictions {
            model_id: self.model_id.clone(),
            class_order: self.class_order.clone(),
            labels,
        }
    }
}

/// One base model's hard predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelPredictions {
    pub model_id: String,
    pub class_order: Vec<GenderLabel>,
    pub labels: Vec<GenderLabel>,
}

/// N × (K·C) stacked probabilities; column `j·C + c` is model `j`, class `c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaFeaturesProb {
    pub matrix: Vec<Vec<f64>>,
    pub model_order: Vec<String>,
    pub class_order: Vec<GenderLabel>,
}

/// N × K stacked class indices into `class_order`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaFeaturesPred {
    pub matrix: Vec<Vec<usize>>,
    pub model_order: Vec<String>,
    pub class_order: Vec<GenderLabel>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum MetaFeatures {
    Prob(MetaFeaturesProb),
    Pred(MetaFeaturesPred),
}

fn check_unique(ids: &[String]) -> Result<()> {
    for (i, id) in ids.iter().enumerate() {
        if id.is_empty() || id.contains([',', '/', '\n', ';', '=']) {
            return Err(Error::Schema(format!("model id {id:?} must be nonempty without , / ; =")));
        }
        if ids[..i].contains(id) {
            return Err(Error::Schema(format!("model id {id:?} appears twice")));
        }
    }
    Ok(())
}

fn check_block(row: &[f64], r: usize, model: &str) -> Result<()> {
    if row.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::Schema(format!("model {model}, row {r}: probabilities must be finite and nonnegative")));
    }
    let s: f64 = row.iter().sum();
    if (s - 1.0).abs() > ROW_SUM_TOLERANCE {
        return Err(Error::Schema(format!("model {model}, row {r}: probabilities sum to {s}, not 1")));
    }
    Ok(())
}

impl MetaFeaturesProb {
    pub fn n_rows(&self) -> usize {
        self.matrix.len()
    }

    pub fn validate(&self) -> Result<()> {
        check_unique(&self.model_order)?;
        let c = self.class_order.len();
        let width = self.model_order.len() * c;
        if c < 2 || self.model_order.is_empty() {
            return Err(Error::Schema("need at least one model and two classes".into()));
        }
        for (r, row) in self.matrix.iter().enumerate() {
            if row.len() != width {
                return Err(Error::Schema(format!("row {r} has {} columns, expected {width}", row.len())));
            }
            for (j, block) in row.chunks(c).enumerate() {
                check_block(block, r, &self.model_order[j])?;
            }
        }
        Ok(())
    }

    pub fn column_names(&self) -> Vec<String> {
        self.model_order
            .iter()
            .flat_map(|m| self.class_order.iter().map(move |c| format!("{m}/{c}")))
            .collect()
    }
}

impl MetaFeaturesPred {
    pub fn n_rows(&self) -> usize {
        self.matrix.len()
    }

    pub fn validate(&self) -> Result<()> {
        check_unique(&self.model_order)?;
        let (k, c) = (self.model_order.len(), self.class_order.len());
        if c < 2 || k == 0 {
            return Err(Error::Schema("need at least one model and two classes".into()));
        }
        for (r, row) in self.matrix.iter().enumerate() {
            if row.len() != k {
                return Err(Error::Schema(format!("row {r} has {} columns, expected {k}", row.len())));
            }
            if let Some(v) = row.iter().find(|&&v| v >= c) {
                return Err(Error::Schema(format!("row {r}: class index {v} is outside [0, {c})")));
            }
        }
        Ok(())
    }
}

impl MetaFeatures {
    pub fn n_rows(&self) -> usize {
        match self {
            MetaFeatures::Prob(m) => m.n_rows(),
            MetaFeatures::Pred(m) => m.n_rows(),
        }
    }

    pub fn model_order(&self) -> &[String] {
        match self {
            MetaFeatures::Prob(m) => &m.model_order,
            MetaFeatures::Pred(m) => &m.model_order,
        }
    }

    pub fn class_order(&self) -> &[GenderLabel] {
        match self {
            MetaFeatures::Prob(m) => &m.class_order,
            MetaFeatures::Pred(m) => &m.class_order,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            MetaFeatures::Prob(_) => "prob",
            MetaFeatures::Pred(_) => "pred",
        }
    }

    /// Appends `other`'s rows; schemas must match.
    pub fn concat(&self, other: &MetaFeatures) -> Result<MetaFeatures> {
        match (self, other) {
            (MetaFeatures::Prob(a), MetaFeatures::Prob(b)) if a.model_order == b.model_order && a.class_order == b.class_order => {
                let mut m = a.clone();
                m.matrix.extend(b.matrix.iter().cloned());
                Ok(MetaFeatures::Prob(m))
            }
            (MetaFeatures::Pred(a), MetaFeatures::Pred(b)) if a.model_order == b.model_order && a.class_order == b.class_order => {
                let mut m = a.clone();
                m.matrix.extend(b.matrix.iter().cloned());
                Ok(MetaFeatures::Pred(m))
            }
            _ => Err(Error::Schema("cannot concatenate meta-features with different schemas".into())),
        }
    }
}

fn common_shape<'a>(
    ids: impl Iterator<Item = (&'a str, &'a [GenderLabel], usize)>,
) -> Result<(Vec<String>, Vec<GenderLabel>, usize)> {
    let mut order = Vec::new();
    let mut classes: Option<(Vec<GenderLabel>, usize)> = None;
    for (id, cls, n) in ids {
        match &classes {
            None => classes = Some((cls.to_vec(), n)),
            Some((c0, n0)) => {
                if c0.as_slice() != cls {
                    return Err(Error::Schema(format!(
                        "model {id} has class order {cls:?}, expected {c0:?}"
                    )));
                }
                if *n0 != n {
                    return Err(Error::Schema(format!("model {id} has {n} rows, expected {n0}")));
                }
            }
        }
        order.push(id.to_owned());
    }
    let (classes, n) = classes.ok_or_else(|| Error::Schema("no model outputs to stack".into()))?;
    check_unique(&order)?;
    Ok((order, classes, n))
}

/// Horizontally concatenates K probability matrices.
pub fn stack_probabilities(outputs: &[ModelOutput]) -> Result<MetaFeaturesProb> {
    let (model_order, class_order, n) = common_shape(
        outputs.iter().map(|o| (o.model_id.as_str(), o.class_order.as_slice(), o.probabilities.len())),
    )?;
    let c = class_order.len();
    let mut matrix = vec![Vec::with_capacity(outputs.len() * c); n];
    for o in outputs {
        for (r, row) in o.probabilities.iter().enumerate() {
            if row.len() != c {
                return Err(Error::Schema(format!(
                    "model {}, row {r}: {} columns, expected {c}",
                    o.model_id,
                    row.len()
                )));
            }
            check_block(row, r, &o.model_id)?;
            matrix[r].extend_from_slice(row);
        }
    }
    Ok(MetaFeaturesProb { matrix, model_order, class_order })
}

/// Horizontally concatenates K label vectors as class indices.
pub fn stack_predictions(outputs: &[ModelPredictions]) -> Result<MetaFeaturesPred> {
    let (model_order, class_order, n) =
        common_shape(outputs.iter().map(|o| (o.model_id.as_str(), o.class_order.as_slice(), o.labels.len())))?;
    let mut matrix = vec![Vec::with_capacity(outputs.len()); n];
    for o in outputs {
        for (r, label) in o.labels.iter().enumerate() {
            let idx = class_order.iter().position(|c| c == label).ok_or_else(|| {
                Error::Schema(format!("model {}, row {r}: label {label} not in {class_order:?}", o.model_id))
            })?;
            matrix[r].push(idx);
        }
    }
    Ok(MetaFeaturesPred { matrix, model_order, class_order })
}

const LABEL_COLUMN: &str = "label";

fn join<T: std::fmt::Display>(items: &[T]) -> String {
    items.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(",")
}

/// Delimited text: a `# kind=…;models=…;classes=…` line, a header of column
/// names and one row per sample, with an optional trailing `label` column.
pub fn render_meta_csv(meta: &MetaFeatures, labels: Option<&[GenderLabel]>) -> Result<String> {
    if let Some(l) = labels {
        if l.len() != meta.n_rows() {
            return Err(Error::Schema(format!("{} labels for {} rows", l.len(), meta.n_rows())));
        }
    }
    let mut out = format!(
        "# kind={};models={};classes={}\n",
        meta.kind(),
        meta.model_order().join(","),
        join(meta.class_order())
    );
    let mut header = match meta {
        MetaFeatures::Prob(m) => m.column_names(),
        MetaFeatures::Pred(m) => m.model_order.clone(),
    };
    if labels.is_some() {
        header.push(LABEL_COLUMN.into());
    }
    let _ = writeln!(out, "{}", header.join(","));
    for r in 0..meta.n_rows() {
        let mut cells: Vec<String> = match meta {
            MetaFeatures::Prob(m) => m.matrix[r].iter().map(|v| v.to_string()).collect(),
            MetaFeatures::Pred(m) => m.matrix[r].iter().map(|v| v.to_string()).collect(),
        };
        if let Some(l) = labels {
            cells.push(l[r].to_string());
        }
        let _ = writeln!(out, "{}", cells.join(","));
    }
    Ok(out)
}

pub fn parse_meta_csv(text: &str) -> Result<(MetaFeatures, Option<Vec<GenderLabel>>)> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let bad = |line: usize, m: String| Error::Schema(format!("meta-features line {}: {m}", line + 1));
    let (_, first) = lines.next().ok_or_else(|| bad(0, "empty file".into()))?;
    let desc = first
        .strip_prefix('#')
        .ok_or_else(|| bad(0, "missing `# kind=…;models=…;classes=…` line".into()))?;
    let (mut kind, mut models, mut classes) = (None, None, None);
    for part in desc.split(';') {
        let (k, v) = part.split_once('=').ok_or_else(|| bad(0, format!("bad field {part:?}")))?;
        let list = || v.trim().split(',').map(|s| s.trim().to_owned()).collect::<Vec<_>>();
        match k.trim() {
            "kind" => kind = Some(v.trim().to_owned()),
            "models" => models = Some(list()),
            "classes" => {
                classes = Some(list().iter().map(|s| s.parse::<GenderLabel>()).collect::<Result<Vec<_>>>()?)
            }
            other => return Err(bad(0, format!("unknown field {other:?}"))),
        }
    }
    let (kind, model_order, class_order) = match (kind, models, classes) {
        (Some(k), Some(m), Some(c)) => (k, m, c),
        _ => return Err(bad(0, "kind, models and classes are all required".into())),
    };
    let (_, header) = lines.next().ok_or_else(|| bad(1, "missing column header".into()))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    let has_label = cols.last() == Some(&LABEL_COLUMN);
    let width = cols.len() - usize::from(has_label);
    let mut labels = Vec::new();
    let mut prob_rows = Vec::new();
    let mut pred_rows = Vec::new();
    for (i, line) in lines {
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        if cells.len() != cols.len() {
            return Err(bad(i, format!("{} cells, header has {}", cells.len(), cols.len())));
        }
        if has_label {
            labels.push(cells[width].parse::<GenderLabel>().map_err(|e| bad(i, e.to_string()))?);
        }
        match kind.as_str() {
            "prob" => prob_rows.push(
                cells[..width]
                    .iter()
                    .map(|c| c.parse::<f64>().map_err(|_| bad(i, format!("bad number {c:?}"))))
                    .collect::<Result<Vec<_>>>()?,
            ),
            "pred" => pred_rows.push(
                cells[..width]
                    .iter()
                    .map(|c| c.parse::<usize>().map_err(|_| bad(i, format!("bad class index {c:?}"))))
                    .collect::<Result<Vec<_>>>()?,
            ),
            other => return Err(bad(0, format!("unknown kind {other:?}"))),
        }
    }
    let meta = match kind.as_str() {
        "prob" => {
            let m = MetaFeaturesProb { matrix: prob_rows, model_order, class_order };
            if m.column_names() != cols[..width] {
                return Err(Error::Schema("column header does not match models/classes".into()));
            }
            m.validate()?;
            MetaFeatures::Prob(m)
        }
        _ => {
            let m = MetaFeaturesPred { matrix: pred_rows, model_order, class_order };
            if m.model_order != cols[..width] {
                return Err(Error::Schema("column header does not match models".into()));
            }
            m.validate()?;
            MetaFeatures::Pred(m)
        }
    };
    Ok((meta, has_label.then_some(labels)))
}

pub fn save_meta_csv(path: &Path, meta: &MetaFeatures, labels: Option<&[GenderLabel]>) -> Result<()> {
    std::fs::write(path, render_meta_csv(meta, labels)?).map_err(|e| Error::io(path, e))
}

pub fn load_meta_csv(path: &Path) -> Result<(MetaFeatures, Option<Vec<GenderLabel>>)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_meta_csv(&text)
}
