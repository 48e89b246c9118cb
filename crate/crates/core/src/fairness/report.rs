//! Model audits and their tabular and structured renderings.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::metrics::{disparate_impact, per_class_accuracy, per_group_accuracy, selection_rate, GroupAccuracy, DEFAULT_THRESHOLD};
use crate::dataset::{load_image, DatasetManifest, GenderLabel, ImageRecord, ImageTensor};
use crate::error::{Error, Result};
use crate::nets::TrainedModel;
use crate::util::round_half_up;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Anything that maps images to gender labels.
pub trait Classifier {
    fn class_order(&self) -> &[GenderLabel];
    fn input_side(&self) -> usize;
    fn predict(&self, images: &[ImageTensor]) -> Result<Vec<GenderLabel>>;
}

impl Classifier for TrainedModel {
    fn class_order(&self) -> &[GenderLabel] {
        &self.class_order
    }

    fn input_side(&self) -> usize {
        self.spec().input_side
    }

    fn predict(&self, images: &[ImageTensor]) -> Result<Vec<GenderLabel>> {
        TrainedModel::predict(self, images)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Misclassified {
    pub record: ImageRecord,
    pub predicted: GenderLabel,
}

/// Selection rate over gender × tone groups.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupAudit {
    pub groups: Vec<GroupAccuracy>,
    pub selection_rate: f64,
    pub disparate_impact: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub schema_version: u32,
    pub model_name: String,
    pub total: usize,
    pub overall_accuracy: f64,
    pub wrong_count: usize,
    pub per_class: Vec<GroupAccuracy>,
    pub selection_rate: f64,
    pub threshold: f64,
    pub disparate_impact: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intersectional: Option<GroupAudit>,
    pub misclassified: Vec<Misclassified>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluateOptions {
    pub threshold: f64,
    /// Also audit gender × tone groups.
    pub intersectional: bool,
    /// Images decoded per prediction batch.
    pub batch: usize,
}

impl Default for EvaluateOptions {
    fn default() -> Self {
        EvaluateOptions { threshold: DEFAULT_THRESHOLD, intersectional: false, batch: 64 }
    }
}

impl EvaluationReport {
    pub fn accuracy_of(&self, class: GenderLabel) -> Option<f64> {
        self.per_class
            .iter()
            .find(|g| g.group == super::AuditGroup::Class(class))
            .map(|g| g.accuracy)
    }

    /// Checks the internal consistency of counts and rates.
    pub fn validate(&self) -> Result<()> {
        let correct: usize = self.per_class.iter().map(|g| g.correct).sum();
        let total: usize = self.per_class.iter().map(|g| g.total).sum();
        if total != self.total || correct + self.wrong_count != self.total || self.misclassified.len() != self.wrong_count {
            return Err(Error::validation(format!("report {}: counts are inconsistent", self.model_name)));
        }
        Ok(())
    }
}

/// Builds the audit from per-record predictions.
pub fn build_report(
    model_name: &str,
    records: &[ImageRecord],
    preds: &[GenderLabel],
    classes: &[GenderLabel],
    opts: &EvaluateOptions,
) -> Result<EvaluationReport> {
    if records.is_empty() {
        return Err(Error::validation("evaluation needs a nonempty test set"));
    }
    if records.len() != preds.len() {
        return Err(Error::validation(format!("{} predictions for {} records", preds.len(), records.len())));
    }
    let truths: Vec<GenderLabel> = records.iter().map(|r| r.gender).collect();
    // Audit every class the model knows plus any the test set contains.
    let audited: Vec<GenderLabel> = GenderLabel::ALL
        .into_iter()
        .filter(|c| classes.contains(c) || truths.contains(c))
        .collect();
    for c in &audited {
        if !classes.contains(c) && truths.contains(c) {
            log::warn!("model {model_name} cannot output {c}; those test images are necessarily misclassified");
        }
    }
    let per_class = per_class_accuracy(preds, &truths, &audited)?;
    let rate = selection_rate(&per_class.iter().map(|g| g.accuracy).collect::<Vec<_>>())
        .map_err(|e| Error::Undefined(format!("model {model_name}: {e}")))?;
    let misclassified: Vec<Misclassified> = records
        .iter()
        .zip(preds)
        .filter(|(r, p)| r.gender != **p)
        .map(|(r, p)| Misclassified { record: r.clone(), predicted: *p })
        .collect();
    let intersectional = if opts.intersectional {
        let groups = per_group_accuracy(preds, &records.iter().map(ImageRecord::group).collect::<Vec<_>>())?;
        let r = selection_rate(&groups.iter().map(|g| g.accuracy).collect::<Vec<_>>())?;
        Some(GroupAudit { groups, selection_rate: r, disparate_impact: disparate_impact(r, opts.threshold)? })
    } else {
        None
    };
    let total = records.len();
    let wrong_count = misclassified.len();
    let report = EvaluationReport {
        schema_version: REPORT_SCHEMA_VERSION,
        model_name: model_name.to_owned(),
        total,
        overall_accuracy: (total - wrong_count) as f64 / total as f64,
        wrong_count,
        per_class,
        selection_rate: rate,
        threshold: opts.threshold,
        disparate_impact: disparate_impact(rate, opts.threshold)?,
        intersectional,
        misclassified,
    };
    report.validate()?;
    Ok(report)
}

/// Runs `model` over the test manifest and audits the predictions.
pub fn evaluate(model: &dyn Classifier, test: &DatasetManifest, model_name: &str, opts: &EvaluateOptions) -> Result<EvaluationReport> {
    if test.is_empty() {
        return Err(Error::validation("evaluation needs a nonempty test set"));
    }
    let side = model.input_side();
    let mut preds = Vec::with_capacity(test.len());
    for chunk in test.records.chunks(opts.batch.max(1)) {
        let images = chunk.iter().map(|r| load_image(r, side)).collect::<Result<Vec<_>>>()?;
        let p = model.predict(&images).map_err(|e| match e {
            Error::Shape { expected, actual } => Error::Shape { expected, actual: format!("{actual} (model {model_name})") },
            other => Error::Training(format!("model {model_name}: prediction failed: {other}")),
        })?;
        preds.extend(p);
    }
    build_report(model_name, &test.records, &preds, model.class_order(), opts)
}

pub fn save_report(report: &EvaluationReport, path: &Path) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(report)?).map_err(|e| Error::io(path, e))
}

pub fn load_report(path: &Path) -> Result<EvaluationReport> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let report: EvaluationReport = serde_json::from_str(&text)?;
    if report.schema_version != REPORT_SCHEMA_VERSION {
        return Err(Error::Schema(format!(
            "{}: report schema_version {} is not supported",
            path.display(),
            report.schema_version
        )));
    }
    report.validate()?;
    Ok(report)
}

pub const TABLE_HEADER: [&str; 7] = ["Model", "Wrong Images", "Overall", "Male", "Female", "Non-binary", "Selection Rate"];

/// One parsed table row; rates are percentages.
#[derive(Debug, Clone, PartialEq)]
pub struct TableRow {
    pub model: String,
    pub wrong_images: usize,
    pub overall: f64,
    pub male: Option<f64>,
    pub female: Option<f64>,
    pub nonbinary: Option<f64>,
    pub selection_rate: f64,
}

impl TableRow {
    pub fn from_report(r: &EvaluationReport) -> Self {
        let pct = |v: f64| round_half_up(v * 100.0, 2);
        TableRow {
            model: r.model_name.clone(),
            wrong_images: r.wrong_count,
            overall: pct(r.overall_accuracy),
            male: r.accuracy_of(GenderLabel::Male).map(pct),
            female: r.accuracy_of(GenderLabel::Female).map(pct),
            nonbinary: r.accuracy_of(GenderLabel::Nonbinary).map(pct),
            selection_rate: pct(r.selection_rate),
        }
    }

    fn cells(&self, missing: &str) -> Vec<String> {
        let f = |v: f64| format!("{v:.2}");
        let o = |v: Option<f64>| v.map_or(missing.to_owned(), f);
        vec![
            self.model.clone(),
            self.wrong_images.to_string(),
            f(self.overall),
            o(self.male),
            o(self.female),
            o(self.nonbinary),
            f(self.selection_rate),
        ]
    }
}

/// The same table as delimited text and as an aligned display table.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportTable {
    pub csv: String,
    pub text: String,
}

/// Percentages are rounded half-up to two decimals; a class absent from a
/// test set is left blank.
pub fn report_table(reports: &[EvaluationReport]) -> Result<ReportTable> {
    if reports.is_empty() {
        return Err(Error::validation("report table needs at least one report"));
    }
    let rows: Vec<TableRow> = reports.iter().map(TableRow::from_report).collect();
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::Serde(e.to_string());
    w.write_record(TABLE_HEADER).map_err(csv_err)?;
    for r in &rows {
        w.write_record(r.cells("")).map_err(csv_err)?;
    }
    let csv = String::from_utf8(w.into_inner().map_err(|e| Error::Serde(e.to_string()))?)
        .map_err(|e| Error::Serde(e.to_string()))?;

    let body: Vec<Vec<String>> = rows.iter().map(|r| r.cells("-")).collect();
    let widths: Vec<usize> = (0..TABLE_HEADER.len())
        .map(|i| body.iter().map(|r| r[i].chars().count()).chain([TABLE_HEADER[i].len()]).max().unwrap_or(0))
        .collect();
    let line = |cells: Vec<String>| -> String {
        let padded: Vec<String> = cells
            .iter()
            .enumerate()
            .map(|(i, c)| if i == 0 { format!("{c:<w$}", w = widths[i]) } else { format!("{c:>w$}", w = widths[i]) })
            .collect();
        format!("{}\n", padded.join("  ").trim_end())
    };
    let mut text = line(TABLE_HEADER.iter().map(|s| s.to_string()).collect());
    text.push_str(&line(widths.iter().map(|&w| "-".repeat(w)).collect()));
    for r in body {
        text.push_str(&line(r));
    }
    Ok(ReportTable { csv, text })
}

/// Parses the delimited form of [`report_table`].
pub fn parse_report_csv(text: &str) -> Result<Vec<TableRow>> {
    let mut rd = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let header = rd.headers().map_err(|e| Error::Serde(e.to_string()))?.clone();
    if header.iter().collect::<Vec<_>>() != TABLE_HEADER {
        return Err(Error::Schema(format!("report table header must be {TABLE_HEADER:?}")));
    }
    let mut rows = Vec::new();
    for (i, rec) in rd.records().enumerate() {
        let rec = rec.map_err(|e| Error::Serde(e.to_string()))?;
        let bad = |c: &str| Error::Schema(format!("report table row {}: bad value {c:?}", i + 1));
        let num = |c: &str| c.parse::<f64>().map_err(|_| bad(c));
        let opt = |c: &str| if c.is_empty() { Ok(None) } else { num(c).map(Some) };
        rows.push(TableRow {
            model: rec[0].to_owned(),
            wrong_images: rec[1].parse().map_err(|_| bad(&rec[1]))?,
            overall: num(&rec[2])?,
            male: opt(&rec[3])?,
            female: opt(&rec[4])?,
            nonbinary: opt(&rec[5])?,
            selection_rate: num(&rec[6])?,
        });
    }
    Ok(rows)
}
