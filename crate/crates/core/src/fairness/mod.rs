//! Per-class accuracy audits, the selection rate and the 80% rule.

mod grid;
mod metrics;
mod report;

pub use grid::{grid_shape, misclassified_grid, read_grid, GridLayout, TileAnnotation, THUMB_SIDE, TILE_HEIGHT, TILE_WIDTH};
pub use metrics::{
    disparate_impact, per_class_accuracy, per_group_accuracy, selection_rate, AuditGroup, GroupAccuracy,
    DEFAULT_THRESHOLD,
};
pub use report::{
    build_report, evaluate, load_report, parse_report_csv, report_table, save_report, Classifier, EvaluateOptions,
    EvaluationReport, GroupAudit, Misclassified, ReportTable, TableRow, REPORT_SCHEMA_VERSION, TABLE_HEADER,
};
