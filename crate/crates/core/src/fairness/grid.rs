//! Contact sheet of misclassified images annotated `truth>predicted`.
//!
//! Besides the drawn captions, the PNG carries tEXt chunks `columns`, `rows`
//! and `tiles` (JSON: one `{image_path, truth, predicted}` per tile, in tile
//! order) so the annotations can be read back.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::report::EvaluationReport;
use crate::dataset::{load_image_path, GenderLabel};
use crate::error::{Error, Result};
use crate::render::{read_png_text, save_png_with_text, text_width, Canvas, GLYPH_H};

pub const THUMB_SIDE: u32 = 96;
pub const TILE_WIDTH: u32 = 104;
pub const TILE_HEIGHT: u32 = THUMB_SIDE + 16;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileAnnotation {
    pub image_path: PathBuf,
    pub truth: GenderLabel,
    pub predicted: GenderLabel,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GridLayout {
    pub rows: usize,
    pub columns: usize,
    pub tiles: Vec<TileAnnotation>,
}

/// Tile layout for `n` images: `min(columns, n)` wide, `ceil(n / columns)` tall.
pub fn grid_shape(n: usize, columns: usize) -> (usize, usize) {
    let cols = columns.min(n).max(1);
    (n.div_ceil(cols), cols)
}

/// Writes the grid PNG, tiles in the report's (manifest) order. With nothing
/// misclassified no file is written and `None` is returned.
pub fn misclassified_grid(report: &EvaluationReport, columns: usize, path: &Path) -> Result<Option<GridLayout>> {
    if columns == 0 {
        return Err(Error::validation("grid needs at least one column"));
    }
    if report.misclassified.is_empty() {
        log::info!("model {} has no misclassified images; no grid written", report.model_name);
        return Ok(None);
    }
    let (rows, cols) = grid_shape(report.misclassified.len(), columns);
    let mut canvas = Canvas::new(cols as u32 * TILE_WIDTH, rows as u32 * TILE_HEIGHT, [255, 255, 255]);
    let mut tiles = Vec::new();
    for (i, m) in report.misclassified.iter().enumerate() {
        let (r, c) = (i / cols, i % cols);
        let (x0, y0) = ((c as u32 * TILE_WIDTH) as i64, (r as u32 * TILE_HEIGHT) as i64);
        let thumb = load_image_path(&m.record.image_path, THUMB_SIDE as usize)?.to_rgb8();
        canvas.blit(&thumb, x0 + ((TILE_WIDTH - THUMB_SIDE) / 2) as i64, y0 + 2);
        let caption = format!("{}>{}", m.record.gender, m.predicted);
        let tx = x0 + (TILE_WIDTH.saturating_sub(text_width(&caption, 1)) / 2) as i64;
        canvas.text(tx, y0 + (THUMB_SIDE + 4) as i64, &caption, 1, [160, 0, 0]);
        debug_assert!(THUMB_SIDE + 4 + GLYPH_H <= TILE_HEIGHT);
        tiles.push(TileAnnotation {
            image_path: m.record.image_path.clone(),
            truth: m.record.gender,
            predicted: m.predicted,
        });
    }
    let meta = BTreeMap::from([
        ("columns".to_owned(), cols.to_string()),
        ("rows".to_owned(), rows.to_string()),
        ("model".to_owned(), report.model_name.clone()),
        ("tiles".to_owned(), serde_json::to_string(&tiles)?),
    ]);
    save_png_with_text(&canvas.img, path, &meta)?;
    Ok(Some(GridLayout { rows, columns: cols, tiles }))
}

/// Reads the layout and annotations back from a grid PNG.
pub fn read_grid(path: &Path) -> Result<GridLayout> {
    let text = read_png_text(path)?;
    let field = |k: &str| {
        text.get(k)
            .ok_or_else(|| Error::Schema(format!("{}: grid metadata lacks {k}", path.display())))
    };
    let num = |k: &str| -> Result<usize> {
        field(k)?.parse().map_err(|_| Error::Schema(format!("{}: bad {k}", path.display())))
    };
    Ok(GridLayout {
        rows: num("rows")?,
        columns: num("columns")?,
        tiles: serde_json::from_str(field("tiles")?)?,
    })
}
