//! Learning-curve plots.
//!
//! Two stacked panels, accuracy above loss, each with a training and a
//! validation series against epoch. tEXt chunks record every series and the
//! axis ranges (`epochs`, `accuracy_range`, `loss_range`, `series`).

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::nets::TrainingHistory;
use crate::render::{read_png_text, save_png_with_text, text_width, Canvas};

const WIDTH: u32 = 640;
const PANEL_HEIGHT: u32 = 260;
const MARGIN_LEFT: i64 = 70;
const MARGIN_RIGHT: i64 = 20;
const MARGIN_TOP: i64 = 28;
const MARGIN_BOTTOM: i64 = 36;
const TRAIN_COLOUR: [u8; 3] = [31, 119, 180];
const VAL_COLOUR: [u8; 3] = [255, 127, 14];

/// Axis extents written into the plot.
#[derive(Debug, Clone, PartialEq)]
pub struct CurvesPlot {
    pub epochs: usize,
    pub accuracy_range: (f64, f64),
    pub loss_range: (f64, f64),
    pub series: BTreeMap<String, Vec<f64>>,
}

fn range_of(values: impl Iterator<Item = f64>, floor: Option<f64>, ceil: Option<f64>) -> (f64, f64) {
    let (mut lo, mut hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(v), h.max(v)));
    if let Some(f) = floor {
        lo = lo.min(f);
    }
    if let Some(c) = ceil {
        hi = hi.max(c);
    }
    if hi - lo < 1e-9 {
        hi = lo + 1.0;
    }
    (lo, hi)
}

struct Panel {
    top: i64,
    range: (f64, f64),
    epochs: usize,
}

impl Panel {
    fn x(&self, epoch: usize) -> i64 {
        let w = WIDTH as i64 - MARGIN_LEFT - MARGIN_RIGHT;
        if self.epochs <= 1 {
            return MARGIN_LEFT + w / 2;
        }
        MARGIN_LEFT + (w as f64 * (epoch - 1) as f64 / (self.epochs - 1) as f64).round() as i64
    }

    fn y(&self, v: f64) -> i64 {
        let h = PANEL_HEIGHT as i64 - MARGIN_TOP - MARGIN_BOTTOM;
        let t = (v - self.range.0) / (self.range.1 - self.range.0);
        self.top + MARGIN_TOP + (h as f64 * (1.0 - t)).round() as i64
    }

    fn draw_frame(&self, c: &mut Canvas, title: &str) {
        let grey = [90, 90, 90];
        let (x0, x1) = (MARGIN_LEFT, WIDTH as i64 - MARGIN_RIGHT);
        let (y0, y1) = (self.y(self.range.1), self.y(self.range.0));
        c.line((x0, y0), (x0, y1), grey, 1);
        c.line((x0, y1), (x1, y1), grey, 1);
        c.text(x0, self.top + 8, title, 2, [0, 0, 0]);
        for i in 0..=4 {
            let v = self.range.0 + (self.range.1 - self.range.0) * i as f64 / 4.0;
            let y = self.y(v);
            c.line((x0 - 4, y), (x0, y), grey, 1);
            let label = format!("{v:.2}");
            c.text(x0 - 8 - text_width(&label, 1) as i64, y - 3, &label, 1, grey);
        }
        let ticks: Vec<usize> = if self.epochs <= 10 {
            (1..=self.epochs).collect()
        } else {
            (0..=5).map(|i| 1 + (self.epochs - 1) * i / 5).collect()
        };
        for e in ticks {
            let x = self.x(e);
            c.line((x, y1), (x, y1 + 4), grey, 1);
            let label = e.to_string();
            c.text(x - text_width(&label, 1) as i64 / 2, y1 + 8, &label, 1, grey);
        }
        let xl = "EPOCH";
        c.text((x0 + x1) / 2 - text_width(xl, 1) as i64 / 2, y1 + 20, xl, 1, grey);
    }

    fn draw_series(&self, c: &mut Canvas, values: &[f64], colour: [u8; 3]) {
        let pts: Vec<(i64, i64)> = values.iter().enumerate().map(|(i, &v)| (self.x(i + 1), self.y(v))).collect();
        for w in pts.windows(2) {
            c.line(w[0], w[1], colour, 2);
        }
        for &(x, y) in &pts {
            c.fill_rect(x - 2, y - 2, 5, 5, colour);
        }
    }
}

fn fmt_range((lo, hi): (f64, f64)) -> String {
    format!("{lo},{hi}")
}

fn parse_range(s: &str) -> Option<(f64, f64)> {
    let (a, b) = s.split_once(',')?;
    Some((a.trim().parse().ok()?, b.trim().parse().ok()?))
}

/// Draws train/validation accuracy and loss against epoch.
pub fn plot_curves(history: &TrainingHistory, path: &Path) -> Result<CurvesPlot> {
    let epochs = history.epochs();
    if epochs == 0 {
        return Err(Error::validation("history has no epochs to plot"));
    }
    let lens = [history.train_accuracy.len(), history.val_loss.len(), history.val_accuracy.len()];
    if lens.iter().any(|&l| l != epochs) {
        return Err(Error::validation("history lists have different lengths"));
    }
    let all = |a: &[f64], b: &[f64]| a.iter().chain(b).cloned().collect::<Vec<_>>();
    let acc = all(&history.train_accuracy, &history.val_accuracy);
    let loss = all(&history.train_loss, &history.val_loss);
    if acc.iter().chain(&loss).any(|v| !v.is_finite()) {
        return Err(Error::validation("history contains non-finite values"));
    }
    let accuracy_range = range_of(acc.into_iter(), Some(0.0), Some(1.0));
    let loss_range = range_of(loss.into_iter(), Some(0.0), None);

    let mut canvas = Canvas::new(WIDTH, 2 * PANEL_HEIGHT, [255, 255, 255]);
    let top = Panel { top: 0, range: accuracy_range, epochs };
    let bottom = Panel { top: PANEL_HEIGHT as i64, range: loss_range, epochs };
    top.draw_frame(&mut canvas, "ACCURACY");
    bottom.draw_frame(&mut canvas, "LOSS");
    top.draw_series(&mut canvas, &history.train_accuracy, TRAIN_COLOUR);
    top.draw_series(&mut canvas, &history.val_accuracy, VAL_COLOUR);
    bottom.draw_series(&mut canvas, &history.train_loss, TRAIN_COLOUR);
    bottom.draw_series(&mut canvas, &history.val_loss, VAL_COLOUR);
    let lx = WIDTH as i64 - 150;
    for (i, (name, colour)) in [("TRAIN", TRAIN_COLOUR), ("VALIDATION", VAL_COLOUR)].into_iter().enumerate() {
        let y = 10 + 12 * i as i64;
        canvas.fill_rect(lx, y, 10, 7, colour);
        canvas.text(lx + 14, y, name, 1, [0, 0, 0]);
    }

    let series = BTreeMap::from([
        ("train_accuracy".to_owned(), history.train_accuracy.clone()),
        ("train_loss".to_owned(), history.train_loss.clone()),
        ("val_accuracy".to_owned(), history.val_accuracy.clone()),
        ("val_loss".to_owned(), history.val_loss.clone()),
    ]);
    let meta = BTreeMap::from([
        ("epochs".to_owned(), epochs.to_string()),
        ("accuracy_range".to_owned(), fmt_range(accuracy_range)),
        ("loss_range".to_owned(), fmt_range(loss_range)),
        ("series".to_owned(), serde_json::to_string(&series)?),
    ]);
    save_png_with_text(&canvas.img, path, &meta)?;
    Ok(CurvesPlot { epochs, accuracy_range, loss_range, series })
}

/// Reads the metadata written by [`plot_curves`].
pub fn read_curves(path: &Path) -> Result<CurvesPlot> {
    let text = read_png_text(path)?;
    let bad = |k: &str| Error::Schema(format!("{}: plot metadata lacks a valid {k}", path.display()));
    let get = |k: &str| text.get(k).ok_or_else(|| bad(k));
    Ok(CurvesPlot {
        epochs: get("epochs")?.parse().map_err(|_| bad("epochs"))?,
        accuracy_range: parse_range(get("accuracy_range")?).ok_or_else(|| bad("accuracy_range"))?,
        loss_range: parse_range(get("loss_range")?).ok_or_else(|| bad("loss_range"))?,
        series: serde_json::from_str(get("series")?)?,
    })
}
