//! Result tables and history files.

use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::metrics::{hiou, SegMetrics};
use crate::trainer::{AblationMode, EvalReport, TrainHistory};

pub const RESULT_HEADER: [&str; 12] = [
    "K",
    "Model",
    "Seen PA",
    "Seen MA",
    "Seen mIoU",
    "Unseen PA",
    "Unseen MA",
    "Unseen mIoU",
    "Overall PA",
    "Overall MA",
    "Overall mIoU",
    "hIoU",
];

pub const HISTORY_HEADER: [&str; 12] = [
    "K",
    "Model",
    "epoch",
    "seen_mmd_loss",
    "recursive_loss",
    "classifier_loss",
    "mean_selected",
    "skipped_steps",
    "Seen mIoU",
    "Unseen mIoU",
    "Overall mIoU",
    "hIoU",
];

/// Row label of a mode in the result tables.
pub fn model_label(mode: AblationMode) -> &'static str {
    match mode {
        AblationMode::NoRecursive => "Baseline",
        AblationMode::EqualWeight => "Equal Weight",
        AblationMode::ConfidenceWeighted => "Final",
    }
}

/// One table row, metrics in percent.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultRow {
    pub k: usize,
    pub model: String,
    pub mode: AblationMode,
    pub seen: SegMetrics,
    pub unseen: Option<SegMetrics>,
    pub overall: SegMetrics,
    /// `hiou(seen.miou, unseen.miou)` on the percent values above.
    pub hiou: Option<f64>,
}

impl ResultRow {
    pub fn new(k: usize, mode: AblationMode, eval: &EvalReport) -> Self {
        let seen = eval.seen.percent();
        let unseen = eval.unseen.map(|u| u.percent());
        Self {
            k,
            model: model_label(mode).to_owned(),
            mode,
            seen,
            unseen,
            overall: eval.overall.percent(),
            hiou: unseen.and_then(|u| hiou(seen.miou, u.miou).ok()),
        }
    }

    fn fields(&self) -> Vec<String> {
        let opt = |v: Option<f64>| v.map(num).unwrap_or_default();
        vec![
            self.k.to_string(),
            self.model.clone(),
            num(self.seen.pa),
            num(self.seen.ma),
            num(self.seen.miou),
            opt(self.unseen.map(|u| u.pa)),
            opt(self.unseen.map(|u| u.ma)),
            opt(self.unseen.map(|u| u.miou)),
            num(self.overall.pa),
            num(self.overall.ma),
            num(self.overall.miou),
            opt(self.hiou),
        ]
    }
}

/// Shortest decimal that parses back to the same `f64`.
fn num(v: f64) -> String {
    format!("{v}")
}

fn csv_error(e: csv::Error) -> Error {
    Error::Usage(format!("csv output: {e}"))
}

pub fn results_csv(rows: &[ResultRow]) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::CRLF)
        .from_writer(Vec::new());
    w.write_record(RESULT_HEADER).map_err(csv_error)?;
    for row in rows {
        w.write_record(row.fields()).map_err(csv_error)?;
    }
    w.into_inner().map_err(|e| Error::Usage(e.to_string()))
}

/// Aligned plain-text table with one decimal, for the terminal.
pub fn results_table(rows: &[ResultRow]) -> String {
    let mut cells: Vec<Vec<String>> = vec![RESULT_HEADER.iter().map(|h| h.to_string()).collect()];
    let one = |v: f64| format!("{v:.1}");
    for r in rows {
        let opt = |v: Option<f64>| v.map(one).unwrap_or_else(|| "-".into());
        cells.push(vec![
            r.k.to_string(),
            r.model.clone(),
            one(r.seen.pa),
            one(r.seen.ma),
            one(r.seen.miou),
            opt(r.unseen.map(|u| u.pa)),
            opt(r.unseen.map(|u| u.ma)),
            opt(r.unseen.map(|u| u.miou)),
            one(r.overall.pa),
            one(r.overall.ma),
            one(r.overall.miou),
            opt(r.hiou),
        ]);
    }
    let widths: Vec<usize> = (0..RESULT_HEADER.len())
        .map(|c| {
            cells
                .iter()
                .map(|row| row[c].chars().count())
                .max()
                .unwrap_or(0)
        })
        .collect();
    let mut out = String::new();
    for row in &cells {
        let line: Vec<String> = row
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(c, (v, &w))| {
                if c == 1 {
                    format!("{v:<w$}")
                } else {
                    format!("{v:>w$}")
                }
            })
            .collect();
        out += line.join("  ").trim_end();
        out.push('\n');
    }
    out
}

/// Training history of one cell.
#[derive(Debug, Clone, Serialize)]
pub struct CellHistory {
    pub k: usize,
    pub model: String,
    pub mode: AblationMode,
    pub history: TrainHistory,
}

pub fn history_csv(cells: &[CellHistory]) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::CRLF)
        .from_writer(Vec::new());
    w.write_record(HISTORY_HEADER).map_err(csv_error)?;
    let opt = |v: Option<f64>| v.map(num).unwrap_or_default();
    for cell in cells {
        for r in &cell.history.records {
            let (selected, skipped) = if r.selection.is_empty() {
                (String::new(), String::new())
            } else {
                let n = r.selection.len() as f64;
                (
                    num(r.selection.iter().map(|s| s.mean_selected).sum::<f64>() / n),
                    r.selection
                        .iter()
                        .map(|s| s.skipped)
                        .sum::<usize>()
                        .to_string(),
                )
            };
            w.write_record([
                cell.k.to_string(),
                cell.model.clone(),
                r.epoch.to_string(),
                num(r.seen_mmd_loss),
                opt(r.recursive_loss),
                num(r.classifier_loss),
                selected,
                skipped,
                num(100.0 * r.eval.seen.miou),
                opt(r.eval.unseen.map(|u| 100.0 * u.miou)),
                num(100.0 * r.eval.overall.miou),
                opt(r.eval.hiou.map(|h| 100.0 * h)),
            ])
            .map_err(csv_error)?;
        }
    }
    w.into_inner().map_err(|e| Error::Usage(e.to_string()))
}

#[derive(Serialize)]
struct ResultsJson<'a> {
    results: &'a [ResultRow],
    histories: &'a [CellHistory],
}

pub fn results_json(rows: &[ResultRow], cells: &[CellHistory]) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(&ResultsJson {
        results: rows,
        histories: cells,
    })
    .expect("results serialize");
    out.write_all(b"\n").expect("write to vec");
    out
}
