//! Training-metrics tables and curve exports.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::PrPoint;
use crate::error::{Error, Result};

pub const METRICS_HEADER: [&str; 5] = ["epoch", "precision", "recall", "map50", "map50_95"];

/// Epoch-level detector metrics as reported by a training run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub epoch: u32,
    pub precision: f64,
    pub recall: f64,
    pub map50: f64,
    pub map50_95: f64,
}

/// Parses `epoch,precision,recall,map50,map50_95` CSV. Row numbers in
/// errors are 1-based file lines, so the first data row is line 2.
pub fn ingest_metrics_table(text: &str) -> Result<Vec<MetricsReport>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| Error::parse(1, format!("unreadable header: {e}")))?
        .clone();
    if headers.iter().ne(METRICS_HEADER.iter().copied()) {
        return Err(Error::parse(
            1,
            format!("expected header {}", METRICS_HEADER.join(",")),
        ));
    }

    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            Error::parse(line, format!("malformed row: {e}"))
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != METRICS_HEADER.len() {
            return Err(Error::parse(
                line,
                format!("expected 5 fields, found {}", record.len()),
            ));
        }
        let epoch = record[0].parse().map_err(|_| {
            Error::parse(line, format!("epoch is not an integer: {:?}", &record[0]))
        })?;
        let mut fractions = [0.0f64; 4];
        for (i, slot) in fractions.iter_mut().enumerate() {
            let name = METRICS_HEADER[i + 1];
            let raw = &record[i + 1];
            let v: f64 = raw
                .parse()
                .map_err(|_| Error::parse(line, format!("{name} is not a number: {raw:?}")))?;
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::parse(
                    line,
                    format!("{name} out of range [0, 1]: {v}"),
                ));
            }
            *slot = v;
        }
        rows.push(MetricsReport {
            epoch,
            precision: fractions[0],
            recall: fractions[1],
            map50: fractions[2],
            map50_95: fractions[3],
        });
    }
    Ok(rows)
}

/// Fixed-width table followed by a summary of the final row.
///
/// Values are printed in their shortest round-trip form, so a value read
/// as `0.979` is printed as `0.979`.
pub fn format_metrics_table(rows: &[MetricsReport]) -> String {
    let mut out = format!(
        "{:>6}  {:>10}  {:>10}  {:>10}  {:>10}\n",
        "epoch", "precision", "recall", "mAP0.5", "mAP0.5:0.95"
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{:>6}  {:>10}  {:>10}  {:>10}  {:>10}",
            r.epoch, r.precision, r.recall, r.map50, r.map50_95
        );
    }
    if let Some(last) = rows.last() {
        let _ = writeln!(
            out,
            "final epoch {}: precision {} recall {} map50 {} map50_95 {}",
            last.epoch, last.precision, last.recall, last.map50, last.map50_95
        );
    }
    out
}

pub fn pr_curve_csv(curve: &[PrPoint]) -> String {
    let mut out = String::from("recall,precision\n");
    for p in curve {
        let _ = writeln!(out, "{},{}", p.recall, p.precision);
    }
    out
}

pub fn confidence_curve_csv(curve: &[(f64, f64)]) -> String {
    let mut out = String::from("confidence,precision\n");
    for (c, p) in curve {
        let _ = writeln!(out, "{c},{p}");
    }
    out
}
