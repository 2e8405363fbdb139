//! Label text: ordering recognized lines and extracting traceability fields.
//!
//! The label grammar is three tokens, each on its own line in the canonical
//! rendering:
//!
//! ```text
//! LOT A1B2C3        six characters from [A-Z0-9]
//! EXP 15/08/2025    day/month/year, must be a real calendar date
//! PROD 0042         four digits
//! ```
//!
//! Before parsing, each line is upper-cased and runs of whitespace are
//! collapsed. Misread characters are not corrected.

use std::fmt;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::model::BoundingBox;
use crate::synthetic::CanInstance;

/// Reason contributed to a verdict when the label cannot be read back.
pub const LABEL_UNREADABLE: &str = "label_unreadable";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcrLine {
    pub text: String,
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelFields {
    pub lot_code: String,
    pub expiry: NaiveDate,
    pub product_code: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelField {
    Lot,
    Expiry,
    Product,
}

impl LabelField {
    pub fn name(&self) -> &'static str {
        match self {
            LabelField::Lot => "lot",
            LabelField::Expiry => "expiry",
            LabelField::Product => "product",
        }
    }

    fn keyword(&self) -> &'static str {
        match self {
            LabelField::Lot => "LOT",
            LabelField::Expiry => "EXP",
            LabelField::Product => "PROD",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum LabelError {
    #[error("field absent: {}", .0.name())]
    Absent(LabelField),
    #[error("field invalid: {}", .0.name())]
    Invalid(LabelField),
}

impl LabelFields {
    /// Validating constructor; rejects codes outside the grammar.
    pub fn new(
        lot_code: impl Into<String>,
        expiry: NaiveDate,
        product_code: impl Into<String>,
    ) -> Result<Self, LabelError> {
        let lot_code = lot_code.into();
        let product_code = product_code.into();
        if !is_lot_code(&lot_code) {
            return Err(LabelError::Invalid(LabelField::Lot));
        }
        if !is_product_code(&product_code) {
            return Err(LabelError::Invalid(LabelField::Product));
        }
        Ok(LabelFields {
            lot_code,
            expiry,
            product_code,
        })
    }

    pub fn render_lines(&self) -> [String; 3] {
        [
            format!("LOT {}", self.lot_code),
            format!(
                "EXP {:02}/{:02}/{:04}",
                self.expiry.day(),
                self.expiry.month(),
                self.expiry.year()
            ),
            format!("PROD {}", self.product_code),
        ]
    }

    /// Canonical three-line rendering, newline separated.
    pub fn render(&self) -> String {
        self.render_lines().join("\n")
    }
}

impl fmt::Display for LabelFields {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

fn is_lot_code(s: &str) -> bool {
    s.len() == 6
        && s.bytes()
            .all(|b| b.is_ascii_uppercase() || b.is_ascii_digit())
}

fn is_product_code(s: &str) -> bool {
    s.len() == 4 && s.bytes().all(|b| b.is_ascii_digit())
}

pub fn is_valid_date(day: u32, month: u32, year: i32) -> bool {
    NaiveDate::from_ymd_opt(year, month, day).is_some()
}

/// Parses `DD/MM/YYYY` with exactly two, two and four digits.
pub fn parse_date(s: &str) -> Option<NaiveDate> {
    let mut parts = s.split('/');
    let (d, m, y) = (parts.next()?, parts.next()?, parts.next()?);
    if parts.next().is_some() {
        return None;
    }
    let digits = |p: &str, n: usize| p.len() == n && p.bytes().all(|b| b.is_ascii_digit());
    if !(digits(d, 2) && digits(m, 2) && digits(y, 4)) {
        return None;
    }
    NaiveDate::from_ymd_opt(y.parse().ok()?, m.parse().ok()?, d.parse().ok()?)
}

/// Orders lines top to bottom by box centre, then left to right.
pub fn assemble_lines(lines: &[OcrLine]) -> Vec<String> {
    let mut order: Vec<&OcrLine> = lines.iter().collect();
    order.sort_by(|a, b| {
        let (ax, ay) = a.bbox.center();
        let (bx, by) = b.bbox.center();
        ay.total_cmp(&by).then(ax.total_cmp(&bx))
    });
    order.into_iter().map(|l| l.text.clone()).collect()
}

fn normalize(line: &str) -> Vec<String> {
    line.to_uppercase()
        .split_whitespace()
        .map(str::to_string)
        .collect()
}

pub fn parse_label<S: AsRef<str>>(lines: &[S]) -> Result<LabelFields, LabelError> {
    let tokens: Vec<String> = lines.iter().flat_map(|l| normalize(l.as_ref())).collect();
    let value_of = |field: LabelField| -> Result<&str, LabelError> {
        let pos = tokens
            .iter()
            .position(|t| t == field.keyword())
            .ok_or(LabelError::Absent(field))?;
        tokens
            .get(pos + 1)
            .map(String::as_str)
            .ok_or(LabelError::Invalid(field))
    };

    let lot = value_of(LabelField::Lot)?;
    if !is_lot_code(lot) {
        return Err(LabelError::Invalid(LabelField::Lot));
    }
    let expiry =
        parse_date(value_of(LabelField::Expiry)?).ok_or(LabelError::Invalid(LabelField::Expiry))?;
    let product = value_of(LabelField::Product)?;
    if !is_product_code(product) {
        return Err(LabelError::Invalid(LabelField::Product));
    }
    Ok(LabelFields {
        lot_code: lot.to_string(),
        expiry,
        product_code: product.to_string(),
    })
}

/// Returns [`LABEL_UNREADABLE`] when the read label failed to parse or
/// disagrees with the can's printed text.
pub fn verify_label(
    read: &Result<LabelFields, LabelError>,
    can: &CanInstance,
) -> Option<&'static str> {
    let truth: Vec<&str> = can.label_text_truth.lines().collect();
    match (read, parse_label(&truth)) {
        (Ok(got), Ok(want)) if *got == want => None,
        _ => Some(LABEL_UNREADABLE),
    }
}
