//! YOLO annotation files, dataset configs and the train/val split.
//!
//! Annotation files hold one object per line, `class_id cx cy w h`, with the
//! box in normalized centre/size form. Images and annotations pair up by
//! file stem (`images/can_000001.png` <-> `labels/can_000001.txt`).
//!
//! Dataset configs use a flat subset of YAML:
//!
//! ```text
//! # comments and blank lines are ignored
//! train: images/train
//! val: images/val
//! names:
//!   - easy_open_ok
//!   - easy_open_fault
//! ```
//!
//! `names` may also be written inline (`names: [a, b]`) or as an indexed
//! mapping (`  0: a`). Indexed entries must be contiguous from zero. A
//! top-level `nc:` key is accepted and checked against the name count;
//! any other key is an error.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::hash::Hash;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{to_corner_form, ClassLabel, ClassList, Detection, NormalizedBox};
use crate::rng::{self, Stream};

pub const ANNOTATION_EXTENSION: &str = "txt";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthAnnotation {
    pub label: ClassLabel,
    #[serde(rename = "box")]
    pub bbox: NormalizedBox,
}

/// Parses one `class_id cx cy w h` line. `line_no` is only used for error
/// reporting.
pub fn parse_annotation_line(
    line: &str,
    line_no: usize,
    classes: &ClassList,
) -> Result<GroundTruthAnnotation> {
    let fields: Vec<&str> = line.split_whitespace().collect();
    if fields.len() != 5 {
        return Err(Error::parse(
            line_no,
            format!("expected 5 fields, found {}", fields.len()),
        ));
    }
    let class_id: usize = fields[0].parse().map_err(|_| {
        Error::parse(
            line_no,
            format!("class id is not an integer: {:?}", fields[0]),
        )
    })?;
    let label = classes
        .label(class_id)
        .map_err(|e| Error::parse(line_no, e.to_string()))?;

    let mut coords = [0.0f64; 4];
    for (slot, (name, raw)) in coords
        .iter_mut()
        .zip(["cx", "cy", "w", "h"].iter().zip(&fields[1..]))
    {
        *slot = raw
            .parse()
            .map_err(|_| Error::parse(line_no, format!("{name} is not a number: {raw:?}")))?;
    }
    let bbox = NormalizedBox::new(coords[0], coords[1], coords[2], coords[3])
        .map_err(|e| Error::parse(line_no, e.to_string()))?;
    Ok(GroundTruthAnnotation { label, bbox })
}

/// Parses a whole annotation file, skipping blank lines.
pub fn parse_annotation_file(
    text: &str,
    classes: &ClassList,
) -> Result<Vec<GroundTruthAnnotation>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| parse_annotation_line(l, i + 1, classes))
        .collect()
}

/// Emits one newline-terminated line per annotation, six decimals per field.
pub fn write_annotation_file(annotations: &[GroundTruthAnnotation]) -> String {
    let mut out = String::new();
    for a in annotations {
        let b = &a.bbox;
        let _ = writeln!(
            out,
            "{} {:.6} {:.6} {:.6} {:.6}",
            a.label.id, b.cx, b.cy, b.w, b.h
        );
    }
    out
}

/// Reads every `*.txt` file in `dir`, keyed by file stem. Files are visited in
/// sorted order so downstream iteration is deterministic.
pub fn read_annotation_dir(
    dir: &Path,
    classes: &ClassList,
) -> Result<BTreeMap<String, Vec<GroundTruthAnnotation>>> {
    read_txt_dir(dir, |text| parse_annotation_file(text, classes))
}

/// Parses one `class_id cx cy w h confidence` prediction line into a
/// pixel-space detection on a `img_w` x `img_h` frame.
pub fn parse_prediction_line(
    line: &str,
    line_no: usize,
    classes: &ClassList,
    img_w: f64,
    img_h: f64,
) -> Result<Detection> {
    let fields: Vec<&str> = line.split_whitespace().collect();
    if fields.len() != 6 {
        return Err(Error::parse(
            line_no,
            format!("expected 6 fields, found {}", fields.len()),
        ));
    }
    let truth = parse_annotation_line(&fields[..5].join(" "), line_no, classes)?;
    let confidence: f64 = fields[5].parse().map_err(|_| {
        Error::parse(
            line_no,
            format!("confidence is not a number: {:?}", fields[5]),
        )
    })?;
    let bbox = to_corner_form(&truth.bbox, img_w, img_h)?;
    Detection::new(bbox, truth.label, confidence).map_err(|e| Error::parse(line_no, e.to_string()))
}

pub fn parse_prediction_file(
    text: &str,
    classes: &ClassList,
    img_w: f64,
    img_h: f64,
) -> Result<Vec<Detection>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| parse_prediction_line(l, i + 1, classes, img_w, img_h))
        .collect()
}

/// Emits one `class_id cx cy w h confidence` line per detection.
pub fn write_prediction_file(detections: &[Detection], img_w: f64, img_h: f64) -> Result<String> {
    let mut out = String::new();
    for d in detections {
        let b = d.bbox.to_normalized(img_w, img_h)?;
        let _ = writeln!(
            out,
            "{} {:.6} {:.6} {:.6} {:.6} {:.6}",
            d.label.id, b.cx, b.cy, b.w, b.h, d.confidence
        );
    }
    Ok(out)
}

/// Like [`read_annotation_dir`] but for prediction files.
pub fn read_prediction_dir(
    dir: &Path,
    classes: &ClassList,
    img_w: f64,
    img_h: f64,
) -> Result<BTreeMap<String, Vec<Detection>>> {
    read_txt_dir(dir, |text| {
        parse_prediction_file(text, classes, img_w, img_h)
    })
}

fn read_txt_dir<T>(
    dir: &Path,
    parse: impl Fn(&str) -> Result<Vec<T>>,
) -> Result<BTreeMap<String, Vec<T>>> {
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.extension().and_then(|e| e.to_str()) != Some(ANNOTATION_EXTENSION) {
            continue;
        }
        let Some(stem) = path.file_stem().and_then(|s| s.to_str()) else {
            continue;
        };
        let text = fs::read_to_string(&path)?;
        let items = parse(&text).map_err(|e| match e {
            Error::Parse { line, reason } => Error::Parse {
                line,
                reason: format!("{}: {reason}", path.display()),
            },
            other => other,
        })?;
        out.insert(stem.to_string(), items);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub train_path: String,
    pub val_path: String,
    pub class_names: Vec<String>,
}

impl DatasetConfig {
    pub fn class_list(&self) -> Result<ClassList> {
        ClassList::new(self.class_names.iter().cloned())
    }

    /// Renders the config in the block-list layout accepted by
    /// [`parse_dataset_config`].
    pub fn render(&self) -> String {
        let mut out = format!(
            "train: {}\nval: {}\nnc: {}\nnames:\n",
            self.train_path,
            self.val_path,
            self.class_names.len()
        );
        for n in &self.class_names {
            let _ = writeln!(out, "  - {n}");
        }
        out
    }
}

pub fn parse_dataset_config(text: &str) -> Result<DatasetConfig> {
    let mut train = None;
    let mut val = None;
    let mut nc: Option<(usize, usize)> = None;
    let mut names: Option<Vec<(usize, String)>> = None;
    let mut in_names = false;

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = strip_comment(raw);
        if line.trim().is_empty() {
            continue;
        }
        let indented = line.starts_with(' ') || line.starts_with('\t');
        let trimmed = line.trim();

        if indented || trimmed.starts_with("- ") || trimmed == "-" {
            if !in_names {
                return Err(Error::parse(
                    line_no,
                    format!("unexpected list entry {trimmed:?}"),
                ));
            }
            let entries = names.get_or_insert_with(Vec::new);
            let entry = if let Some(rest) = trimmed.strip_prefix('-') {
                (entries.len(), unquote(rest.trim()).to_string())
            } else if let Some((k, v)) = trimmed.split_once(':') {
                let k: usize = k.trim().parse().map_err(|_| {
                    Error::parse(line_no, format!("names: bad class index {:?}", k.trim()))
                })?;
                (k, unquote(v.trim()).to_string())
            } else {
                return Err(Error::parse(
                    line_no,
                    format!("names: malformed entry {trimmed:?}"),
                ));
            };
            entries.push(entry);
            continue;
        }

        in_names = false;
        let Some((key, value)) = trimmed.split_once(':') else {
            return Err(Error::parse(
                line_no,
                format!("expected `key: value`, got {trimmed:?}"),
            ));
        };
        let value = value.trim();
        match key.trim() {
            "train" => train = Some(unquote(value).to_string()),
            "val" => val = Some(unquote(value).to_string()),
            "nc" => {
                let n = value.parse().map_err(|_| {
                    Error::parse(line_no, format!("nc is not an integer: {value:?}"))
                })?;
                nc = Some((n, line_no));
            }
            "names" => {
                if value.is_empty() {
                    in_names = true;
                    names = Some(Vec::new());
                } else {
                    let inner = value
                        .strip_prefix('[')
                        .and_then(|v| v.strip_suffix(']'))
                        .ok_or_else(|| {
                            Error::parse(line_no, "names: expected a block list or [a, b, ...]")
                        })?;
                    names = Some(
                        inner
                            .split(',')
                            .map(|s| unquote(s.trim()).to_string())
                            .filter(|s| !s.is_empty())
                            .enumerate()
                            .collect(),
                    );
                }
            }
            other => return Err(Error::parse(line_no, format!("unknown key {other:?}"))),
        }
    }

    let train_path = train.ok_or_else(|| Error::parse(0, "train missing"))?;
    let val_path = val.ok_or_else(|| Error::parse(0, "val missing"))?;
    let mut entries = names.ok_or_else(|| Error::parse(0, "names missing"))?;
    if entries.is_empty() {
        return Err(Error::parse(0, "names missing"));
    }
    entries.sort_by_key(|(i, _)| *i);
    let mut class_names = Vec::with_capacity(entries.len());
    for (expected, (i, name)) in entries.into_iter().enumerate() {
        if i != expected {
            return Err(Error::parse(
                0,
                format!("names: class indices are not contiguous at {i}"),
            ));
        }
        if class_names.contains(&name) {
            return Err(Error::parse(0, format!("duplicate class {name:?}")));
        }
        if name.is_empty() {
            return Err(Error::parse(
                0,
                format!("names: class {i} has an empty name"),
            ));
        }
        class_names.push(name);
    }
    if let Some((n, line_no)) = nc {
        if n != class_names.len() {
            return Err(Error::parse(
                line_no,
                format!("nc is {n} but names lists {} classes", class_names.len()),
            ));
        }
    }
    Ok(DatasetConfig {
        train_path,
        val_path,
        class_names,
    })
}

fn strip_comment(line: &str) -> &str {
    match line.find('#') {
        Some(i) => &line[..i],
        None => line,
    }
}

fn unquote(s: &str) -> &str {
    for q in ['"', '\''] {
        if s.len() >= 2 && s.starts_with(q) && s.ends_with(q) {
            return &s[1..s.len() - 1];
        }
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit<T> {
    pub train: Vec<T>,
    pub val: Vec<T>,
    pub ratio: f64,
}

/// Shuffles `item_ids` under `seed` and sends the first `round(ratio * N)`
/// items to the training set.
pub fn split_dataset<T>(item_ids: &[T], ratio: f64, seed: u64) -> Result<DatasetSplit<T>>
where
    T: Clone + Eq + Hash,
{
    if item_ids.is_empty() {
        return Err(Error::invalid("cannot split an empty dataset"));
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::invalid(format!(
            "split ratio must be in (0, 1), got {ratio}"
        )));
    }
    let mut seen = HashSet::with_capacity(item_ids.len());
    if !item_ids.iter().all(|id| seen.insert(id)) {
        return Err(Error::invalid("item ids are not unique"));
    }

    let mut shuffled = item_ids.to_vec();
    shuffled.shuffle(&mut rng::substream(seed, 0, Stream::Split));
    let n_train = (ratio * item_ids.len() as f64).round() as usize;
    let val = shuffled.split_off(n_train);
    Ok(DatasetSplit {
        train: shuffled,
        val,
        ratio,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn classes() -> ClassList {
        ClassList::default()
    }

    #[test]
    fn parses_basic_line() {
        let a = parse_annotation_line("0 0.5 0.5 0.2 0.1", 1, &classes()).unwrap();
        assert_eq!(a.label.id, 0);
        assert_eq!(a.label.name, "easy_open_ok");
        assert_eq!(a.bbox, NormalizedBox::new(0.5, 0.5, 0.2, 0.1).unwrap());
    }

    #[test]
    fn parses_full_image_box() {
        let a = parse_annotation_line("3 0.5 0.5 1.0 1.0", 1, &classes()).unwrap();
        assert_eq!(a.label.id, 3);
        assert_eq!(a.bbox.w, 1.0);
        assert_eq!(a.bbox.h, 1.0);
    }

    #[test]
    fn rejects_out_of_range_width() {
        let err = parse_annotation_line("1 0.5 0.5 1.2 0.1", 7, &classes()).unwrap_err();
        match err {
            Error::Parse { line, reason } => {
                assert_eq!(line, 7);
                assert!(reason.contains("w out of range"), "{reason}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_malformed_lines() {
        let c = classes();
        assert!(parse_annotation_line("0 0.5 0.5 0.2", 1, &c).is_err());
        assert!(parse_annotation_line("0 0.5 0.5 0.2 0.1 0.9", 1, &c).is_err());
        assert!(parse_annotation_line("x 0.5 0.5 0.2 0.1", 1, &c).is_err());
        assert!(parse_annotation_line("0 0.5 abc 0.2 0.1", 1, &c).is_err());
        assert!(parse_annotation_line("9 0.5 0.5 0.2 0.1", 1, &c).is_err());
    }

    #[test]
    fn file_errors_carry_line_numbers() {
        let text = "0 0.5 0.5 0.2 0.1\n\n2 0.5 0.5 0.2\n";
        match parse_annotation_file(text, &classes()).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn write_formats() {
        assert_eq!(write_annotation_file(&[]), "");
        let a = GroundTruthAnnotation {
            label: classes().label(0).unwrap(),
            bbox: NormalizedBox::new(0.5, 0.5, 0.2, 0.1).unwrap(),
        };
        assert_eq!(
            write_annotation_file(&[a]),
            "0 0.500000 0.500000 0.200000 0.100000\n"
        );
    }

    #[test]
    fn split_eighty_twenty() {
        let ids: Vec<u32> = (0..10).collect();
        let s = split_dataset(&ids, 0.8, 42).unwrap();
        assert_eq!(s.train.len(), 8);
        assert_eq!(s.val.len(), 2);
        assert!(s.train.iter().all(|t| !s.val.contains(t)));
        assert_eq!(s, split_dataset(&ids, 0.8, 42).unwrap());
    }

    #[test]
    fn split_single_item() {
        let s = split_dataset(&["only"], 0.8, 1).unwrap();
        assert_eq!(s.train, vec!["only"]);
        assert!(s.val.is_empty());
    }

    #[test]
    fn split_errors() {
        assert!(split_dataset::<u32>(&[], 0.8, 1).is_err());
        assert!(split_dataset(&[1, 2], 0.0, 1).is_err());
        assert!(split_dataset(&[1, 2], 1.0, 1).is_err());
        assert!(split_dataset(&[1, 1], 0.5, 1).is_err());
    }

    const DEFAULT_CONFIG: &str = "\
train: ../data/images/train
val: ../data/images/val
nc: 6
names:
  - easy_open_ok
  - easy_open_fault
  - contour_ok
  - contour_fault
  - label_ok
  - label_fault
";

    #[test]
    fn parses_default_config() {
        let c = parse_dataset_config(DEFAULT_CONFIG).unwrap();
        assert_eq!(c.class_names.len(), 6);
        assert_eq!(
            c.class_list().unwrap().by_name("easy_open_ok").unwrap().id,
            0
        );
        assert_eq!(c.train_path, "../data/images/train");
        assert_eq!(parse_dataset_config(&c.render()).unwrap(), c);
    }

    #[test]
    fn parses_inline_and_indexed_names() {
        let inline = parse_dataset_config("train: a\nval: b\nnames: ['x', \"y\", z]\n").unwrap();
        assert_eq!(inline.class_names, ["x", "y", "z"]);
        let indexed =
            parse_dataset_config("train: a # comment\nval: b\nnames:\n  1: y\n  0: x\n").unwrap();
        assert_eq!(indexed.class_names, ["x", "y"]);
    }

    #[test]
    fn config_errors_name_the_key() {
        let err = parse_dataset_config("train: a\nval: b\n").unwrap_err();
        assert!(err.to_string().contains("names missing"), "{err}");
        let err = parse_dataset_config("val: b\nnames: [a]\n").unwrap_err();
        assert!(err.to_string().contains("train missing"), "{err}");
        let err = parse_dataset_config("train: a\nval: b\nnames:\n  - a\n  - a\n").unwrap_err();
        assert!(err.to_string().contains("duplicate class"), "{err}");
        assert!(parse_dataset_config("train: a\nval: b\nnc: 3\nnames: [a]\n").is_err());
        assert!(parse_dataset_config("train: a\nval: b\nfoo: 1\nnames: [a]\n").is_err());
    }
}
