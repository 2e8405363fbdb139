//! Synthetic cans and imperfect stand-ins for the detector and the OCR
//! reader.
//!
//! All geometry lives in a square canonical frame of [`FRAME_SIZE`] pixels.
//! Every draw comes from the caller's RNG so runs replay exactly.

use chrono::NaiveDate;
use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::annotation::GroundTruthAnnotation;
use crate::error::{Error, Result};
use crate::eval::nms;
use crate::model::{
    to_corner_form, BoundingBox, ClassList, Detection, Feature, NormalizedBox, TruthBox,
};
use crate::ocr::{LabelFields, OcrLine};

pub const FRAME_SIZE: f64 = 640.0;

const LOT_ALPHABET: &[u8] = b"ABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789";

fn check_probability(name: &str, p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Config(format!("{name} must be in [0, 1], got {p}")));
    }
    Ok(())
}

/// Independent per-feature fault probabilities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FaultRates {
    pub easy_open: f64,
    pub contour: f64,
    pub label: f64,
}

impl FaultRates {
    pub fn uniform(p: f64) -> Self {
        FaultRates {
            easy_open: p,
            contour: p,
            label: p,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_probability("fault_rates.easy_open", self.easy_open)?;
        check_probability("fault_rates.contour", self.contour)?;
        check_probability("fault_rates.label", self.label)
    }

    pub fn get(&self, feature: Feature) -> f64 {
        match feature {
            Feature::EasyOpen => self.easy_open,
            Feature::Contour => self.contour,
            Feature::Label => self.label,
        }
    }
}

impl Default for FaultRates {
    fn default() -> Self {
        FaultRates::uniform(0.2)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CanInstance {
    pub can_id: u64,
    pub easy_open_fault: bool,
    pub contour_fault: bool,
    pub label_fault: bool,
    /// One box per feature, in [`Feature::ALL`] order.
    pub truth_boxes: Vec<GroundTruthAnnotation>,
    pub label_text_truth: String,
}

impl CanInstance {
    pub fn fault(&self, feature: Feature) -> bool {
        match feature {
            Feature::EasyOpen => self.easy_open_fault,
            Feature::Contour => self.contour_fault,
            Feature::Label => self.label_fault,
        }
    }

    pub fn is_faulty(&self) -> bool {
        self.easy_open_fault || self.contour_fault || self.label_fault
    }

    /// Truth boxes in canonical-frame pixels.
    pub fn truth_pixel_boxes(&self) -> Vec<TruthBox> {
        self.truth_boxes
            .iter()
            .map(|a| TruthBox {
                bbox: frame_box(&a.bbox),
                label: a.label.clone(),
            })
            .collect()
    }

    /// Text physically readable on the can: nothing when the label is faulty.
    pub fn visible_label_text(&self) -> &str {
        if self.label_fault {
            ""
        } else {
            &self.label_text_truth
        }
    }
}

fn frame_box(n: &NormalizedBox) -> BoundingBox {
    to_corner_form(n, FRAME_SIZE, FRAME_SIZE).expect("frame size is positive")
}

pub fn random_label_fields<R: Rng + ?Sized>(rng: &mut R) -> LabelFields {
    let lot: String = (0..6)
        .map(|_| LOT_ALPHABET[rng.random_range(0..LOT_ALPHABET.len())] as char)
        .collect();
    let year = rng.random_range(2000..=2099);
    let month = rng.random_range(1..=12);
    let expiry = loop {
        let day = rng.random_range(1..=31);
        if let Some(d) = NaiveDate::from_ymd_opt(year, month, day) {
            break d;
        }
    };
    let product = format!("{:04}", rng.random_range(0..10_000));
    LabelFields::new(lot, expiry, product).expect("generated fields follow the grammar")
}

/// Draws one can: fault flags first, then geometry, then label text.
pub fn generate_can<R: Rng + ?Sized>(can_id: u64, rates: &FaultRates, rng: &mut R) -> CanInstance {
    let classes = ClassList::default();
    let easy_open_fault = rng.random::<f64>() < rates.easy_open;
    let contour_fault = rng.random::<f64>() < rates.contour;
    let label_fault = rng.random::<f64>() < rates.label;

    // Top view of the can: the contour is the rim, the easy-open ring sits
    // above centre and the printed label below it.
    let cx = 0.5 + rng.random_range(-0.05..0.05);
    let cy = 0.5 + rng.random_range(-0.05..0.05);
    let r = rng.random_range(0.30..0.34);
    let ring_shift = if easy_open_fault {
        let side = if rng.random::<bool>() { 1.0 } else { -1.0 };
        side * rng.random_range(0.10..0.25) * r
    } else {
        0.0
    };

    let geometry = [
        (
            Feature::EasyOpen,
            easy_open_fault,
            (cx + ring_shift, cy - 0.45 * r, 0.5 * r, 0.25 * r),
        ),
        (Feature::Contour, contour_fault, (cx, cy, 2.0 * r, 2.0 * r)),
        (Feature::Label, label_fault, (cx, cy + 0.4 * r, r, 0.3 * r)),
    ];
    let truth_boxes = geometry
        .iter()
        .map(
            |(feature, faulty, (bx, by, bw, bh))| GroundTruthAnnotation {
                label: classes
                    .by_name(&feature.class_name(*faulty))
                    .expect("default taxonomy has every feature class"),
                bbox: NormalizedBox::new(*bx, *by, *bw, *bh).expect("can geometry stays in frame"),
            },
        )
        .collect();

    CanInstance {
        can_id,
        easy_open_fault,
        contour_fault,
        label_fault,
        truth_boxes,
        label_text_truth: random_label_fields(rng).render(),
    }
}

/// Truncated-normal confidence model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfidenceModel {
    pub mean: f64,
    pub spread: f64,
}

impl ConfidenceModel {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.spread == 0.0 {
            return self.mean.clamp(0.0, 1.0);
        }
        let z: f64 = StandardNormal.sample(rng);
        (self.mean + self.spread * z).clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorProfile {
    /// Probability that a truth box produces no detection.
    pub miss_rate: f64,
    /// Expected number of spurious detections per can (Poisson mean).
    pub false_positive_rate: f64,
    /// Probability that a detection reports the wrong ok/fault variant.
    pub confusion_rate: f64,
    /// Box noise scale as a fraction of box size.
    pub localization_jitter: f64,
    pub tp_confidence: ConfidenceModel,
    pub fp_confidence: ConfidenceModel,
    pub nms_iou: f64,
}

impl DetectorProfile {
    /// No misses, no spurious boxes, no noise, confidence 1.
    pub fn perfect() -> Self {
        DetectorProfile {
            miss_rate: 0.0,
            false_positive_rate: 0.0,
            confusion_rate: 0.0,
            localization_jitter: 0.0,
            tp_confidence: ConfidenceModel {
                mean: 1.0,
                spread: 0.0,
            },
            ..DetectorProfile::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_probability("detector.miss_rate", self.miss_rate)?;
        check_probability("detector.confusion_rate", self.confusion_rate)?;
        check_probability("detector.tp_confidence.mean", self.tp_confidence.mean)?;
        check_probability("detector.fp_confidence.mean", self.fp_confidence.mean)?;
        let non_negative = [
            ("detector.false_positive_rate", self.false_positive_rate),
            ("detector.localization_jitter", self.localization_jitter),
            ("detector.tp_confidence.spread", self.tp_confidence.spread),
            ("detector.fp_confidence.spread", self.fp_confidence.spread),
        ];
        for (name, v) in non_negative {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!(
                    "{name} must be finite and >= 0, got {v}"
                )));
            }
        }
        if !(self.nms_iou > 0.0 && self.nms_iou < 1.0) {
            return Err(Error::Config(format!(
                "detector.nms_iou must be in (0, 1), got {}",
                self.nms_iou
            )));
        }
        Ok(())
    }
}

impl Default for DetectorProfile {
    fn default() -> Self {
        DetectorProfile {
            miss_rate: 0.05,
            false_positive_rate: 0.1,
            confusion_rate: 0.02,
            localization_jitter: 0.03,
            tp_confidence: ConfidenceModel {
                mean: 0.93,
                spread: 0.05,
            },
            fp_confidence: ConfidenceModel {
                mean: 0.45,
                spread: 0.15,
            },
            nms_iou: 0.45,
        }
    }
}

/// Flips `*_ok` <-> `*_fault` for the same feature.
fn confused_class(name: &str) -> Option<String> {
    if let Some(f) = name.strip_suffix("_ok") {
        Some(format!("{f}_fault"))
    } else {
        name.strip_suffix("_fault").map(|f| format!("{f}_ok"))
    }
}

fn jittered<R: Rng + ?Sized>(n: &NormalizedBox, jitter: f64, rng: &mut R) -> BoundingBox {
    if jitter == 0.0 {
        return frame_box(n);
    }
    let mut normal = || -> f64 { StandardNormal.sample(rng) };
    let cx = n.cx + jitter * n.w * normal();
    let cy = n.cy + jitter * n.h * normal();
    let w = (n.w * (1.0 + jitter * normal())).max(0.0);
    let h = (n.h * (1.0 + jitter * normal())).max(0.0);
    BoundingBox {
        x_min: (cx - w / 2.0) * FRAME_SIZE,
        y_min: (cy - h / 2.0) * FRAME_SIZE,
        x_max: (cx + w / 2.0) * FRAME_SIZE,
        y_max: (cy + h / 2.0) * FRAME_SIZE,
    }
    .clamp_to(FRAME_SIZE, FRAME_SIZE)
}

/// Imitates a trained detector on `can`. Output is NMS-filtered and sorted
/// by descending confidence; boxes are clamped to the canonical frame.
pub fn mock_detect<R: Rng + ?Sized>(
    can: &CanInstance,
    profile: &DetectorProfile,
    rng: &mut R,
) -> Vec<Detection> {
    let classes = ClassList::default();
    let mut dets = Vec::new();

    for truth in &can.truth_boxes {
        if rng.random::<f64>() < profile.miss_rate {
            continue;
        }
        let bbox = jittered(&truth.bbox, profile.localization_jitter, rng);
        let mut label = truth.label.clone();
        if rng.random::<f64>() < profile.confusion_rate {
            if let Some(other) = confused_class(&label.name).and_then(|n| classes.by_name(&n)) {
                label = other;
            }
        }
        let confidence = profile.tp_confidence.sample(rng);
        dets.push(Detection {
            bbox,
            label,
            confidence,
        });
    }

    let spurious = if profile.false_positive_rate > 0.0 {
        Poisson::new(profile.false_positive_rate)
            .map(|p| p.sample(rng) as usize)
            .unwrap_or(0)
    } else {
        0
    };
    for _ in 0..spurious {
        let label = classes
            .label(rng.random_range(0..classes.len()))
            .expect("index drawn from class range");
        let w = rng.random_range(0.05..0.2);
        let h = rng.random_range(0.05..0.2);
        let cx = rng.random_range(w / 2.0..1.0 - w / 2.0);
        let cy = rng.random_range(h / 2.0..1.0 - h / 2.0);
        let bbox = frame_box(&NormalizedBox { cx, cy, w, h });
        let confidence = profile.fp_confidence.sample(rng);
        dets.push(Detection {
            bbox,
            label,
            confidence,
        });
    }

    nms(&dets, profile.nms_iou)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OcrNoiseProfile {
    /// Per-character probability that a confusable character is swapped.
    pub substitution_rate: f64,
    /// Per-character probability that a character is dropped.
    pub deletion_rate: f64,
    pub confusables: Vec<(char, char)>,
}

impl OcrNoiseProfile {
    pub fn validate(&self) -> Result<()> {
        check_probability("ocr.substitution_rate", self.substitution_rate)?;
        check_probability("ocr.deletion_rate", self.deletion_rate)
    }

    pub fn confusable(&self, c: char) -> Option<char> {
        self.confusables.iter().find_map(|&(a, b)| {
            if c == a {
                Some(b)
            } else if c == b {
                Some(a)
            } else {
                None
            }
        })
    }
}

impl Default for OcrNoiseProfile {
    fn default() -> Self {
        OcrNoiseProfile {
            substitution_rate: 0.0,
            deletion_rate: 0.0,
            confusables: vec![('O', '0'), ('I', '1'), ('S', '5'), ('B', '8')],
        }
    }
}

const OCR_LINE_HEIGHT: f64 = 30.0;
const OCR_LINE_PITCH: f64 = 40.0;
const OCR_CHAR_WIDTH: f64 = 16.0;
const OCR_MARGIN: f64 = 20.0;

/// Imitates a text recognizer reading `truth`. Lines come back stacked top
/// to bottom; confidence is `1 - errors / length`.
pub fn mock_read_text<R: Rng + ?Sized>(
    truth: &str,
    profile: &OcrNoiseProfile,
    rng: &mut R,
) -> Vec<OcrLine> {
    truth
        .lines()
        .enumerate()
        .map(|(i, line)| {
            let mut text = String::with_capacity(line.len());
            let mut errors = 0usize;
            for c in line.chars() {
                if rng.random::<f64>() < profile.deletion_rate {
                    errors += 1;
                    continue;
                }
                match profile.confusable(c) {
                    Some(swap) if rng.random::<f64>() < profile.substitution_rate => {
                        errors += 1;
                        text.push(swap);
                    }
                    _ => text.push(c),
                }
            }
            let len = line.chars().count();
            let confidence = if len == 0 {
                1.0
            } else {
                1.0 - errors as f64 / len as f64
            };
            let top = OCR_MARGIN + i as f64 * OCR_LINE_PITCH;
            OcrLine {
                bbox: BoundingBox {
                    x_min: OCR_MARGIN,
                    y_min: top,
                    x_max: OCR_MARGIN + OCR_CHAR_WIDTH * len as f64,
                    y_max: top + OCR_LINE_HEIGHT,
                },
                text,
                confidence,
            }
        })
        .collect()
}
