//! Geometric and classification vocabulary shared by the evaluator, the
//! synthetic line and the controller.
//!
//! Boxes come in two forms: [`BoundingBox`] is corner form in pixels
//! (origin top-left), [`NormalizedBox`] is the YOLO centre/size form with
//! every component a fraction of the image dimensions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Slack allowed on normalized coordinates before a value is rejected.
/// Values inside the slack are clamped back into `[0, 1]`.
pub const NORMALIZED_TOLERANCE: f64 = 1e-6;

/// Axis-aligned box in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BoundingBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self> {
        let b = BoundingBox {
            x_min,
            y_min,
            x_max,
            y_max,
        };
        if ![x_min, y_min, x_max, y_max].iter().all(|v| v.is_finite()) {
            return Err(Error::invalid(format!(
                "non-finite box coordinate in {b:?}"
            )));
        }
        if x_min > x_max || y_min > y_max {
            return Err(Error::invalid(format!("inverted box {b:?}")));
        }
        Ok(b)
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        area(self)
    }

    pub fn center(&self) -> (f64, f64) {
        (
            (self.x_min + self.x_max) / 2.0,
            (self.y_min + self.y_max) / 2.0,
        )
    }

    pub fn translate(&self, dx: f64, dy: f64) -> Self {
        BoundingBox {
            x_min: self.x_min + dx,
            y_min: self.y_min + dy,
            x_max: self.x_max + dx,
            y_max: self.y_max + dy,
        }
    }

    /// Clamps every corner into `[0, img_w] x [0, img_h]`.
    pub fn clamp_to(&self, img_w: f64, img_h: f64) -> Self {
        BoundingBox {
            x_min: self.x_min.clamp(0.0, img_w),
            y_min: self.y_min.clamp(0.0, img_h),
            x_max: self.x_max.clamp(0.0, img_w),
            y_max: self.y_max.clamp(0.0, img_h),
        }
    }

    /// Inverse of [`to_corner_form`].
    pub fn to_normalized(&self, img_w: f64, img_h: f64) -> Result<NormalizedBox> {
        check_image_dims(img_w, img_h)?;
        NormalizedBox::new(
            (self.x_min + self.x_max) / 2.0 / img_w,
            (self.y_min + self.y_max) / 2.0 / img_h,
            self.width() / img_w,
            self.height() / img_h,
        )
    }
}

/// Area in square pixels. Zero for degenerate boxes.
pub fn area(b: &BoundingBox) -> f64 {
    (b.x_max - b.x_min).max(0.0) * (b.y_max - b.y_min).max(0.0)
}

/// YOLO-style box: centre and size as fractions of the image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizedBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl NormalizedBox {
    /// Validates the box, clamping components that stray outside the frame
    /// by at most [`NORMALIZED_TOLERANCE`].
    pub fn new(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self> {
        let cx = clamp_fraction("cx", cx)?;
        let cy = clamp_fraction("cy", cy)?;
        let w = clamp_fraction("w", w)?;
        let h = clamp_fraction("h", h)?;
        check_extent("x", cx, w)?;
        check_extent("y", cy, h)?;
        Ok(NormalizedBox { cx, cy, w, h })
    }
}

fn clamp_fraction(name: &str, v: f64) -> Result<f64> {
    if !v.is_finite() {
        return Err(Error::invalid(format!("{name} is not finite")));
    }
    if !(-NORMALIZED_TOLERANCE..=1.0 + NORMALIZED_TOLERANCE).contains(&v) {
        return Err(Error::invalid(format!("{name} out of range: {v}")));
    }
    Ok(v.clamp(0.0, 1.0))
}

fn check_extent(axis: &str, centre: f64, size: f64) -> Result<()> {
    let lo = centre - size / 2.0;
    let hi = centre + size / 2.0;
    if lo < -NORMALIZED_TOLERANCE || hi > 1.0 + NORMALIZED_TOLERANCE {
        return Err(Error::invalid(format!(
            "box extends outside the image along {axis}: [{lo}, {hi}]"
        )));
    }
    Ok(())
}

fn check_image_dims(img_w: f64, img_h: f64) -> Result<()> {
    if !(img_w > 0.0 && img_h > 0.0) || !img_w.is_finite() || !img_h.is_finite() {
        return Err(Error::invalid(format!(
            "image dimensions must be positive, got {img_w}x{img_h}"
        )));
    }
    Ok(())
}

/// Converts a normalized box into pixel corner form, clamped to the image.
pub fn to_corner_form(n: &NormalizedBox, img_w: f64, img_h: f64) -> Result<BoundingBox> {
    check_image_dims(img_w, img_h)?;
    let b = BoundingBox {
        x_min: (n.cx - n.w / 2.0) * img_w,
        y_min: (n.cy - n.h / 2.0) * img_h,
        x_max: (n.cx + n.w / 2.0) * img_w,
        y_max: (n.cy + n.h / 2.0) * img_h,
    };
    Ok(b.clamp_to(img_w, img_h))
}

/// The three inspected features of a can.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feature {
    EasyOpen,
    Contour,
    Label,
}

impl Feature {
    pub const ALL: [Feature; 3] = [Feature::EasyOpen, Feature::Contour, Feature::Label];

    pub fn as_str(&self) -> &'static str {
        match self {
            Feature::EasyOpen => "easy_open",
            Feature::Contour => "contour",
            Feature::Label => "label",
        }
    }

    /// Class name for this feature in the given condition, e.g. `contour_fault`.
    pub fn class_name(&self, faulty: bool) -> String {
        format!("{}_{}", self.as_str(), if faulty { "fault" } else { "ok" })
    }
}

/// Default per-feature taxonomy, in id order.
pub const DEFAULT_CLASS_NAMES: [&str; 6] = [
    "easy_open_ok",
    "easy_open_fault",
    "contour_ok",
    "contour_fault",
    "label_ok",
    "label_fault",
];

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ClassLabel {
    pub id: usize,
    pub name: String,
}

/// Ordered list of class names; a class id is its position in the list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassList {
    names: Vec<String>,
}

impl ClassList {
    pub fn new<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Result<Self> {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        if names.is_empty() {
            return Err(Error::invalid("class list is empty"));
        }
        for (i, n) in names.iter().enumerate() {
            if n.trim().is_empty() {
                return Err(Error::invalid(format!("class {i} has an empty name")));
            }
            if names[..i].contains(n) {
                return Err(Error::invalid(format!("duplicate class: {n}")));
            }
        }
        Ok(ClassList { names })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn label(&self, id: usize) -> Result<ClassLabel> {
        self.names
            .get(id)
            .map(|name| ClassLabel {
                id,
                name: name.clone(),
            })
            .ok_or_else(|| {
                Error::invalid(format!(
                    "class id {id} out of range for {} classes",
                    self.names.len()
                ))
            })
    }

    pub fn by_name(&self, name: &str) -> Option<ClassLabel> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|id| ClassLabel {
                id,
                name: name.to_string(),
            })
    }
}

impl Default for ClassList {
    fn default() -> Self {
        ClassList {
            names: DEFAULT_CLASS_NAMES.iter().map(|s| s.to_string()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    pub label: ClassLabel,
    pub confidence: f64,
}

impl Detection {
    pub fn new(bbox: BoundingBox, label: ClassLabel, confidence: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&confidence) {
            return Err(Error::invalid(format!(
                "confidence {confidence} outside [0, 1]"
            )));
        }
        Ok(Detection {
            bbox,
            label,
            confidence,
        })
    }
}

/// A ground-truth box in pixel coordinates, the form evaluation works in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthBox {
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    pub label: ClassLabel,
}
