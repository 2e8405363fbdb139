//! Simulation and evaluation toolkit for a camera-inspected canning line.
//!
//! A can passes a photoelectric sensor, is photographed, run through an
//! object detector (easy-open ring, contour and label, each either ok or
//! faulty) and an OCR pass over its printed label, and is then picked by a
//! six-servo suction arm into an accept or reject bin. This crate models
//! that line deterministically from a seed and provides the offline
//! detection metrics (IoU matching, AP, mAP@0.5 and mAP@0.5:0.95) used to
//! judge the detector.
//!
//! * [`model`]: boxes, classes, detections.
//! * [`annotation`]: YOLO label files, dataset configs, train/val splits.
//! * [`eval`]: matching, PR curves, AP/mAP, training-metrics tables.
//! * [`synthetic`]: seeded can generator and mock detector/OCR.
//! * [`ocr`]: label text parsing and verification.
//! * [`line`]: sensors, decision policy, arm planning, the event simulation.
//! * [`telemetry`]: event encoding, sinks and at-least-once publishing.
//! * [`config`] and [`cli`]: the run configuration and command-line entry.

pub mod annotation;
pub mod cli;
pub mod config;
pub mod error;
pub mod eval;
pub mod line;
pub mod model;
pub mod ocr;
pub mod rng;
pub mod synthetic;
pub mod telemetry;

pub use error::{Error, Result};
