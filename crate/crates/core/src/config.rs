//! The run configuration document (TOML).
//!
//! Every section is optional and falls back to its defaults:
//!
//! ```toml
//! line_id = "L1"
//! seed = 42
//!
//! [line]
//! belt_segment_time_s = 1.0
//! decision_threshold = 0.25
//! accept_bin_side = "right"     # or "left"
//! servo_speed_deg_per_s = 180.0
//! suction_dwell_s = 0.3
//! arrival_spacing_s = 2.0
//! verify_label = true
//!
//! [detector]
//! miss_rate = 0.05
//! false_positive_rate = 0.1
//! confusion_rate = 0.02
//! localization_jitter = 0.03
//! nms_iou = 0.45
//! tp_confidence = { mean = 0.93, spread = 0.05 }
//! fp_confidence = { mean = 0.45, spread = 0.15 }
//!
//! [ocr]
//! substitution_rate = 0.0
//! deletion_rate = 0.0
//! confusables = [["O", "0"], ["I", "1"], ["S", "5"], ["B", "8"]]
//!
//! [fault_rates]
//! easy_open = 0.2
//! contour = 0.2
//! label = 0.2
//!
//! [policy]
//! required_features = ["easy_open", "contour", "label"]
//! [policy.roles]
//! easy_open_ok = { role = "ok", feature = "easy_open" }
//! easy_open_fault = { role = "fault", feature = "easy_open" }
//! # ... one entry per class; `{ role = "ignore" }` drops a class
//!
//! [telemetry]
//! sink = "file"                 # or "none"
//! file = "telemetry.log"        # relative to the output directory
//!
//! [dataset]
//! split_ratio = 0.8
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::line::{DecisionPolicy, LineConfig, SimulationSetup};
use crate::synthetic::{DetectorProfile, FaultRates, OcrNoiseProfile};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SinkKind {
    File,
    None,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TelemetryConfig {
    pub sink: SinkKind,
    pub file: String,
}

impl Default for TelemetryConfig {
    fn default() -> Self {
        TelemetryConfig {
            sink: SinkKind::File,
            file: "telemetry.log".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetGenConfig {
    pub split_ratio: f64,
}

impl Default for DatasetGenConfig {
    fn default() -> Self {
        DatasetGenConfig { split_ratio: 0.8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub line_id: String,
    pub seed: u64,
    pub line: LineConfig,
    pub detector: DetectorProfile,
    pub ocr: OcrNoiseProfile,
    pub fault_rates: FaultRates,
    pub policy: DecisionPolicy,
    pub telemetry: TelemetryConfig,
    pub dataset: DatasetGenConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let setup = SimulationSetup::default();
        RunConfig {
            line_id: setup.line_id,
            seed: 0,
            line: setup.line,
            detector: setup.detector,
            ocr: setup.ocr,
            fault_rates: setup.fault_rates,
            policy: setup.policy,
            telemetry: TelemetryConfig::default(),
            dataset: DatasetGenConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.setup().validate()?;
        let r = self.dataset.split_ratio;
        if !(r > 0.0 && r < 1.0) {
            return Err(Error::Config(format!(
                "dataset.split_ratio must be in (0, 1), got {r}"
            )));
        }
        if self.telemetry.sink == SinkKind::File && self.telemetry.file.trim().is_empty() {
            return Err(Error::Config("telemetry.file is empty".into()));
        }
        Ok(())
    }

    pub fn setup(&self) -> SimulationSetup {
        SimulationSetup {
            line_id: self.line_id.clone(),
            line: self.line.clone(),
            detector: self.detector.clone(),
            ocr: self.ocr.clone(),
            fault_rates: self.fault_rates,
            policy: self.policy.clone(),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }
}
