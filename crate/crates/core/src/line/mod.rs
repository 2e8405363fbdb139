//! The physical line: belt timing, photoelectric sensors, the decision
//! engine, the sorting arm and the event-driven simulation tying them
//! together.

mod arm;
mod decision;
mod sensor;
mod sim;

pub use arm::{
    plan_arm_sequence, sequence_duration, Arm, ArmCommand, Servo, ServoState, HOME_ANGLE,
    LIFT_ANGLE, PICK_ANGLE,
};
pub use decision::{
    decide, missing_reason, ClassRole, Decision, DecisionPolicy, InspectionVerdict,
};
pub use sensor::{sensor_edge, LogicLevel, SensorState};
pub use sim::{
    run_simulation, BinCounts, CanOutcome, Confusion, Interval, RunSummary, SensorTriggers,
    SimulationRun, SimulationSetup, TelemetryReport,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which container a can ends up in, as seen facing the arm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BinSide {
    Left,
    Right,
}

impl BinSide {
    pub fn opposite(self) -> Self {
        match self {
            BinSide::Left => BinSide::Right,
            BinSide::Right => BinSide::Left,
        }
    }

    /// Base servo angle that points the arm at this bin.
    pub fn base_angle(self) -> f64 {
        match self {
            BinSide::Right => 0.0,
            BinSide::Left => 180.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LineConfig {
    /// Belt run time between stations.
    pub belt_segment_time_s: f64,
    /// Minimum confidence for a detection to count toward a verdict.
    pub decision_threshold: f64,
    pub accept_bin_side: BinSide,
    pub servo_speed_deg_per_s: f64,
    pub suction_dwell_s: f64,
    /// Nominal spacing between can arrivals at the belt entry.
    pub arrival_spacing_s: f64,
    /// Reject cans whose label text cannot be read back.
    pub verify_label: bool,
}

impl Default for LineConfig {
    fn default() -> Self {
        LineConfig {
            belt_segment_time_s: 1.0,
            decision_threshold: 0.25,
            accept_bin_side: BinSide::Right,
            servo_speed_deg_per_s: 180.0,
            suction_dwell_s: 0.3,
            arrival_spacing_s: 2.0,
            verify_label: true,
        }
    }
}

impl LineConfig {
    pub fn validate(&self) -> Result<()> {
        let durations = [
            ("line.belt_segment_time_s", self.belt_segment_time_s),
            ("line.servo_speed_deg_per_s", self.servo_speed_deg_per_s),
            ("line.suction_dwell_s", self.suction_dwell_s),
            ("line.arrival_spacing_s", self.arrival_spacing_s),
        ];
        for (name, v) in durations {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be > 0, got {v}")));
            }
        }
        let tau = self.decision_threshold;
        if !(tau > 0.0 && tau < 1.0) {
            return Err(Error::Config(format!(
                "line.decision_threshold must be in (0, 1), got {tau}"
            )));
        }
        Ok(())
    }

    pub fn bin_for(&self, decision: Decision) -> BinSide {
        match decision {
            Decision::Accept => self.accept_bin_side,
            Decision::Reject => self.accept_bin_side.opposite(),
        }
    }
}
