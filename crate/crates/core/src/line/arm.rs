//! Six-servo suction arm.
//!
//! The arm is modelled at the level of servo angle targets. The shoulder
//! lowers to [`PICK_ANGLE`] to reach a can and rises to [`LIFT_ANGLE`] to
//! carry it; the base swings to the bin side and back.

use serde::{Deserialize, Serialize};

use super::{InspectionVerdict, LineConfig};
use crate::error::{Error, Result};

pub const HOME_ANGLE: f64 = 90.0;
pub const PICK_ANGLE: f64 = 180.0;
pub const LIFT_ANGLE: f64 = 90.0;
pub const MIN_ANGLE: f64 = 0.0;
pub const MAX_ANGLE: f64 = 180.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Servo {
    Base,
    Shoulder,
    Elbow,
    WristPitch,
    WristRoll,
    Gripper,
}

impl Servo {
    pub const ALL: [Servo; 6] = [
        Servo::Base,
        Servo::Shoulder,
        Servo::Elbow,
        Servo::WristPitch,
        Servo::WristRoll,
        Servo::Gripper,
    ];

    fn index(self) -> usize {
        self as usize
    }
}

/// Angles of all six servos, in [`Servo::ALL`] order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ServoState {
    angles: [f64; 6],
}

impl ServoState {
    pub fn home() -> Self {
        ServoState {
            angles: [HOME_ANGLE; 6],
        }
    }

    pub fn angle(&self, servo: Servo) -> f64 {
        self.angles[servo.index()]
    }

    pub fn angles(&self) -> [f64; 6] {
        self.angles
    }

    pub fn is_home(&self) -> bool {
        self.angles.iter().all(|a| *a == HOME_ANGLE)
    }

    pub fn set(&mut self, servo: Servo, angle: f64) -> Result<()> {
        if !(MIN_ANGLE..=MAX_ANGLE).contains(&angle) {
            return Err(Error::invalid(format!(
                "{servo:?} target {angle} outside [{MIN_ANGLE}, {MAX_ANGLE}]"
            )));
        }
        self.angles[servo.index()] = angle;
        Ok(())
    }
}

impl Default for ServoState {
    fn default() -> Self {
        ServoState::home()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "cmd", rename_all = "snake_case")]
pub enum ArmCommand {
    Move { servo: Servo, target_deg: f64 },
    SuctionOn,
    SuctionOff,
    Dwell { seconds: f64 },
}

impl ArmCommand {
    pub fn move_to(servo: Servo, target_deg: f64) -> Result<Self> {
        if !(MIN_ANGLE..=MAX_ANGLE).contains(&target_deg) {
            return Err(Error::invalid(format!(
                "{servo:?} target {target_deg} outside [{MIN_ANGLE}, {MAX_ANGLE}]"
            )));
        }
        Ok(ArmCommand::Move { servo, target_deg })
    }
}

/// Executes commands against a pose, checking angle limits and suction
/// state as it goes.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Arm {
    pub pose: ServoState,
    pub suction: bool,
}

impl Arm {
    pub fn new() -> Self {
        Self::default()
    }

    /// Applies one command and returns the time it takes.
    pub fn execute(&mut self, cmd: &ArmCommand, config: &LineConfig) -> Result<f64> {
        match *cmd {
            ArmCommand::Move { servo, target_deg } => {
                let from = self.pose.angle(servo);
                self.pose.set(servo, target_deg)?;
                Ok((target_deg - from).abs() / config.servo_speed_deg_per_s)
            }
            ArmCommand::SuctionOn => {
                if self.suction {
                    return Err(Error::invalid("suction already on"));
                }
                self.suction = true;
                Ok(0.0)
            }
            ArmCommand::SuctionOff => {
                if !self.suction {
                    return Err(Error::invalid("suction already off"));
                }
                self.suction = false;
                Ok(0.0)
            }
            ArmCommand::Dwell { seconds } => {
                if seconds.is_nan() || seconds < 0.0 {
                    return Err(Error::invalid(format!("negative dwell {seconds}")));
                }
                Ok(seconds)
            }
        }
    }

    /// Runs a whole sequence, returning its duration.
    pub fn run(&mut self, commands: &[ArmCommand], config: &LineConfig) -> Result<f64> {
        commands
            .iter()
            .try_fold(0.0, |t, c| Ok(t + self.execute(c, config)?))
    }
}

/// Pick, carry to the verdict's bin, release, and return home.
pub fn plan_arm_sequence(verdict: &InspectionVerdict, config: &LineConfig) -> Vec<ArmCommand> {
    let bin = config.bin_for(verdict.decision);
    let dwell = ArmCommand::Dwell {
        seconds: config.suction_dwell_s,
    };
    let mv = |servo, target_deg| ArmCommand::Move { servo, target_deg };

    let mut seq = vec![
        mv(Servo::Shoulder, PICK_ANGLE),
        ArmCommand::SuctionOn,
        dwell,
        mv(Servo::Shoulder, LIFT_ANGLE),
        mv(Servo::Base, bin.base_angle()),
        mv(Servo::Shoulder, PICK_ANGLE),
        ArmCommand::SuctionOff,
        dwell,
        mv(Servo::Shoulder, LIFT_ANGLE),
        mv(Servo::Base, HOME_ANGLE),
    ];
    seq.extend(Servo::ALL.iter().map(|s| mv(*s, HOME_ANGLE)));
    seq
}

/// Total time of `commands` starting from the home pose: angular distance
/// over servo speed for moves, the dwell time for dwells, zero otherwise.
pub fn sequence_duration(commands: &[ArmCommand], config: &LineConfig) -> f64 {
    let mut pose = ServoState::home();
    let mut total = 0.0;
    for cmd in commands {
        match *cmd {
            ArmCommand::Move { servo, target_deg } => {
                let i = servo.index();
                total += (target_deg - pose.angles[i]).abs() / config.servo_speed_deg_per_s;
                pose.angles[i] = target_deg;
            }
            ArmCommand::Dwell { seconds } => total += seconds,
            ArmCommand::SuctionOn | ArmCommand::SuctionOff => {}
        }
    }
    total
}
