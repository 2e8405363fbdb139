use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LogicLevel {
    Low,
    High,
}

/// Active-low photoelectric sensor: the output is pulled LOW while an
/// object is in front of it and rests HIGH otherwise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SensorState {
    pub detecting: bool,
    pub output_level: LogicLevel,
}

impl SensorState {
    pub const IDLE: SensorState = SensorState {
        detecting: false,
        output_level: LogicLevel::High,
    };

    fn observing(present: bool) -> Self {
        SensorState {
            detecting: present,
            output_level: if present {
                LogicLevel::Low
            } else {
                LogicLevel::High
            },
        }
    }
}

impl Default for SensorState {
    fn default() -> Self {
        SensorState::IDLE
    }
}

/// Updates the sensor; the trigger fires only on a HIGH -> LOW edge.
pub fn sensor_edge(present: bool, previous: SensorState) -> (SensorState, bool) {
    let next = SensorState::observing(present);
    let trigger = previous.output_level == LogicLevel::High && next.output_level == LogicLevel::Low;
    (next, trigger)
}
