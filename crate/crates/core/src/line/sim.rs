//! Discrete-event simulation of the stop-and-go line.
//!
//! One can is on the belt at a time. For each can:
//!
//! 1. `arrival`: the can enters and the belt runs one segment;
//! 2. the camera sensor's falling edge fires `capture`, then `detection`
//!    and `verdict` at the same instant;
//! 3. the belt runs a second segment to the arm sensor, whose falling edge
//!    halts the belt and fires `arm_start`;
//! 4. after the planned sequence, `arm_done` and `binned`.
//!
//! The next can enters at its nominal arrival time or when the arm is done,
//! whichever is later. All times come from [`LineConfig`], never a wall
//! clock.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};

use serde::{Deserialize, Serialize};

use super::arm::{plan_arm_sequence, sequence_duration, Arm, ArmCommand};
use super::decision::{decide, Decision, DecisionPolicy, InspectionVerdict};
use super::sensor::{sensor_edge, SensorState};
use super::{BinSide, LineConfig};
use crate::error::{Error, Result};
use crate::eval::Scene;
use crate::model::ClassList;
use crate::ocr::{assemble_lines, parse_label, verify_label};
use crate::rng::{substream, Stream};
use crate::synthetic::{
    generate_can, mock_detect, mock_read_text, CanInstance, DetectorProfile, FaultRates,
    OcrNoiseProfile,
};
use crate::telemetry::{
    validate_line_id, DeliveryStats, DetectionRecord, EventPayload, InspectionEvent,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationSetup {
    pub line_id: String,
    pub line: LineConfig,
    pub detector: DetectorProfile,
    pub ocr: OcrNoiseProfile,
    pub fault_rates: FaultRates,
    pub policy: DecisionPolicy,
}

impl Default for SimulationSetup {
    fn default() -> Self {
        SimulationSetup {
            line_id: "L1".into(),
            line: LineConfig::default(),
            detector: DetectorProfile::default(),
            ocr: OcrNoiseProfile::default(),
            fault_rates: FaultRates::default(),
            policy: DecisionPolicy::default(),
        }
    }
}

impl SimulationSetup {
    pub fn validate(&self) -> Result<()> {
        validate_line_id(&self.line_id).map_err(|e| Error::Config(e.to_string()))?;
        self.line.validate()?;
        self.detector.validate()?;
        self.ocr.validate()?;
        self.fault_rates.validate()?;
        self.policy.validate_for(&ClassList::default())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinCounts {
    pub accepted: u64,
    pub rejected: u64,
    pub left: u64,
    pub right: u64,
}

/// Verdicts against ground truth; "positive" means the can is faulty.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub true_accept: u64,
    pub false_accept: u64,
    pub true_reject: u64,
    pub false_reject: u64,
}

impl Confusion {
    pub fn sorting_errors(&self) -> u64 {
        self.false_accept + self.false_reject
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SensorTriggers {
    pub camera: u64,
    pub arm: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub v: u32,
    pub line_id: String,
    pub seed: u64,
    pub n_cans: u64,
    pub verdicts: u64,
    pub bins: BinCounts,
    pub confusion: Confusion,
    pub sim_duration_s: f64,
    pub throughput_cans_per_min: f64,
    pub sensor_triggers: SensorTriggers,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub telemetry: Option<TelemetryReport>,
}

/// Delivery outcome of the telemetry sink, attached by the caller that ran
/// the publisher.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TelemetryReport {
    pub sink: String,
    #[serde(flatten)]
    pub stats: DeliveryStats,
    pub sink_dropped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CanOutcome {
    pub can_id: u64,
    pub truly_faulty: bool,
    pub decision: Decision,
    pub reasons: Vec<String>,
    pub bin: BinSide,
}

/// A closed time interval `[start, end]` in simulated seconds.
pub type Interval = (f64, f64);

#[derive(Debug, Clone)]
pub struct SimulationRun {
    pub events: Vec<InspectionEvent>,
    pub cans: Vec<CanInstance>,
    /// Detections and pixel-space truth per can, for offline evaluation.
    pub scenes: Vec<Scene>,
    pub outcomes: Vec<CanOutcome>,
    pub arm_sequences: Vec<Vec<ArmCommand>>,
    pub belt_motion: Vec<Interval>,
    pub arm_motion: Vec<Interval>,
    pub bins: BinCounts,
    pub summary: RunSummary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Stage {
    Arrive,
    ReachCamera,
    ReachArm,
    ArmDone,
}

#[derive(Debug, Clone, Copy)]
struct Scheduled {
    t: f64,
    order: u64,
    can_id: u64,
    stage: Stage,
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Scheduled {}

impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Scheduled {
    // Reversed so the max-heap pops the earliest event first.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .t
            .total_cmp(&self.t)
            .then_with(|| other.order.cmp(&self.order))
    }
}

struct InFlight {
    can: CanInstance,
    verdict: Option<InspectionVerdict>,
    sequence: Vec<ArmCommand>,
    bin: BinSide,
}

struct Sim<'a> {
    setup: &'a SimulationSetup,
    seed: u64,
    queue: BinaryHeap<Scheduled>,
    next_order: u64,
    events: Vec<InspectionEvent>,
    camera: SensorState,
    arm_sensor: SensorState,
    triggers: SensorTriggers,
    current: Option<InFlight>,
    run: SimulationRun,
}

impl<'a> Sim<'a> {
    fn schedule(&mut self, t: f64, can_id: u64, stage: Stage) {
        self.queue.push(Scheduled {
            t,
            order: self.next_order,
            can_id,
            stage,
        });
        self.next_order += 1;
    }

    fn emit(&mut self, t: f64, can_id: u64, payload: EventPayload) {
        let seq = self.events.len() as u64 + 1;
        self.events.push(InspectionEvent {
            seq,
            line_id: self.setup.line_id.clone(),
            t_sim_s: t,
            can_id,
            payload,
        });
    }

    fn in_flight(&mut self, can_id: u64) -> Result<&mut InFlight> {
        self.current
            .as_mut()
            .filter(|c| c.can.can_id == can_id)
            .ok_or_else(|| Error::invalid(format!("no can {can_id} on the line")))
    }

    fn step(&mut self, ev: Scheduled) -> Result<()> {
        let setup: &'a SimulationSetup = self.setup;
        let line = &setup.line;
        let t = ev.t;
        match ev.stage {
            Stage::Arrive => {
                let mut rng = substream(self.seed, ev.can_id, Stream::Generate);
                let can = generate_can(ev.can_id, &self.setup.fault_rates, &mut rng);
                self.current = Some(InFlight {
                    can,
                    verdict: None,
                    sequence: Vec::new(),
                    bin: line.accept_bin_side,
                });
                self.emit(t, ev.can_id, EventPayload::Arrival);
                let arrive_at_camera = t + line.belt_segment_time_s;
                self.run.belt_motion.push((t, arrive_at_camera));
                self.schedule(arrive_at_camera, ev.can_id, Stage::ReachCamera);
            }
            Stage::ReachCamera => {
                let (state, trigger) = sensor_edge(true, self.camera);
                self.camera = state;
                if !trigger {
                    return Err(Error::invalid("camera sensor did not trigger"));
                }
                self.triggers.camera += 1;
                self.emit(t, ev.can_id, EventPayload::Capture);

                let seed = self.seed;
                let flight = self.in_flight(ev.can_id)?;
                let dets = mock_detect(
                    &flight.can,
                    &setup.detector,
                    &mut substream(seed, ev.can_id, Stream::Detect),
                );
                let ocr_lines = mock_read_text(
                    flight.can.visible_label_text(),
                    &setup.ocr,
                    &mut substream(seed, ev.can_id, Stream::Ocr),
                );
                let texts = assemble_lines(&ocr_lines);

                let mut verdict = decide(
                    ev.can_id,
                    &dets,
                    &setup.policy,
                    setup.line.decision_threshold,
                )?;
                if setup.line.verify_label {
                    if let Some(reason) = verify_label(&parse_label(&texts), &flight.can) {
                        verdict.add_reason(reason);
                    }
                }
                let mut max_confidence: BTreeMap<String, f64> = BTreeMap::new();
                for d in &dets {
                    let slot = max_confidence.entry(d.label.name.clone()).or_insert(0.0);
                    *slot = slot.max(d.confidence);
                }
                let truths = flight.can.truth_pixel_boxes();
                flight.verdict = Some(verdict.clone());

                self.run.scenes.push(Scene {
                    detections: dets.clone(),
                    truths,
                });
                self.emit(
                    t,
                    ev.can_id,
                    EventPayload::Detection {
                        detections: dets.iter().map(DetectionRecord::from).collect(),
                        ocr: texts,
                    },
                );
                self.emit(
                    t,
                    ev.can_id,
                    EventPayload::Verdict {
                        decision: verdict.decision,
                        reasons: verdict.reasons,
                        max_confidence,
                    },
                );

                let arrive_at_arm = t + setup.line.belt_segment_time_s;
                self.camera = sensor_edge(false, self.camera).0;
                self.run.belt_motion.push((t, arrive_at_arm));
                self.schedule(arrive_at_arm, ev.can_id, Stage::ReachArm);
            }
            Stage::ReachArm => {
                let (state, trigger) = sensor_edge(true, self.arm_sensor);
                self.arm_sensor = state;
                if !trigger {
                    return Err(Error::invalid("arm sensor did not trigger"));
                }
                self.triggers.arm += 1;

                let flight = self.in_flight(ev.can_id)?;
                let verdict = flight
                    .verdict
                    .as_ref()
                    .ok_or_else(|| Error::invalid("can reached the arm without a verdict"))?;
                flight.bin = line.bin_for(verdict.decision);
                flight.sequence = plan_arm_sequence(verdict, line);
                let duration = sequence_duration(&flight.sequence, line);
                let bin = flight.bin;
                self.emit(t, ev.can_id, EventPayload::ArmStart { bin });
                self.run.arm_motion.push((t, t + duration));
                self.schedule(t + duration, ev.can_id, Stage::ArmDone);
            }
            Stage::ArmDone => {
                let flight = self
                    .current
                    .take()
                    .filter(|c| c.can.can_id == ev.can_id)
                    .ok_or_else(|| Error::invalid(format!("no can {} on the line", ev.can_id)))?;
                let verdict = flight
                    .verdict
                    .ok_or_else(|| Error::invalid("arm finished without a verdict"))?;

                let mut arm = Arm::new();
                let duration = arm.run(&flight.sequence, line)?;
                if !arm.pose.is_home() {
                    return Err(Error::invalid("arm did not return home"));
                }
                self.arm_sensor = sensor_edge(false, self.arm_sensor).0;

                self.emit(
                    t,
                    ev.can_id,
                    EventPayload::ArmDone {
                        bin: flight.bin,
                        duration_s: duration,
                    },
                );
                self.emit(
                    t,
                    ev.can_id,
                    EventPayload::Binned {
                        bin: flight.bin,
                        decision: verdict.decision,
                    },
                );

                let bins = &mut self.run.bins;
                match verdict.decision {
                    Decision::Accept => bins.accepted += 1,
                    Decision::Reject => bins.rejected += 1,
                }
                match flight.bin {
                    BinSide::Left => bins.left += 1,
                    BinSide::Right => bins.right += 1,
                }
                let truly_faulty = flight.can.is_faulty();
                let c = &mut self.run.summary.confusion;
                match (truly_faulty, verdict.decision) {
                    (false, Decision::Accept) => c.true_accept += 1,
                    (true, Decision::Accept) => c.false_accept += 1,
                    (true, Decision::Reject) => c.true_reject += 1,
                    (false, Decision::Reject) => c.false_reject += 1,
                }
                self.run.outcomes.push(CanOutcome {
                    can_id: ev.can_id,
                    truly_faulty,
                    decision: verdict.decision,
                    reasons: verdict.reasons,
                    bin: flight.bin,
                });
                self.run.arm_sequences.push(flight.sequence);
                self.run.cans.push(flight.can);

                let next = ev.can_id + 1;
                if next <= self.run.summary.n_cans {
                    let nominal = (next - 1) as f64 * line.arrival_spacing_s;
                    self.schedule(nominal.max(t), next, Stage::Arrive);
                }
            }
        }
        Ok(())
    }
}

/// Runs `n_cans` cans (ids `1..=n_cans`) through the line.
pub fn run_simulation(setup: &SimulationSetup, n_cans: u64, seed: u64) -> Result<SimulationRun> {
    setup.validate()?;
    let summary = RunSummary {
        v: 1,
        line_id: setup.line_id.clone(),
        seed,
        n_cans,
        verdicts: 0,
        bins: BinCounts::default(),
        confusion: Confusion::default(),
        sim_duration_s: 0.0,
        throughput_cans_per_min: 0.0,
        sensor_triggers: SensorTriggers { camera: 0, arm: 0 },
        telemetry: None,
    };
    let mut sim = Sim {
        setup,
        seed,
        queue: BinaryHeap::new(),
        next_order: 0,
        events: Vec::new(),
        camera: SensorState::IDLE,
        arm_sensor: SensorState::IDLE,
        triggers: SensorTriggers { camera: 0, arm: 0 },
        current: None,
        run: SimulationRun {
            events: Vec::new(),
            cans: Vec::new(),
            scenes: Vec::new(),
            outcomes: Vec::new(),
            arm_sequences: Vec::new(),
            belt_motion: Vec::new(),
            arm_motion: Vec::new(),
            bins: BinCounts::default(),
            summary,
        },
    };
    if n_cans > 0 {
        sim.schedule(0.0, 1, Stage::Arrive);
    }
    let mut clock = 0.0f64;
    while let Some(ev) = sim.queue.pop() {
        clock = clock.max(ev.t);
        sim.step(ev)?;
    }

    let mut run = sim.run;
    run.events = sim.events;
    run.summary.verdicts = run.outcomes.len() as u64;
    run.summary.bins = run.bins;
    run.summary.sensor_triggers = sim.triggers;
    run.summary.sim_duration_s = clock;
    run.summary.throughput_cans_per_min = if clock > 0.0 {
        n_cans as f64 / (clock / 60.0)
    } else {
        0.0
    };
    Ok(run)
}
