//! Inspection events and their wire formats.
//!
//! # Payload schema (`v: 1`)
//!
//! Every payload is a compact JSON object whose keys always appear in this
//! order:
//!
//! | key        | type            | present for            |
//! |------------|-----------------|------------------------|
//! | `v`        | integer, `1`    | all                    |
//! | `seq`      | integer         | all                    |
//! | `line`     | string          | all                    |
//! | `t`        | number, seconds | all                    |
//! | `kind`     | string          | all                    |
//! | `can`      | integer         | all                    |
//! | `dets`     | array           | `detection`            |
//! | `ocr`      | array of string | `detection`            |
//! | `decision` | `accept`/`reject` | `verdict`, `binned`  |
//! | `reasons`  | array of string | `verdict`              |
//! | `max_conf` | object, class -> number, keys sorted | `verdict` |
//! | `bin`      | `left`/`right`  | `arm_start`, `arm_done`, `binned` |
//! | `dur`      | number, seconds | `arm_done`             |
//!
//! A `dets` entry is `{"cls":<name>,"conf":<number>,"box":[x0,y0,x1,y1]}`.
//! Numbers use their shortest round-trip representation.
//!
//! Topics are `canline/v1/<line_id>/<kind>`; the file sink writes one
//! `<topic>\t<payload>\n` record per publish.

use std::collections::{BTreeMap, HashSet, VecDeque};
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::line::{BinSide, Decision};
use crate::model::Detection;

pub const SCHEMA_VERSION: u32 = 1;
pub const TOPIC_PREFIX: &str = "canline/v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Arrival,
    Capture,
    Detection,
    Verdict,
    ArmStart,
    ArmDone,
    Binned,
}

impl EventKind {
    pub const ALL: [EventKind; 7] = [
        EventKind::Arrival,
        EventKind::Capture,
        EventKind::Detection,
        EventKind::Verdict,
        EventKind::ArmStart,
        EventKind::ArmDone,
        EventKind::Binned,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            EventKind::Arrival => "arrival",
            EventKind::Capture => "capture",
            EventKind::Detection => "detection",
            EventKind::Verdict => "verdict",
            EventKind::ArmStart => "arm_start",
            EventKind::ArmDone => "arm_done",
            EventKind::Binned => "binned",
        }
    }
}

/// Compact detection record carried by `detection` events.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionRecord {
    #[serde(rename = "cls")]
    pub class: String,
    #[serde(rename = "conf")]
    pub confidence: f64,
    #[serde(rename = "box")]
    pub bbox: [f64; 4],
}

impl From<&Detection> for DetectionRecord {
    fn from(d: &Detection) -> Self {
        DetectionRecord {
            class: d.label.name.clone(),
            confidence: d.confidence,
            bbox: [d.bbox.x_min, d.bbox.y_min, d.bbox.x_max, d.bbox.y_max],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum EventPayload {
    Arrival,
    Capture,
    Detection {
        detections: Vec<DetectionRecord>,
        ocr: Vec<String>,
    },
    Verdict {
        decision: Decision,
        reasons: Vec<String>,
        max_confidence: BTreeMap<String, f64>,
    },
    ArmStart {
        bin: BinSide,
    },
    ArmDone {
        bin: BinSide,
        duration_s: f64,
    },
    Binned {
        bin: BinSide,
        decision: Decision,
    },
}

impl EventPayload {
    pub fn kind(&self) -> EventKind {
        match self {
            EventPayload::Arrival => EventKind::Arrival,
            EventPayload::Capture => EventKind::Capture,
            EventPayload::Detection { .. } => EventKind::Detection,
            EventPayload::Verdict { .. } => EventKind::Verdict,
            EventPayload::ArmStart { .. } => EventKind::ArmStart,
            EventPayload::ArmDone { .. } => EventKind::ArmDone,
            EventPayload::Binned { .. } => EventKind::Binned,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InspectionEvent {
    pub seq: u64,
    pub line_id: String,
    pub t_sim_s: f64,
    pub can_id: u64,
    pub payload: EventPayload,
}

impl InspectionEvent {
    pub fn kind(&self) -> EventKind {
        self.payload.kind()
    }
}

// Kind-specific fields, shared by the telemetry and event-log encodings.
#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WirePayload {
    #[serde(skip_serializing_if = "Option::is_none")]
    dets: Option<Vec<DetectionRecord>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    ocr: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    decision: Option<Decision>,
    #[serde(skip_serializing_if = "Option::is_none")]
    reasons: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    max_conf: Option<BTreeMap<String, f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    bin: Option<BinSide>,
    #[serde(skip_serializing_if = "Option::is_none")]
    dur: Option<f64>,
}

impl WirePayload {
    fn from_payload(p: &EventPayload) -> Self {
        let mut w = WirePayload::default();
        match p {
            EventPayload::Arrival | EventPayload::Capture => {}
            EventPayload::Detection { detections, ocr } => {
                w.dets = Some(detections.clone());
                w.ocr = Some(ocr.clone());
            }
            EventPayload::Verdict {
                decision,
                reasons,
                max_confidence,
            } => {
                w.decision = Some(*decision);
                w.reasons = Some(reasons.clone());
                w.max_conf = Some(max_confidence.clone());
            }
            EventPayload::ArmStart { bin } => w.bin = Some(*bin),
            EventPayload::ArmDone { bin, duration_s } => {
                w.bin = Some(*bin);
                w.dur = Some(*duration_s);
            }
            EventPayload::Binned { bin, decision } => {
                w.bin = Some(*bin);
                w.decision = Some(*decision);
            }
        }
        w
    }

    fn into_payload(self, kind: EventKind) -> Result<EventPayload> {
        fn need<T>(v: Option<T>, field: &str, kind: EventKind) -> Result<T> {
            v.ok_or_else(|| {
                Error::parse(0, format!("{} event is missing `{field}`", kind.as_str()))
            })
        }
        let payload = match kind {
            EventKind::Arrival => EventPayload::Arrival,
            EventKind::Capture => EventPayload::Capture,
            EventKind::Detection => EventPayload::Detection {
                detections: need(self.dets, "dets", kind)?,
                ocr: need(self.ocr, "ocr", kind)?,
            },
            EventKind::Verdict => EventPayload::Verdict {
                decision: need(self.decision, "decision", kind)?,
                reasons: need(self.reasons, "reasons", kind)?,
                max_confidence: need(self.max_conf, "max_conf", kind)?,
            },
            EventKind::ArmStart => EventPayload::ArmStart {
                bin: need(self.bin, "bin", kind)?,
            },
            EventKind::ArmDone => EventPayload::ArmDone {
                bin: need(self.bin, "bin", kind)?,
                duration_s: need(self.dur, "dur", kind)?,
            },
            EventKind::Binned => EventPayload::Binned {
                bin: need(self.bin, "bin", kind)?,
                decision: need(self.decision, "decision", kind)?,
            },
        };
        Ok(payload)
    }
}

#[derive(Serialize)]
struct TelemetryOut<'a> {
    v: u32,
    seq: u64,
    line: &'a str,
    t: f64,
    kind: EventKind,
    can: u64,
    #[serde(flatten)]
    payload: WirePayload,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TelemetryIn {
    v: u32,
    seq: u64,
    line: String,
    t: f64,
    kind: EventKind,
    can: u64,
    #[serde(default)]
    dets: Option<Vec<DetectionRecord>>,
    #[serde(default)]
    ocr: Option<Vec<String>>,
    #[serde(default)]
    decision: Option<Decision>,
    #[serde(default)]
    reasons: Option<Vec<String>>,
    #[serde(default)]
    max_conf: Option<BTreeMap<String, f64>>,
    #[serde(default)]
    bin: Option<BinSide>,
    #[serde(default)]
    dur: Option<f64>,
}

/// Canonical compact JSON for `e`. Equal events always encode to equal bytes.
pub fn encode_event(e: &InspectionEvent) -> Vec<u8> {
    serde_json::to_vec(&TelemetryOut {
        v: SCHEMA_VERSION,
        seq: e.seq,
        line: &e.line_id,
        t: e.t_sim_s,
        kind: e.kind(),
        can: e.can_id,
        payload: WirePayload::from_payload(&e.payload),
    })
    .expect("event serialization is infallible")
}

pub fn decode_event(bytes: &[u8]) -> Result<InspectionEvent> {
    let w: TelemetryIn = serde_json::from_slice(bytes)
        .map_err(|e| Error::parse(0, format!("bad event payload: {e}")))?;
    if w.v != SCHEMA_VERSION {
        return Err(Error::parse(
            0,
            format!("unsupported schema version {}", w.v),
        ));
    }
    let payload = WirePayload {
        dets: w.dets,
        ocr: w.ocr,
        decision: w.decision,
        reasons: w.reasons,
        max_conf: w.max_conf,
        bin: w.bin,
        dur: w.dur,
    }
    .into_payload(w.kind)?;
    Ok(InspectionEvent {
        seq: w.seq,
        line_id: w.line,
        t_sim_s: w.t,
        can_id: w.can,
        payload,
    })
}

#[derive(Serialize, Deserialize)]
struct LogRecord {
    v: u32,
    seq: u64,
    t_sim_s: f64,
    kind: EventKind,
    can_id: u64,
    line: String,
    #[serde(flatten)]
    payload: WirePayload,
}

/// One event-log line (without the trailing newline). Field order:
/// `v, seq, t_sim_s, kind, can_id, line`, then the kind-specific fields.
pub fn encode_log_line(e: &InspectionEvent) -> String {
    serde_json::to_string(&LogRecord {
        v: SCHEMA_VERSION,
        seq: e.seq,
        t_sim_s: e.t_sim_s,
        kind: e.kind(),
        can_id: e.can_id,
        line: e.line_id.clone(),
        payload: WirePayload::from_payload(&e.payload),
    })
    .expect("event serialization is infallible")
}

pub fn decode_log_line(line: &str) -> Result<InspectionEvent> {
    let r: LogRecord =
        serde_json::from_str(line).map_err(|e| Error::parse(0, format!("bad log line: {e}")))?;
    if r.v != SCHEMA_VERSION {
        return Err(Error::parse(
            0,
            format!("unsupported schema version {}", r.v),
        ));
    }
    Ok(InspectionEvent {
        seq: r.seq,
        line_id: r.line,
        t_sim_s: r.t_sim_s,
        can_id: r.can_id,
        payload: r.payload.into_payload(r.kind)?,
    })
}

pub fn encode_event_log(events: &[InspectionEvent]) -> String {
    let mut out = String::new();
    for e in events {
        out.push_str(&encode_log_line(e));
        out.push('\n');
    }
    out
}

pub fn decode_event_log(text: &str) -> Result<Vec<InspectionEvent>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, l)| {
            decode_log_line(l).map_err(|e| match e {
                Error::Parse { reason, .. } => Error::parse(i + 1, reason),
                other => other,
            })
        })
        .collect()
}

pub fn validate_line_id(line_id: &str) -> Result<()> {
    if line_id.is_empty() {
        return Err(Error::invalid("line id is empty"));
    }
    if let Some(c) = line_id
        .chars()
        .find(|c| matches!(c, '/' | '+' | '#') || c.is_control())
    {
        return Err(Error::invalid(format!(
            "line id {line_id:?} contains reserved character {c:?}"
        )));
    }
    Ok(())
}

pub fn topic_for(line_id: &str, kind: EventKind) -> Result<String> {
    validate_line_id(line_id)?;
    Ok(format!("{TOPIC_PREFIX}/{line_id}/{}", kind.as_str()))
}

/// Receipt for an accepted publish: how many messages the sink has taken.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Ack {
    pub delivered: u64,
}

/// Destination for encoded events. Implementations must keep submission
/// order.
pub trait TelemetrySink {
    fn publish(&mut self, topic: &str, payload: &[u8]) -> Result<Ack>;
}

impl<S: TelemetrySink + ?Sized> TelemetrySink for &mut S {
    fn publish(&mut self, topic: &str, payload: &[u8]) -> Result<Ack> {
        (**self).publish(topic, payload)
    }
}

#[derive(Debug, Default)]
pub struct MemorySink {
    pub messages: Vec<(String, Vec<u8>)>,
    closed: bool,
}

impl MemorySink {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn close(&mut self) {
        self.closed = true;
    }
}

impl TelemetrySink for MemorySink {
    fn publish(&mut self, topic: &str, payload: &[u8]) -> Result<Ack> {
        if self.closed {
            return Err(Error::Transport("sink closed".into()));
        }
        self.messages.push((topic.to_string(), payload.to_vec()));
        Ok(Ack {
            delivered: self.messages.len() as u64,
        })
    }
}

/// Appends `<topic>\t<payload>\n` records to a file.
pub struct FileSink {
    writer: Option<BufWriter<File>>,
    delivered: u64,
}

impl FileSink {
    /// Creates (or truncates) the file at `path`.
    pub fn create(path: &Path) -> Result<Self> {
        Ok(Self::from_file(File::create(path)?))
    }

    /// Opens `path` for appending, creating it if needed.
    pub fn append(path: &Path) -> Result<Self> {
        Ok(Self::from_file(
            OpenOptions::new().create(true).append(true).open(path)?,
        ))
    }

    fn from_file(file: File) -> Self {
        FileSink {
            writer: Some(BufWriter::new(file)),
            delivered: 0,
        }
    }

    pub fn close(&mut self) -> Result<()> {
        if let Some(mut w) = self.writer.take() {
            w.flush()?;
        }
        Ok(())
    }
}

impl TelemetrySink for FileSink {
    fn publish(&mut self, topic: &str, payload: &[u8]) -> Result<Ack> {
        let w = self
            .writer
            .as_mut()
            .ok_or_else(|| Error::Transport("sink closed".into()))?;
        let io = |e: std::io::Error| Error::Transport(e.to_string());
        w.write_all(topic.as_bytes()).map_err(io)?;
        w.write_all(b"\t").map_err(io)?;
        w.write_all(payload).map_err(io)?;
        w.write_all(b"\n").map_err(io)?;
        self.delivered += 1;
        Ok(Ack {
            delivered: self.delivered,
        })
    }
}

impl Drop for FileSink {
    fn drop(&mut self) {
        let _ = self.close();
    }
}

/// Splits file-sink output back into `(topic, event)` pairs.
pub fn parse_sink_file(text: &str) -> Result<Vec<(String, InspectionEvent)>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, l)| {
            let (topic, payload) = l
                .split_once('\t')
                .ok_or_else(|| Error::parse(i + 1, "missing tab separator"))?;
            let e =
                decode_event(payload.as_bytes()).map_err(|e| Error::parse(i + 1, e.to_string()))?;
            Ok((topic.to_string(), e))
        })
        .collect()
}

/// Consumer-side dedupe for at-least-once delivery: keeps the first copy
/// of each `(line_id, seq)`.
pub fn dedupe(events: impl IntoIterator<Item = InspectionEvent>) -> Vec<InspectionEvent> {
    let mut seen = HashSet::new();
    events
        .into_iter()
        .filter(|e| seen.insert((e.line_id.clone(), e.seq)))
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeliveryStats {
    pub submitted: u64,
    pub published: u64,
    pub failures: u64,
    /// Events still buffered when the publisher finished.
    pub undelivered: u64,
    pub last_error: Option<String>,
}

impl DeliveryStats {
    pub fn sink_dropped(&self) -> bool {
        self.undelivered > 0
    }
}

/// Buffers events and forwards them in order, retrying after failures.
/// A failed publish never propagates to the caller; it is counted and the
/// event stays queued.
pub struct Publisher<S> {
    sink: S,
    pending: VecDeque<(String, Vec<u8>)>,
    stats: DeliveryStats,
}

impl<S: TelemetrySink> Publisher<S> {
    pub fn new(sink: S) -> Self {
        Publisher {
            sink,
            pending: VecDeque::new(),
            stats: DeliveryStats::default(),
        }
    }

    pub fn submit(&mut self, event: &InspectionEvent) {
        self.stats.submitted += 1;
        match topic_for(&event.line_id, event.kind()) {
            Ok(topic) => self.pending.push_back((topic, encode_event(event))),
            Err(e) => {
                self.stats.failures += 1;
                self.stats.undelivered += 1;
                self.stats.last_error = Some(e.to_string());
                return;
            }
        }
        self.flush();
    }

    /// Attempts to drain the queue; stops at the first failure.
    pub fn flush(&mut self) -> bool {
        while let Some((topic, payload)) = self.pending.front() {
            match self.sink.publish(topic, payload) {
                Ok(_) => {
                    self.pending.pop_front();
                    self.stats.published += 1;
                }
                Err(e) => {
                    self.stats.failures += 1;
                    self.stats.last_error = Some(e.to_string());
                    return false;
                }
            }
        }
        true
    }

    pub fn stats(&self) -> &DeliveryStats {
        &self.stats
    }

    /// Makes up to `retries` final flush attempts and returns the sink.
    pub fn finish(mut self, retries: usize) -> (S, DeliveryStats) {
        for _ in 0..=retries {
            if self.flush() {
                break;
            }
        }
        self.stats.undelivered += self.pending.len() as u64;
        (self.sink, self.stats)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn arrival(seq: u64) -> InspectionEvent {
        InspectionEvent {
            seq,
            line_id: "L1".into(),
            t_sim_s: 0.0,
            can_id: 1,
            payload: EventPayload::Arrival,
        }
    }

    #[test]
    fn minimal_arrival_encoding() {
        let bytes = encode_event(&arrival(1));
        assert_eq!(
            std::str::from_utf8(&bytes).unwrap(),
            r#"{"v":1,"seq":1,"line":"L1","t":0.0,"kind":"arrival","can":1}"#
        );
        assert_eq!(encode_event(&arrival(1)), bytes);
        assert_eq!(decode_event(&bytes).unwrap(), arrival(1));
    }

    #[test]
    fn verdict_encoding_order() {
        let e = InspectionEvent {
            seq: 4,
            line_id: "L1".into(),
            t_sim_s: 1.5,
            can_id: 2,
            payload: EventPayload::Verdict {
                decision: Decision::Reject,
                reasons: vec!["contour_fault".into()],
                max_confidence: [
                    ("label_ok".to_string(), 0.94),
                    ("contour_fault".to_string(), 0.95),
                ]
                .into_iter()
                .collect(),
            },
        };
        let text = String::from_utf8(encode_event(&e)).unwrap();
        assert_eq!(
            text,
            r#"{"v":1,"seq":4,"line":"L1","t":1.5,"kind":"verdict","can":2,"decision":"reject","reasons":["contour_fault"],"max_conf":{"contour_fault":0.95,"label_ok":0.94}}"#
        );
        assert_eq!(decode_event(text.as_bytes()).unwrap(), e);
    }

    #[test]
    fn decode_rejects_incomplete_payloads() {
        assert!(
            decode_event(br#"{"v":1,"seq":1,"line":"L1","t":0.0,"kind":"binned","can":1}"#)
                .is_err()
        );
        assert!(
            decode_event(br#"{"v":2,"seq":1,"line":"L1","t":0.0,"kind":"arrival","can":1}"#)
                .is_err()
        );
        assert!(decode_event(
            br#"{"v":1,"seq":1,"line":"L1","t":0.0,"kind":"arrival","can":1,"x":1}"#
        )
        .is_err());
    }

    #[test]
    fn log_line_round_trip() {
        let e = InspectionEvent {
            payload: EventPayload::ArmDone {
                bin: BinSide::Left,
                duration_s: 3.6,
            },
            ..arrival(9)
        };
        let line = encode_log_line(&e);
        assert!(
            line.starts_with(
                r#"{"v":1,"seq":9,"t_sim_s":0.0,"kind":"arm_done","can_id":1,"line":"L1""#
            ),
            "{line}"
        );
        assert_eq!(decode_log_line(&line).unwrap(), e);
    }

    #[test]
    fn topics() {
        assert_eq!(
            topic_for("L1", EventKind::Verdict).unwrap(),
            "canline/v1/L1/verdict"
        );
        assert_eq!(
            topic_for("L1", EventKind::Capture).unwrap(),
            "canline/v1/L1/capture"
        );
        for bad in ["a/b", "a+b", "#", ""] {
            assert!(topic_for(bad, EventKind::Arrival).is_err(), "{bad}");
        }
    }

    #[test]
    fn memory_sink_preserves_order() {
        let mut p = Publisher::new(MemorySink::new());
        for s in 1..=3 {
            p.submit(&arrival(s));
        }
        let (sink, stats) = p.finish(0);
        assert_eq!(stats.published, 3);
        let seqs: Vec<u64> = sink
            .messages
            .iter()
            .map(|(_, b)| decode_event(b).unwrap().seq)
            .collect();
        assert_eq!(seqs, [1, 2, 3]);
    }

    #[test]
    fn closed_sink_is_reported_not_raised() {
        let mut sink = MemorySink::new();
        sink.close();
        assert!(matches!(sink.publish("t", b"x"), Err(Error::Transport(_))));
        let mut p = Publisher::new(sink);
        p.submit(&arrival(1));
        p.submit(&arrival(2));
        let (_, stats) = p.finish(2);
        assert_eq!(stats.published, 0);
        assert_eq!(stats.undelivered, 2);
        assert!(stats.sink_dropped());
        assert!(stats.failures >= 2);
    }

    #[test]
    fn dedupe_by_line_and_seq() {
        let out = dedupe([arrival(1), arrival(1), arrival(2)]);
        assert_eq!(out.iter().map(|e| e.seq).collect::<Vec<_>>(), [1, 2]);
    }
}
