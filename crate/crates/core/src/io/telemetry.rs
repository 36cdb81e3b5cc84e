//! Newline-delimited JSON messages. Outbound telemetry kinds are `frame`,
//! `stage`, `cue`, `device` and `log`; inbound control kinds are
//! `start_stage`, `stop`, `motor` and `load_model`. Every message carries the
//! protocol version `v`. Receivers skip kinds they do not know.

use serde::{Deserialize, Serialize};

use crate::engine::{Command, DeviceEvent, FeedbackFrame, Hand, OrthosisState};
use crate::session::Stage;
use crate::types::{ArmCondition, Intent};

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageStatus {
    Started,
    Completed,
    Aborted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LogLevel {
    Debug,
    Info,
    Warn,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TelemetryBody {
    /// Smoothed probabilities as `p_*`, unsmoothed as `raw_*`.
    Frame {
        p_relax: f64,
        p_open: f64,
        p_close: f64,
        raw_relax: f64,
        raw_open: f64,
        raw_close: f64,
        intent: Intent,
        hand: Hand,
        bar_open: f64,
        bar_close: f64,
        motor_engaged: bool,
    },
    Stage {
        stage: Stage,
        iteration: u32,
        status: StageStatus,
    },
    Cue {
        intent: Intent,
        duration_ms: u64,
        condition: ArmCondition,
    },
    Device {
        hand: Hand,
        motor_engaged: bool,
        pending: Option<Command>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        event: Option<DeviceEvent>,
    },
    Log {
        level: LogLevel,
        message: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TelemetryMessage {
    pub v: u32,
    pub t_ms: u64,
    #[serde(flatten)]
    pub body: TelemetryBody,
}

impl TelemetryMessage {
    pub fn new(t_ms: u64, body: TelemetryBody) -> Self {
        Self { v: PROTOCOL_VERSION, t_ms, body }
    }

    pub fn frame(frame: &FeedbackFrame) -> Self {
        Self::new(
            frame.t_ms,
            TelemetryBody::Frame {
                p_relax: frame.smoothed.relax(),
                p_open: frame.smoothed.open(),
                p_close: frame.smoothed.close(),
                raw_relax: frame.raw_p.relax(),
                raw_open: frame.raw_p.open(),
                raw_close: frame.raw_p.close(),
                intent: frame.intent,
                hand: frame.hand,
                bar_open: frame.bar_open,
                bar_close: frame.bar_close,
                motor_engaged: frame.motor_engaged,
            },
        )
    }

    pub fn stage(t_ms: u64, stage: Stage, iteration: u32, status: StageStatus) -> Self {
        Self::new(t_ms, TelemetryBody::Stage { stage, iteration, status })
    }

    pub fn cue(t_ms: u64, intent: Intent, duration_ms: u64, condition: ArmCondition) -> Self {
        Self::new(t_ms, TelemetryBody::Cue { intent, duration_ms, condition })
    }

    pub fn device(t_ms: u64, state: &OrthosisState, event: Option<DeviceEvent>) -> Self {
        Self::new(
            t_ms,
            TelemetryBody::Device {
                hand: state.hand,
                motor_engaged: state.motor_engaged,
                pending: state.pending.map(|p| p.target),
                event,
            },
        )
    }

    pub fn log(t_ms: u64, level: LogLevel, message: impl Into<String>) -> Self {
        Self::new(t_ms, TelemetryBody::Log { level, message: message.into() })
    }

    pub fn kind(&self) -> &'static str {
        match self.body {
            TelemetryBody::Frame { .. } => "frame",
            TelemetryBody::Stage { .. } => "stage",
            TelemetryBody::Cue { .. } => "cue",
            TelemetryBody::Device { .. } => "device",
            TelemetryBody::Log { .. } => "log",
        }
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("telemetry serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ControlMessage {
    StartStage {
        stage: Stage,
        /// Practice length override.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        duration_ms: Option<u64>,
    },
    Stop,
    Motor {
        engaged: bool,
    },
    LoadModel {
        path: String,
    },
}

impl ControlMessage {
    pub fn to_line(&self) -> String {
        let mut value = serde_json::to_value(self).expect("control serializes");
        value["v"] = PROTOCOL_VERSION.into();
        value.to_string()
    }
}

/// Outcome of decoding one line.
#[derive(Debug, Clone, PartialEq)]
pub enum Decoded<T> {
    Message(T),
    /// Well-formed JSON with a kind this version does not know.
    Unknown(String),
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("rejected message: {0}")]
pub struct ProtocolError(pub String);

fn decode<T: serde::de::DeserializeOwned>(line: &str, known: &[&str]) -> Result<Decoded<T>, ProtocolError> {
    let value: serde_json::Value = serde_json::from_str(line.trim()).map_err(|e| ProtocolError(e.to_string()))?;
    let kind = value.get("kind").and_then(|k| k.as_str()).ok_or_else(|| ProtocolError("missing `kind`".into()))?;
    if let Some(v) = value.get("v") {
        if v.as_u64() != Some(PROTOCOL_VERSION as u64) {
            return Err(ProtocolError(format!("unsupported protocol version {v}")));
        }
    }
    if !known.contains(&kind) {
        return Ok(Decoded::Unknown(kind.to_string()));
    }
    serde_json::from_value(value).map(Decoded::Message).map_err(|e| ProtocolError(e.to_string()))
}

pub fn parse_control(line: &str) -> Result<Decoded<ControlMessage>, ProtocolError> {
    decode(line, &["start_stage", "stop", "motor", "load_model"])
}

pub fn parse_telemetry(line: &str) -> Result<Decoded<TelemetryMessage>, ProtocolError> {
    decode(line, &["frame", "stage", "cue", "device", "log"])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::ProbVector;

    #[test]
    fn frame_line_has_flat_fields() {
        let frame = FeedbackFrame {
            t_ms: 40,
            bar_open: 0.7,
            bar_close: 0.1,
            intent: Intent::Open,
            hand: Hand::Released,
            motor_engaged: true,
            raw_p: ProbVector([0.1, 0.8, 0.1]),
            smoothed: ProbVector([0.2, 0.7, 0.1]),
        };
        let line = TelemetryMessage::frame(&frame).to_line();
        let v: serde_json::Value = serde_json::from_str(&line).unwrap();
        assert_eq!(v["kind"], "frame");
        assert_eq!(v["v"], 1);
        assert_eq!(v["intent"], "open");
        assert_eq!(v["bar_open"], 0.7);
        assert_eq!(v["p_open"], 0.7);
        assert_eq!(v["raw_open"], 0.8);
        assert_eq!(parse_telemetry(&line).unwrap(), Decoded::Message(TelemetryMessage::frame(&frame)));
    }

    #[test]
    fn controls_round_trip() {
        for msg in [
            ControlMessage::StartStage { stage: Stage::Practice, duration_ms: Some(1000) },
            ControlMessage::Stop,
            ControlMessage::Motor { engaged: false },
            ControlMessage::LoadModel { path: "m.lda".into() },
        ] {
            assert_eq!(parse_control(&msg.to_line()).unwrap(), Decoded::Message(msg));
        }
        assert_eq!(
            parse_control(r#"{"kind":"start_stage","stage":"collect"}"#).unwrap(),
            Decoded::Message(ControlMessage::StartStage { stage: Stage::Collect, duration_ms: None })
        );
    }

    #[test]
    fn unknown_kinds_are_skipped_not_errors() {
        assert_eq!(parse_control(r#"{"kind":"calibrate","v":1}"#).unwrap(), Decoded::Unknown("calibrate".into()));
        assert_eq!(parse_telemetry(r#"{"kind":"heartbeat","t_ms":3}"#).unwrap(), Decoded::Unknown("heartbeat".into()));
    }

    #[test]
    fn malformed_controls_are_rejected() {
        assert!(parse_control("not json").is_err());
        assert!(parse_control(r#"{"stage":"collect"}"#).is_err());
        assert!(parse_control(r#"{"kind":"motor"}"#).is_err());
        assert!(parse_control(r#"{"kind":"start_stage","stage":"dance"}"#).is_err());
        assert!(parse_control(r#"{"kind":"stop","v":9}"#).is_err());
    }

    #[test]
    fn device_event_nests() {
        let state = OrthosisState::default();
        let event = DeviceEvent::Motor { t_ms: 5, engaged: false };
        let line = TelemetryMessage::device(5, &state, Some(event)).to_line();
        let v: serde_json::Value = serde_json::from_str(&line).unwrap();
        assert_eq!(v["kind"], "device");
        assert_eq!(v["event"]["event"], "motor");
        assert_eq!(v["hand"], "released");
    }
}
