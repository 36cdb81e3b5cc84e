//! The real-time path: preprocess, classify, smooth and decide on every
//! sample, then drive the orthosis state machine with an actuation delay.

use std::fmt;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifier::{IntentClassifier, LdaModel};
use crate::signal::{decide, preprocess, MedianSmoother, ProbVector, SignalError, DEFAULT_WINDOW};
use crate::types::{Channels, EmgSample, Intent};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    pub actuation_delay_ms: u64,
    pub window: usize,
    pub renormalize: bool,
    /// Clear the median window whenever a new stream (recording or stage)
    /// begins.
    pub reset_smoother_per_stream: bool,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self { actuation_delay_ms: 1000, window: DEFAULT_WINDOW, renormalize: true, reset_smoother_per_stream: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Hand {
    /// Fingers extended by the orthosis.
    Extended,
    /// Tendon released; the user closes with their own strength.
    Released,
}

impl fmt::Display for Hand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Hand::Extended => "extended",
            Hand::Released => "released",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    Extend,
    Release,
}

impl Command {
    pub fn for_intent(intent: Intent) -> Option<Command> {
        match intent {
            Intent::Open => Some(Command::Extend),
            Intent::Close => Some(Command::Release),
            Intent::Relax => None,
        }
    }

    pub fn resulting_hand(self) -> Hand {
        match self {
            Command::Extend => Hand::Extended,
            Command::Release => Hand::Released,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PendingCommand {
    pub target: Command,
    pub decided_t_ms: u64,
    pub due_t_ms: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OrthosisState {
    pub hand: Hand,
    pub motor_engaged: bool,
    pub pending: Option<PendingCommand>,
}

impl Default for OrthosisState {
    fn default() -> Self {
        Self { hand: Hand::Released, motor_engaged: true, pending: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiscardReason {
    Superseded,
    MotorDisengaged,
    StreamReset,
}

/// Everything the device does, in order. Consumed by telemetry and by the
/// state-machine property tests.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum DeviceEvent {
    Scheduled { t_ms: u64, command: Command, due_t_ms: u64 },
    Executed { t_ms: u64, command: Command, decided_t_ms: u64, from: Hand, to: Hand },
    Discarded { t_ms: u64, command: Command, reason: DiscardReason },
    Motor { t_ms: u64, engaged: bool },
}

impl DeviceEvent {
    pub fn t_ms(&self) -> u64 {
        match *self {
            DeviceEvent::Scheduled { t_ms, .. }
            | DeviceEvent::Executed { t_ms, .. }
            | DeviceEvent::Discarded { t_ms, .. }
            | DeviceEvent::Motor { t_ms, .. } => t_ms,
        }
    }
}

/// What the subject sees and what telemetry publishes for one sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeedbackFrame {
    pub t_ms: u64,
    /// Green bar, the smoothed open probability.
    pub bar_open: f64,
    /// Red bar, the smoothed close probability.
    pub bar_close: f64,
    pub intent: Intent,
    pub hand: Hand,
    pub motor_engaged: bool,
    pub raw_p: ProbVector,
    pub smoothed: ProbVector,
}

impl FeedbackFrame {
    pub fn bar(&self, intent: Intent) -> f64 {
        match intent {
            Intent::Open => self.bar_open,
            Intent::Close => self.bar_close,
            Intent::Relax => self.smoothed.relax(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EngineError {
    #[error("timestamp {got}ms is not after previous {previous}ms")]
    NonMonotonicTime { previous: u64, got: u64 },
    #[error("no classifier loaded")]
    NoModel,
    #[error(transparent)]
    Signal(#[from] SignalError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Inference {
    pub raw_p: ProbVector,
    pub smoothed: ProbVector,
    pub intent: Intent,
    pub changed: bool,
}

/// preprocess -> predict -> smooth -> decide, with the decided intent kept
/// as state. Shared by the engine and offline evaluation.
#[derive(Debug, Clone)]
pub struct InferencePipeline {
    smoother: MedianSmoother,
    intent: Intent,
}

impl InferencePipeline {
    pub fn new(window: usize, renormalize: bool) -> Self {
        Self { smoother: MedianSmoother::with_renormalize(window, renormalize), intent: Intent::Relax }
    }

    pub fn intent(&self) -> Intent {
        self.intent
    }

    pub fn reset(&mut self) {
        self.smoother.reset();
        self.intent = Intent::Relax;
    }

    pub fn reset_smoother(&mut self) {
        self.smoother.reset();
    }

    pub fn infer<C: IntentClassifier + ?Sized>(
        &mut self,
        classifier: &C,
        raw: &Channels,
    ) -> Result<Inference, SignalError> {
        let x = preprocess(raw)?;
        let raw_p = classifier.predict_proba(&x);
        let smoothed = self.smoother.smooth(raw_p);
        let intent = decide(&smoothed, self.intent);
        let changed = intent != self.intent;
        self.intent = intent;
        Ok(Inference { raw_p, smoothed, intent, changed })
    }
}

pub struct Engine {
    config: EngineConfig,
    model: Option<Arc<LdaModel>>,
    pipeline: InferencePipeline,
    state: OrthosisState,
    last_t: Option<u64>,
    events: Vec<DeviceEvent>,
    hand_transitions: u64,
}

impl Engine {
    pub fn new(config: EngineConfig) -> Self {
        Self {
            config,
            model: None,
            pipeline: InferencePipeline::new(config.window, config.renormalize),
            state: OrthosisState::default(),
            last_t: None,
            events: Vec::new(),
            hand_transitions: 0,
        }
    }

    pub fn with_model(config: EngineConfig, model: Arc<LdaModel>) -> Self {
        let mut engine = Self::new(config);
        engine.set_model(model);
        engine
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn set_model(&mut self, model: Arc<LdaModel>) {
        self.model = Some(model);
        self.pipeline.reset_smoother();
    }

    pub fn model(&self) -> Option<&Arc<LdaModel>> {
        self.model.as_ref()
    }

    pub fn state(&self) -> &OrthosisState {
        &self.state
    }

    pub fn intent(&self) -> Intent {
        self.pipeline.intent()
    }

    pub fn hand_transitions(&self) -> u64 {
        self.hand_transitions
    }

    /// Device events since the last drain.
    pub fn drain_events(&mut self) -> Vec<DeviceEvent> {
        std::mem::take(&mut self.events)
    }

    /// Marks the start of a new sample stream: the clock restarts, pending
    /// commands are dropped and the decided intent returns to Relax. The hand
    /// keeps its physical state.
    pub fn begin_stream(&mut self) {
        let t = self.last_t.unwrap_or(0);
        self.discard_pending(t, DiscardReason::StreamReset);
        self.last_t = None;
        if self.config.reset_smoother_per_stream {
            self.pipeline.reset();
        } else {
            self.pipeline.intent = Intent::Relax;
        }
    }

    /// Disengaging drops any pending command; re-engaging starts clean.
    pub fn set_motor(&mut self, engaged: bool) {
        let t = self.last_t.unwrap_or(0);
        if !engaged {
            self.discard_pending(t, DiscardReason::MotorDisengaged);
        }
        if self.state.motor_engaged != engaged {
            self.state.motor_engaged = engaged;
            self.events.push(DeviceEvent::Motor { t_ms: t, engaged });
        }
    }

    fn check_time(&mut self, now_ms: u64) -> Result<(), EngineError> {
        if let Some(previous) = self.last_t {
            if now_ms <= previous {
                return Err(EngineError::NonMonotonicTime { previous, got: now_ms });
            }
        }
        self.last_t = Some(now_ms);
        Ok(())
    }

    /// Runs the full inference path on one sample and advances the device.
    pub fn step(&mut self, sample: &EmgSample, now_ms: u64) -> Result<FeedbackFrame, EngineError> {
        let model = self.model.clone().ok_or(EngineError::NoModel)?;
        if let Some(previous) = self.last_t {
            if now_ms <= previous {
                return Err(EngineError::NonMonotonicTime { previous, got: now_ms });
            }
        }
        let inference = self.pipeline.infer(model.as_ref(), &sample.channels)?;
        self.last_t = Some(now_ms);
        if inference.changed {
            self.on_decision(inference.intent, now_ms);
        }
        self.advance(now_ms);
        Ok(FeedbackFrame {
            t_ms: now_ms,
            bar_open: inference.smoothed.open(),
            bar_close: inference.smoothed.close(),
            intent: inference.intent,
            hand: self.state.hand,
            motor_engaged: self.state.motor_engaged,
            raw_p: inference.raw_p,
            smoothed: inference.smoothed,
        })
    }

    /// Drives the device from the operator's cue instead of the classifier,
    /// as during first-iteration collection when no model exists yet.
    pub fn cue_step(&mut self, cue: Intent, now_ms: u64) -> Result<Hand, EngineError> {
        self.check_time(now_ms)?;
        if cue != self.pipeline.intent {
            self.pipeline.intent = cue;
            self.on_decision(cue, now_ms);
        }
        self.advance(now_ms);
        Ok(self.state.hand)
    }

    fn discard_pending(&mut self, t_ms: u64, reason: DiscardReason) {
        if let Some(p) = self.state.pending.take() {
            self.events.push(DeviceEvent::Discarded { t_ms, command: p.target, reason });
        }
    }

    fn on_decision(&mut self, intent: Intent, now_ms: u64) {
        // Relax maintains the previous state.
        let Some(command) = Command::for_intent(intent) else {
            return;
        };
        if !self.state.motor_engaged {
            return;
        }
        if let Some(p) = self.state.pending {
            if p.target == command {
                return;
            }
            self.discard_pending(now_ms, DiscardReason::Superseded);
        }
        if command.resulting_hand() == self.state.hand {
            return;
        }
        let due_t_ms = now_ms + self.config.actuation_delay_ms;
        self.state.pending = Some(PendingCommand { target: command, decided_t_ms: now_ms, due_t_ms });
        self.events.push(DeviceEvent::Scheduled { t_ms: now_ms, command, due_t_ms });
    }

    fn advance(&mut self, now_ms: u64) {
        if !self.state.motor_engaged {
            return;
        }
        let Some(p) = self.state.pending else {
            return;
        };
        if p.due_t_ms > now_ms {
            return;
        }
        self.state.pending = None;
        let from = self.state.hand;
        let to = p.target.resulting_hand();
        self.state.hand = to;
        if from != to {
            self.hand_transitions += 1;
        }
        self.events.push(DeviceEvent::Executed {
            t_ms: now_ms,
            command: p.target,
            decided_t_ms: p.decided_t_ms,
            from,
            to,
        });
    }
}

/// Receives engine output in order.
pub trait FrameSink {
    fn frame(&mut self, frame: &FeedbackFrame);

    fn device(&mut self, _event: &DeviceEvent) {}
}

impl FrameSink for Vec<FeedbackFrame> {
    fn frame(&mut self, frame: &FeedbackFrame) {
        self.push(*frame);
    }
}

impl<T: FrameSink + ?Sized> FrameSink for &mut T {
    fn frame(&mut self, frame: &FeedbackFrame) {
        (**self).frame(frame)
    }

    fn device(&mut self, event: &DeviceEvent) {
        (**self).device(event)
    }
}

/// Adapts a closure into a [`FrameSink`].
pub struct FnSink<F>(pub F);

impl<F: FnMut(&FeedbackFrame)> FrameSink for FnSink<F> {
    fn frame(&mut self, frame: &FeedbackFrame) {
        (self.0)(frame)
    }
}

/// Discards everything.
pub struct NullSink;

impl FrameSink for NullSink {
    fn frame(&mut self, _frame: &FeedbackFrame) {}
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub mean_us: f64,
    pub p50_us: f64,
    pub p99_us: f64,
    pub max_us: f64,
}

impl LatencyStats {
    pub fn from_nanos(mut nanos: Vec<u64>) -> Self {
        if nanos.is_empty() {
            return Self::default();
        }
        nanos.sort_unstable();
        let pick = |q: f64| {
            let rank = ((q * nanos.len() as f64).ceil() as usize).clamp(1, nanos.len());
            nanos[rank - 1] as f64 / 1000.0
        };
        let mean = nanos.iter().sum::<u64>() as f64 / nanos.len() as f64 / 1000.0;
        Self { mean_us: mean, p50_us: pick(0.5), p99_us: pick(0.99), max_us: pick(1.0) }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub frames: u64,
    pub latency: LatencyStats,
    pub hand_transitions: u64,
    pub intent_changes: u64,
    /// Why the stream ended early, if it did.
    pub error: Option<String>,
}

/// Pushes every sample of `source` through the engine. Each sample yields
/// exactly one frame; a source or engine error ends the run with a partial
/// summary.
pub fn run_stream<I, E, S>(engine: &mut Engine, source: I, mut sink: S) -> RunSummary
where
    I: IntoIterator<Item = Result<EmgSample, E>>,
    E: fmt::Display,
    S: FrameSink,
{
    let mut summary = RunSummary::default();
    let mut latencies = Vec::new();
    let transitions_before = engine.hand_transitions();
    let mut last_intent = engine.intent();
    for item in source {
        let sample = match item {
            Ok(s) => s,
            Err(e) => {
                summary.error = Some(format!("source failed: {e}"));
                break;
            }
        };
        let started = Instant::now();
        let result = engine.step(&sample, sample.t_ms);
        latencies.push(started.elapsed().as_nanos() as u64);
        match result {
            Ok(frame) => {
                if frame.intent != last_intent {
                    summary.intent_changes += 1;
                    last_intent = frame.intent;
                }
                summary.frames += 1;
                sink.frame(&frame);
                for event in engine.drain_events() {
                    sink.device(&event);
                }
            }
            Err(e) => {
                summary.error = Some(e.to_string());
                break;
            }
        }
    }
    summary.latency = LatencyStats::from_nanos(latencies);
    summary.hand_transitions = engine.hand_transitions() - transitions_before;
    summary
}
