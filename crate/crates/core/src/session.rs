//! Reciprocal-learning orchestration. Each iteration runs
//! collect -> train -> (evaluate) -> practice, after which the next
//! iteration collects fresh data from the adapted subject.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analytics::{self, accuracy, sample_for_embedding, AnalyticsError, Confusion, SampleSpace};
use crate::classifier::{
    fit_with, weight_variance, ClassifierError, IntentClassifier, LabeledDataset, LdaConfig, LdaModel,
};
use crate::engine::{Engine, EngineConfig, EngineError, FeedbackFrame, InferencePipeline};
use crate::io::bus::TelemetryBus;
use crate::io::telemetry::{StageStatus, TelemetryMessage};
use crate::signal::decide;
use crate::source::{Prompt, SampleSource, SourceError};
use crate::types::{
    cue_schedule_with, label_samples, ArmCondition, CueSchedule, EmgSample, Intent, Recording, Role, ScheduleError,
    SubjectMeta, DEFAULT_CUE_MS, SAMPLE_PERIOD_MS, SAMPLE_RATE_HZ,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Idle,
    Collect,
    Train,
    Evaluate,
    Practice,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Idle => "idle",
            Stage::Collect => "collect",
            Stage::Train => "train",
            Stage::Evaluate => "evaluate",
            Stage::Practice => "practice",
        })
    }
}

impl std::str::FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "idle" => Ok(Stage::Idle),
            "collect" => Ok(Stage::Collect),
            "train" => Ok(Stage::Train),
            "evaluate" => Ok(Stage::Evaluate),
            "practice" => Ok(Stage::Practice),
            other => Err(format!("unknown stage `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionConfig {
    pub classifier: LdaConfig,
    pub engine: EngineConfig,
    pub cue_ms: u64,
    pub cue_repetitions: usize,
    /// Delay between recording start and the first cue label.
    pub label_offset_ms: u64,
    pub practice_duration_ms: u64,
    /// Length of each open/relax/close/relax practice prompt.
    pub practice_block_ms: u64,
    /// Train on every iteration's data so far instead of only the current one.
    pub cumulative_training: bool,
    /// Test samples per intent drawn for the silhouette score.
    pub silhouette_per_intent: usize,
    /// Run a practice block after the last iteration of `iterate`.
    pub practice_after_final: bool,
    pub seed: u64,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            classifier: LdaConfig::default(),
            engine: EngineConfig::default(),
            cue_ms: DEFAULT_CUE_MS,
            cue_repetitions: 3,
            label_offset_ms: 0,
            practice_duration_ms: 180_000,
            practice_block_ms: 5000,
            cumulative_training: false,
            silhouette_per_intent: 400,
            practice_after_final: false,
            seed: 0,
        }
    }
}

impl SessionConfig {
    pub fn schedule(&self) -> CueSchedule {
        cue_schedule_with(self.cue_ms, self.cue_repetitions)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SessionError {
    #[error("cannot start {to} after {after:?} in iteration {iteration}")]
    StageOrder { after: Option<Stage>, to: Stage, iteration: u32 },
    #[error("operation needs stage {expected}, session is in {actual}")]
    WrongStage { expected: Stage, actual: Stage },
    #[error("recording `{id}` aborted: {reason}")]
    RecordingAborted { id: String, reason: String },
    #[error("no trained model for iteration {0}")]
    NoModel(u32),
    #[error("no {role} recordings for iteration {iteration}")]
    NoData { iteration: u32, role: Role },
    #[error("source failed: {0}")]
    Source(#[from] SourceError),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Analytics(#[from] AnalyticsError),
    #[error("could not save session: {0}")]
    Persist(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlannedRecording {
    pub condition: ArmCondition,
    pub role: Role,
    pub schedule: CueSchedule,
}

/// Iteration 1 records every fixed condition once per role; later
/// iterations record two free-condition recordings per role.
pub fn plan_collection(iteration: u32) -> Vec<PlannedRecording> {
    plan_collection_with(iteration, &cue_schedule_with(DEFAULT_CUE_MS, 3))
}

pub fn plan_collection_with(iteration: u32, schedule: &CueSchedule) -> Vec<PlannedRecording> {
    let plan = |condition, role| PlannedRecording { condition, role, schedule: schedule.clone() };
    if iteration <= 1 {
        ArmCondition::FIXED.iter().flat_map(|&c| [plan(c, Role::Train), plan(c, Role::Test)]).collect()
    } else {
        [Role::Train, Role::Test, Role::Train, Role::Test].into_iter().map(|r| plan(ArmCondition::Free, r)).collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct IterationData {
    pub train: Vec<Recording>,
    pub test: Vec<Recording>,
}

impl IterationData {
    pub fn role(&self, role: Role) -> &[Recording] {
        match role {
            Role::Train => &self.train,
            Role::Test => &self.test,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionAccuracy {
    pub condition: ArmCondition,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationReport {
    pub iteration: u32,
    /// Accuracy of the smoothed, decided intent against the cue.
    pub test_accuracy: f64,
    /// Accuracy of per-sample decisions on unsmoothed probabilities.
    pub raw_accuracy: f64,
    pub confusion: Confusion,
    pub weight_variance_open: f64,
    pub silhouette: f64,
    /// Diagnostic breakdown by arm condition, first iteration only.
    pub per_condition: Vec<ConditionAccuracy>,
    pub test_samples: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PracticeSummary {
    pub frames: u64,
    pub duration_ms: u64,
    /// Milliseconds spent in each decided intent, intent order.
    pub time_in_intent_ms: [u64; 3],
    pub intent_changes: u64,
    pub hand_transitions: u64,
    pub stopped: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Flow {
    Continue,
    Stop,
}

/// Polled once per sample slot while a stage streams. Live front ends use
/// it to pace to wall-clock time and to apply operator controls.
pub trait StageMonitor {
    fn poll(&mut self, engine: &mut Engine, t_ms: u64) -> Flow;
}

impl StageMonitor for () {
    fn poll(&mut self, _engine: &mut Engine, _t_ms: u64) -> Flow {
        Flow::Continue
    }
}

/// Confusions from streaming a classifier over labeled recordings.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Evaluation {
    pub smoothed: Confusion,
    pub raw: Confusion,
    pub per_recording: Vec<(ArmCondition, Confusion)>,
}

/// Runs the deployed inference path over each recording in stream order,
/// fresh filter state per recording, and scores every labeled sample.
pub fn evaluate_recordings<C: IntentClassifier + ?Sized>(
    classifier: &C,
    recordings: &[Recording],
    engine: &EngineConfig,
) -> Result<Evaluation, SessionError> {
    let mut out = Evaluation::default();
    for rec in recordings {
        let mut pipeline = InferencePipeline::new(engine.window, engine.renormalize);
        let mut raw_intent = Intent::Relax;
        let mut confusion = Confusion::default();
        for s in &rec.samples {
            let inference = pipeline.infer(classifier, &s.channels).map_err(EngineError::from)?;
            raw_intent = decide(&inference.raw_p, raw_intent);
            if let Some(truth) = s.cue {
                confusion.record(truth, inference.intent);
                out.raw.record(truth, raw_intent);
            }
        }
        out.smoothed.merge(&confusion);
        out.per_recording.push((rec.condition, confusion));
    }
    Ok(out)
}

pub struct Session {
    pub(crate) subject: SubjectMeta,
    pub(crate) config: SessionConfig,
    pub(crate) iteration: u32,
    pub(crate) stage: Stage,
    pub(crate) completed: Option<Stage>,
    pub(crate) datasets: BTreeMap<u32, IterationData>,
    pub(crate) models: BTreeMap<u32, Arc<LdaModel>>,
    pub(crate) reports: BTreeMap<u32, IterationReport>,
    pub(crate) practice: BTreeMap<u32, PracticeSummary>,
    pub(crate) engine: Engine,
    telemetry: Option<TelemetryBus>,
    manifest_path: Option<PathBuf>,
}

impl Session {
    pub fn new(subject: SubjectMeta, config: SessionConfig) -> Self {
        let engine = Engine::new(config.engine);
        Self {
            subject,
            config,
            iteration: 1,
            stage: Stage::Idle,
            completed: None,
            datasets: BTreeMap::new(),
            models: BTreeMap::new(),
            reports: BTreeMap::new(),
            practice: BTreeMap::new(),
            engine,
            telemetry: None,
            manifest_path: None,
        }
    }

    pub fn attach_telemetry(&mut self, bus: TelemetryBus) {
        self.telemetry = Some(bus);
    }

    /// Saves the manifest to `path` now and after every completed stage.
    pub fn persist_to(&mut self, path: impl Into<PathBuf>) -> Result<(), SessionError> {
        self.manifest_path = Some(path.into());
        self.save()
    }

    pub fn manifest_path(&self) -> Option<&Path> {
        self.manifest_path.as_deref()
    }

    fn save(&self) -> Result<(), SessionError> {
        match &self.manifest_path {
            Some(path) => crate::io::manifest::save_session(self, path)
                .map(|_| ())
                .map_err(|e| SessionError::Persist(e.to_string())),
            None => Ok(()),
        }
    }

    pub fn telemetry(&self) -> Option<&TelemetryBus> {
        self.telemetry.as_ref()
    }

    pub fn subject(&self) -> &SubjectMeta {
        &self.subject
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn iteration(&self) -> u32 {
        self.iteration
    }

    pub fn stage(&self) -> Stage {
        self.stage
    }

    pub fn completed_stage(&self) -> Option<Stage> {
        self.completed
    }

    pub fn datasets(&self) -> &BTreeMap<u32, IterationData> {
        &self.datasets
    }

    pub fn models(&self) -> &BTreeMap<u32, Arc<LdaModel>> {
        &self.models
    }

    pub fn reports(&self) -> &BTreeMap<u32, IterationReport> {
        &self.reports
    }

    pub fn practice_summaries(&self) -> &BTreeMap<u32, PracticeSummary> {
        &self.practice
    }

    pub fn engine(&self) -> &Engine {
        &self.engine
    }

    pub fn engine_mut(&mut self) -> &mut Engine {
        &mut self.engine
    }

    pub fn current_model(&self) -> Option<&Arc<LdaModel>> {
        self.models.get(&self.iteration)
    }

    pub fn set_motor(&mut self, engaged: bool) {
        self.engine.set_motor(engaged);
        self.flush_device_events();
    }

    /// Installs a model for the current iteration as if it had been trained.
    pub fn load_model(&mut self, model: Arc<LdaModel>) {
        self.engine.set_model(model.clone());
        self.models.insert(self.iteration, model);
    }

    fn publish(&self, message: TelemetryMessage) {
        if let Some(bus) = &self.telemetry {
            bus.publish(message);
        }
    }

    fn publish_stage(&self, status: StageStatus) {
        self.publish(TelemetryMessage::stage(0, self.stage, self.iteration, status));
    }

    fn flush_device_events(&mut self) {
        let events = self.engine.drain_events();
        if self.telemetry.is_none() {
            return;
        }
        let state = *self.engine.state();
        for event in events {
            self.publish(TelemetryMessage::device(event.t_ms(), &state, Some(event)));
        }
    }

    /// Validates and enters `to`. Collect after Practice opens the next
    /// iteration; Idle is always allowed and is how a stage is stopped.
    pub fn begin_stage(&mut self, to: Stage) -> Result<(), SessionError> {
        let allowed = match to {
            Stage::Idle => true,
            Stage::Collect => matches!(self.completed, None | Some(Stage::Practice)),
            Stage::Train => matches!(self.completed, Some(Stage::Collect | Stage::Train)),
            Stage::Evaluate => matches!(self.completed, Some(Stage::Train | Stage::Evaluate)),
            Stage::Practice => {
                matches!(self.completed, Some(Stage::Train | Stage::Evaluate | Stage::Practice))
            }
        };
        if !allowed {
            return Err(SessionError::StageOrder { after: self.completed, to, iteration: self.iteration });
        }
        if to == Stage::Collect && self.completed == Some(Stage::Practice) {
            self.iteration += 1;
            self.completed = None;
        }
        self.stage = to;
        self.publish_stage(StageStatus::Started);
        Ok(())
    }

    fn require(&self, expected: Stage) -> Result<(), SessionError> {
        if self.stage != expected {
            return Err(SessionError::WrongStage { expected, actual: self.stage });
        }
        Ok(())
    }

    fn complete(&mut self, stage: Stage) -> Result<(), SessionError> {
        self.completed = Some(stage);
        self.publish_stage(StageStatus::Completed);
        self.save()
    }

    fn abort(&mut self) {
        self.publish_stage(StageStatus::Aborted);
        self.stage = Stage::Idle;
    }

    /// Stage 1. Streams every planned recording from `source`, labels it from
    /// its cue schedule and stores it. Nothing is stored unless every
    /// recording completes.
    pub fn run_collection<S: SampleSource + ?Sized>(&mut self, source: &mut S) -> Result<Vec<Recording>, SessionError> {
        self.run_collection_with(source, &mut ())
    }

    pub fn run_collection_with<S: SampleSource + ?Sized, M: StageMonitor + ?Sized>(
        &mut self,
        source: &mut S,
        monitor: &mut M,
    ) -> Result<Vec<Recording>, SessionError> {
        self.require(Stage::Collect)?;
        if self.completed == Some(Stage::Collect) {
            return Err(SessionError::StageOrder {
                after: self.completed,
                to: Stage::Collect,
                iteration: self.iteration,
            });
        }
        let plan = plan_collection_with(self.iteration, &self.config.schedule());
        let model = self.models.get(&self.iteration.saturating_sub(1)).cloned();
        if let Some(m) = &model {
            self.engine.set_model(m.clone());
        }
        let mut recordings = Vec::with_capacity(plan.len());
        for (index, planned) in plan.iter().enumerate() {
            let id = format!("it{}_{}_{}_{}", self.iteration, planned.role, index, planned.condition.slug());
            match self.record_one(&id, planned, model.is_some(), source, monitor) {
                Ok(rec) => recordings.push(rec),
                Err(e) => {
                    self.abort();
                    return Err(e);
                }
            }
        }
        let data = self.datasets.entry(self.iteration).or_default();
        data.train.clear();
        data.test.clear();
        for rec in &recordings {
            match rec.role {
                Role::Train => data.train.push(rec.clone()),
                Role::Test => data.test.push(rec.clone()),
            }
        }
        self.complete(Stage::Collect)?;
        Ok(recordings)
    }

    fn record_one<S: SampleSource + ?Sized, M: StageMonitor + ?Sized>(
        &mut self,
        id: &str,
        planned: &PlannedRecording,
        classifier_running: bool,
        source: &mut S,
        monitor: &mut M,
    ) -> Result<Recording, SessionError> {
        let aborted = |reason: String| SessionError::RecordingAborted { id: id.to_string(), reason };
        self.engine.set_motor(planned.condition.motor_engaged());
        self.engine.begin_stream();
        self.flush_device_events();
        let total = planned.schedule.total_duration_ms() + self.config.label_offset_ms;
        let slots = total.div_ceil(SAMPLE_PERIOD_MS);
        let mut samples = Vec::with_capacity(slots as usize);
        let mut last_cue_index = None;
        for slot in 0..slots {
            let t = slot * SAMPLE_PERIOD_MS;
            let cue_at = t.checked_sub(self.config.label_offset_ms).and_then(|offset| planned.schedule.cue_at(offset));
            let cue = cue_at.map(|(i, _)| planned.schedule.entries()[i].intent);
            if let Some((i, _)) = cue_at {
                if last_cue_index != Some(i) {
                    last_cue_index = Some(i);
                    let entry = planned.schedule.entries()[i];
                    self.publish(TelemetryMessage::cue(t, entry.intent, entry.duration_ms, planned.condition));
                }
            }
            if monitor.poll(&mut self.engine, t) == Flow::Stop {
                return Err(aborted("stopped by operator".into()));
            }
            let prompt = Prompt { t_ms: t, cue, condition: planned.condition };
            let mut sample = source.next_sample(&prompt).map_err(|e| aborted(e.to_string()))?;
            sample.t_ms = t;
            if !sample.is_well_formed() {
                return Err(aborted(format!("bad sample at {t}ms")));
            }
            if classifier_running {
                let frame = self.engine.step(&sample, t).map_err(|e| aborted(e.to_string()))?;
                self.publish(TelemetryMessage::frame(&frame));
            } else {
                self.engine.cue_step(cue.unwrap_or(Intent::Relax), t).map_err(|e| aborted(e.to_string()))?;
            }
            self.flush_device_events();
            samples.push(EmgSample { cue: None, ..sample });
        }
        let rec = Recording {
            id: id.to_string(),
            iteration: self.iteration,
            condition: planned.condition,
            role: planned.role,
            samples,
            sample_rate_hz: SAMPLE_RATE_HZ,
        };
        Ok(label_samples(&rec, &planned.schedule, self.config.label_offset_ms)?)
    }

    /// Stage 2. Fits a fresh model on this iteration's training recordings
    /// (all iterations so far with cumulative training).
    pub fn train_iteration(&mut self) -> Result<Arc<LdaModel>, SessionError> {
        self.require(Stage::Train)?;
        let recordings: Vec<&Recording> = if self.config.cumulative_training {
            self.datasets.range(..=self.iteration).flat_map(|(_, d)| d.train.iter()).collect()
        } else {
            self.datasets.get(&self.iteration).map(|d| d.train.iter().collect()).unwrap_or_default()
        };
        if recordings.is_empty() {
            return Err(SessionError::NoData { iteration: self.iteration, role: Role::Train });
        }
        let data = LabeledDataset::from_recordings(recordings)?;
        let model = Arc::new(fit_with(&data, &self.config.classifier)?);
        self.models.insert(self.iteration, model.clone());
        self.engine.set_model(model.clone());
        self.complete(Stage::Train)?;
        Ok(model)
    }

    /// Optional evaluation stage on the held-out recordings.
    pub fn evaluate_iteration(&mut self) -> Result<IterationReport, SessionError> {
        self.require(Stage::Evaluate)?;
        let model = self.models.get(&self.iteration).cloned().ok_or(SessionError::NoModel(self.iteration))?;
        let tests = self
            .datasets
            .get(&self.iteration)
            .map(|d| d.test.as_slice())
            .filter(|t| !t.is_empty())
            .ok_or(SessionError::NoData { iteration: self.iteration, role: Role::Test })?;
        let report = build_report(self.iteration, model.as_ref(), tests, &self.config)?;
        self.reports.insert(self.iteration, report.clone());
        self.complete(Stage::Evaluate)?;
        Ok(report)
    }

    /// Stage 3. Streams live inference with feedback for `duration_ms`,
    /// prompting open/relax/close/relax blocks and handing every frame back
    /// to the source.
    pub fn run_practice<S: SampleSource + ?Sized>(
        &mut self,
        source: &mut S,
        duration_ms: u64,
    ) -> Result<PracticeSummary, SessionError> {
        self.run_practice_with(source, duration_ms, &mut ())
    }

    pub fn run_practice_with<S: SampleSource + ?Sized, M: StageMonitor + ?Sized>(
        &mut self,
        source: &mut S,
        duration_ms: u64,
        monitor: &mut M,
    ) -> Result<PracticeSummary, SessionError> {
        self.require(Stage::Practice)?;
        let model = self.models.get(&self.iteration).cloned().ok_or(SessionError::NoModel(self.iteration))?;
        self.engine.set_model(model.clone());
        self.engine.begin_stream();
        self.flush_device_events();
        let script = [Intent::Open, Intent::Relax, Intent::Close, Intent::Relax];
        let block = self.config.practice_block_ms.max(SAMPLE_PERIOD_MS);
        let mut summary = PracticeSummary::default();
        let transitions_before = self.engine.hand_transitions();
        let mut last_block = None;
        let mut last_intent = self.engine.intent();
        let mut t = 0;
        while t < duration_ms {
            let block_index = t / block;
            let attempted = script[(block_index % script.len() as u64) as usize];
            if last_block != Some(block_index) {
                last_block = Some(block_index);
                self.publish(TelemetryMessage::cue(t, attempted, block, ArmCondition::Free));
            }
            if monitor.poll(&mut self.engine, t) == Flow::Stop {
                summary.stopped = true;
                break;
            }
            let prompt = Prompt { t_ms: t, cue: Some(attempted), condition: ArmCondition::Free };
            let sample = match source.next_sample(&prompt) {
                Ok(s) => s,
                Err(e) => {
                    self.abort();
                    return Err(e.into());
                }
            };
            let frame: FeedbackFrame = match self.engine.step(&sample, t) {
                Ok(f) => f,
                Err(e) => {
                    self.abort();
                    return Err(e.into());
                }
            };
            self.publish(TelemetryMessage::frame(&frame));
            self.flush_device_events();
            source.observe(&frame, &prompt, &model);
            summary.frames += 1;
            summary.time_in_intent_ms[frame.intent.index()] += SAMPLE_PERIOD_MS;
            if frame.intent != last_intent {
                summary.intent_changes += 1;
                last_intent = frame.intent;
            }
            t += SAMPLE_PERIOD_MS;
        }
        summary.duration_ms = t;
        summary.hand_transitions = self.engine.hand_transitions() - transitions_before;
        self.practice.insert(self.iteration, summary.clone());
        self.complete(Stage::Practice)?;
        Ok(summary)
    }

    /// Runs `iterations` full passes of the loop against one source and
    /// returns the evaluation report of each.
    pub fn iterate<S: SampleSource + ?Sized>(
        &mut self,
        source: &mut S,
        iterations: u32,
    ) -> Result<Vec<IterationReport>, SessionError> {
        let mut reports = Vec::new();
        for n in 0..iterations {
            self.begin_stage(Stage::Collect)?;
            self.run_collection(source)?;
            self.begin_stage(Stage::Train)?;
            self.train_iteration()?;
            self.begin_stage(Stage::Evaluate)?;
            reports.push(self.evaluate_iteration()?);
            if n + 1 < iterations || self.config.practice_after_final {
                self.begin_stage(Stage::Practice)?;
                self.run_practice(source, self.config.practice_duration_ms)?;
            }
        }
        Ok(reports)
    }
}

/// Scores `model` on `tests` and gathers the separability diagnostics.
pub fn build_report(
    iteration: u32,
    model: &LdaModel,
    tests: &[Recording],
    config: &SessionConfig,
) -> Result<IterationReport, SessionError> {
    let eval = evaluate_recordings(model, tests, &config.engine)?;
    let refs: Vec<&Recording> = tests.iter().collect();
    let sampled = sample_for_embedding(
        &refs,
        config.silhouette_per_intent,
        config.seed ^ (iteration as u64).wrapping_mul(0x9E37_79B9),
        SampleSpace::Preprocessed,
    );
    let silhouette = analytics::silhouette(&sampled.x, &sampled.labels)?;
    let per_condition = if iteration == 1 {
        let mut by_condition: BTreeMap<ArmCondition, Confusion> = BTreeMap::new();
        for (condition, confusion) in &eval.per_recording {
            by_condition.entry(*condition).or_default().merge(confusion);
        }
        by_condition
            .into_iter()
            .filter_map(|(condition, c)| accuracy(&c).ok().map(|accuracy| ConditionAccuracy { condition, accuracy }))
            .collect()
    } else {
        Vec::new()
    };
    Ok(IterationReport {
        iteration,
        test_accuracy: accuracy(&eval.smoothed)?,
        raw_accuracy: accuracy(&eval.raw)?,
        confusion: eval.smoothed,
        weight_variance_open: weight_variance(model, Intent::Open),
        silhouette,
        per_condition,
        test_samples: eval.smoothed.total(),
    })
}
