//! Domain types shared across the crate: intents, samples, arm conditions,
//! recordings, cue schedules and subject metadata.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of EMG electrodes on the armband.
pub const CHANNELS: usize = 8;

/// Nominal armband sampling rate.
pub const SAMPLE_RATE_HZ: f64 = 50.0;

/// Nominal spacing between consecutive samples at 50Hz.
pub const SAMPLE_PERIOD_MS: u64 = 20;

/// Length of a single verbal cue in the default collection protocol.
pub const DEFAULT_CUE_MS: u64 = 5000;

/// Raw channel vector in device units.
pub type Channels = [f64; CHANNELS];

/// The three hand intents the classifier distinguishes.
///
/// Integer codes are part of every on-disk format and must not change.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Intent {
    Relax = 0,
    Open = 1,
    Close = 2,
}

impl Intent {
    pub const ALL: [Intent; 3] = [Intent::Relax, Intent::Open, Intent::Close];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Intent> {
        match code {
            0 => Some(Intent::Relax),
            1 => Some(Intent::Open),
            2 => Some(Intent::Close),
            _ => None,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Intent::Relax => "relax",
            Intent::Open => "open",
            Intent::Close => "close",
        }
    }
}

impl fmt::Display for Intent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown intent `{0}` (expected relax, open or close)")]
pub struct UnknownIntent(pub String);

impl FromStr for Intent {
    type Err = UnknownIntent;

    /// Case-sensitive: only the lowercase names are accepted.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "relax" => Ok(Intent::Relax),
            "open" => Ok(Intent::Open),
            "close" => Ok(Intent::Close),
            other => Err(UnknownIntent(other.to_string())),
        }
    }
}

/// One timestep of 8-channel EMG.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmgSample {
    /// Milliseconds since the start of the recording.
    pub t_ms: u64,
    pub channels: Channels,
    /// Ground-truth label during cued collection.
    pub cue: Option<Intent>,
}

impl EmgSample {
    pub fn new(t_ms: u64, channels: Channels, cue: Option<Intent>) -> Self {
        Self { t_ms, channels, cue }
    }

    /// True when every channel is finite and non-negative.
    pub fn is_well_formed(&self) -> bool {
        self.channels.iter().all(|c| c.is_finite() && *c >= 0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ArmPosture {
    OnTable,
    OffTable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Motor {
    On,
    Off,
}

/// Posture and motor combination a recording was collected under.
///
/// The first iteration uses the four fixed combinations; later iterations
/// record in the unconstrained `Free` condition with the motor running the
/// trained classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ArmCondition {
    Fixed { posture: ArmPosture, motor: Motor },
    Free,
}

impl ArmCondition {
    pub const FIXED: [ArmCondition; 4] = [
        ArmCondition::Fixed { posture: ArmPosture::OnTable, motor: Motor::Off },
        ArmCondition::Fixed { posture: ArmPosture::OnTable, motor: Motor::On },
        ArmCondition::Fixed { posture: ArmPosture::OffTable, motor: Motor::Off },
        ArmCondition::Fixed { posture: ArmPosture::OffTable, motor: Motor::On },
    ];

    pub fn label(&self) -> &'static str {
        match self {
            ArmCondition::Fixed { posture: ArmPosture::OnTable, motor: Motor::Off } => "arm on table, motor off",
            ArmCondition::Fixed { posture: ArmPosture::OnTable, motor: Motor::On } => "arm on table, motor on",
            ArmCondition::Fixed { posture: ArmPosture::OffTable, motor: Motor::Off } => "arm off table, motor off",
            ArmCondition::Fixed { posture: ArmPosture::OffTable, motor: Motor::On } => "arm off table, motor on",
            ArmCondition::Free => "free",
        }
    }

    /// Short identifier usable in file names.
    pub fn slug(&self) -> &'static str {
        match self {
            ArmCondition::Fixed { posture: ArmPosture::OnTable, motor: Motor::Off } => "table_off",
            ArmCondition::Fixed { posture: ArmPosture::OnTable, motor: Motor::On } => "table_on",
            ArmCondition::Fixed { posture: ArmPosture::OffTable, motor: Motor::Off } => "raised_off",
            ArmCondition::Fixed { posture: ArmPosture::OffTable, motor: Motor::On } => "raised_on",
            ArmCondition::Free => "free",
        }
    }

    pub fn posture(&self) -> Option<ArmPosture> {
        match self {
            ArmCondition::Fixed { posture, .. } => Some(*posture),
            ArmCondition::Free => None,
        }
    }

    /// Whether the orthosis motor provides assistance in this condition.
    pub fn motor_engaged(&self) -> bool {
        match self {
            ArmCondition::Fixed { motor, .. } => *motor == Motor::On,
            ArmCondition::Free => true,
        }
    }

    /// Position in [`ArmCondition::FIXED`], `None` for `Free`.
    pub fn fixed_index(&self) -> Option<usize> {
        ArmCondition::FIXED.iter().position(|c| c == self)
    }
}

impl fmt::Display for ArmCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown arm condition `{0}`")]
pub struct UnknownCondition(pub String);

impl FromStr for ArmCondition {
    type Err = UnknownCondition;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "free" {
            return Ok(ArmCondition::Free);
        }
        ArmCondition::FIXED.iter().find(|c| c.label() == s).copied().ok_or_else(|| UnknownCondition(s.to_string()))
    }
}

impl Serialize for ArmCondition {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.label())
    }
}

impl<'de> Deserialize<'de> for ArmCondition {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Train,
    Test,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Train => "train",
            Role::Test => "test",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RecordingError {
    #[error("recording `{0}` has no samples")]
    Empty(String),
    #[error("recording `{id}`: t_ms does not increase at sample {index}")]
    NonMonotonic { id: String, index: usize },
    #[error("recording `{id}`: sample {index} has a non-finite or negative channel")]
    BadSample { id: String, index: usize },
}

/// A continuous, uninterrupted labeled sample sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    pub id: String,
    pub iteration: u32,
    pub condition: ArmCondition,
    pub role: Role,
    pub samples: Vec<EmgSample>,
    pub sample_rate_hz: f64,
}

impl Recording {
    pub fn validate(&self) -> Result<(), RecordingError> {
        if self.samples.is_empty() {
            return Err(RecordingError::Empty(self.id.clone()));
        }
        for (index, s) in self.samples.iter().enumerate() {
            if !s.is_well_formed() {
                return Err(RecordingError::BadSample { id: self.id.clone(), index });
            }
            if index > 0 && s.t_ms <= self.samples[index - 1].t_ms {
                return Err(RecordingError::NonMonotonic { id: self.id.clone(), index });
            }
        }
        Ok(())
    }

    /// Time span covered by the samples, counting one sample period for the
    /// last sample. A 3250-sample recording at 50Hz covers 65000ms.
    pub fn duration_ms(&self) -> u64 {
        match (self.samples.first(), self.samples.last()) {
            (Some(first), Some(last)) => {
                let period = (1000.0 / self.sample_rate_hz).round() as u64;
                last.t_ms - first.t_ms + period
            }
            _ => 0,
        }
    }

    pub fn labeled(&self) -> impl Iterator<Item = (&EmgSample, Intent)> {
        self.samples.iter().filter_map(|s| s.cue.map(|c| (s, c)))
    }

    pub fn label_counts(&self) -> [usize; 3] {
        let mut counts = [0; 3];
        for (_, intent) in self.labeled() {
            counts[intent.index()] += 1;
        }
        counts
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CueEntry {
    pub intent: Intent,
    pub duration_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScheduleError {
    #[error("cue {0} has zero duration")]
    ZeroDuration(usize),
    #[error("cues {0} and {1} are both actions with no relax cue between them")]
    MissingRelax(usize, usize),
    #[error("schedule of {schedule_ms}ms does not fit in {available_ms}ms of recording")]
    ScheduleOverrun { schedule_ms: u64, available_ms: u64 },
}

/// Ordered list of verbal cues.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<CueEntry>", into = "Vec<CueEntry>")]
pub struct CueSchedule {
    entries: Vec<CueEntry>,
}

impl CueSchedule {
    pub fn new(entries: Vec<CueEntry>) -> Result<Self, ScheduleError> {
        if let Some(i) = entries.iter().position(|e| e.duration_ms == 0) {
            return Err(ScheduleError::ZeroDuration(i));
        }
        let mut last_action: Option<usize> = None;
        for (i, e) in entries.iter().enumerate() {
            if e.intent == Intent::Relax {
                last_action = None;
            } else {
                if let Some(prev) = last_action {
                    return Err(ScheduleError::MissingRelax(prev, i));
                }
                last_action = Some(i);
            }
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[CueEntry] {
        &self.entries
    }

    pub fn total_duration_ms(&self) -> u64 {
        self.entries.iter().map(|e| e.duration_ms).sum()
    }

    /// Cue active at `offset_ms` from schedule start. Intervals are half-open,
    /// so a boundary instant belongs to the later cue.
    pub fn intent_at(&self, offset_ms: u64) -> Option<Intent> {
        self.cue_at(offset_ms).map(|(i, _)| self.entries[i].intent)
    }

    /// Index of the active cue and its start offset.
    pub fn cue_at(&self, offset_ms: u64) -> Option<(usize, u64)> {
        let mut start = 0;
        for (i, e) in self.entries.iter().enumerate() {
            if offset_ms < start + e.duration_ms {
                return Some((i, start));
            }
            start += e.duration_ms;
        }
        None
    }
}

impl TryFrom<Vec<CueEntry>> for CueSchedule {
    type Error = ScheduleError;

    fn try_from(entries: Vec<CueEntry>) -> Result<Self, Self::Error> {
        CueSchedule::new(entries)
    }
}

impl From<CueSchedule> for Vec<CueEntry> {
    fn from(s: CueSchedule) -> Self {
        s.entries
    }
}

/// Relax, then open/relax/close/relax three times over: 13 cues of 5s.
pub fn default_cue_schedule() -> CueSchedule {
    cue_schedule_with(DEFAULT_CUE_MS, 3)
}

/// Same shape as [`default_cue_schedule`] with a custom cue length and
/// number of open/close repetitions.
pub fn cue_schedule_with(cue_ms: u64, repetitions: usize) -> CueSchedule {
    let mut entries = vec![CueEntry { intent: Intent::Relax, duration_ms: cue_ms }];
    for _ in 0..repetitions {
        for action in [Intent::Open, Intent::Close] {
            entries.push(CueEntry { intent: action, duration_ms: cue_ms });
            entries.push(CueEntry { intent: Intent::Relax, duration_ms: cue_ms });
        }
    }
    CueSchedule::new(entries).expect("alternating schedule is valid")
}

/// Returns a copy of `recording` whose samples carry the cue active at their
/// timestamp. The schedule starts `start_offset_ms` after the first sample;
/// samples outside it are left unlabeled.
pub fn label_samples(
    recording: &Recording,
    schedule: &CueSchedule,
    start_offset_ms: u64,
) -> Result<Recording, ScheduleError> {
    let schedule_ms = schedule.total_duration_ms();
    let available_ms = recording.duration_ms().saturating_sub(start_offset_ms);
    if schedule_ms > available_ms {
        return Err(ScheduleError::ScheduleOverrun { schedule_ms, available_ms });
    }
    let origin = recording.samples.first().map_or(0, |s| s.t_ms) + start_offset_ms;
    let mut out = recording.clone();
    for s in &mut out.samples {
        s.cue = s.t_ms.checked_sub(origin).and_then(|offset| schedule.intent_at(offset));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubjectMeta {
    pub id: String,
    pub age: u32,
    pub gender: String,
    /// Fugl-Meyer upper-extremity score, 0..=66.
    pub fm_ue: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("FM-UE score {0} outside 0..=66")]
pub struct InvalidFmUe(pub u32);

impl SubjectMeta {
    pub fn new(id: impl Into<String>, age: u32, gender: impl Into<String>, fm_ue: u32) -> Result<Self, InvalidFmUe> {
        if fm_ue > 66 {
            return Err(InvalidFmUe(fm_ue));
        }
        Ok(Self { id: id.into(), age, gender: gender.into(), fm_ue })
    }

    pub fn simulated(id: impl Into<String>) -> Self {
        Self { id: id.into(), age: 0, gender: "n/a".into(), fm_ue: 0 }
    }
}
