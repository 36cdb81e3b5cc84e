//! TOML configuration holding every tunable, and JSON subject profiles.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::bus::DEFAULT_QUEUE_CAPACITY;
use super::IoError;
use crate::analytics::TsneParams;
use crate::session::SessionConfig;
use crate::simsubject::SubjectProfile;

/// Overrides applied on top of the chosen subject profile.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SubjectOverrides {
    pub learning_rate: Option<f64>,
    pub drift: Option<f64>,
    pub trial_jitter: Option<f64>,
    pub perception_noise: Option<f64>,
}

impl SubjectOverrides {
    pub fn apply(&self, profile: &mut SubjectProfile) {
        if let Some(v) = self.learning_rate {
            profile.learning_rate = v;
        }
        if let Some(v) = self.drift {
            profile.drift = v;
        }
        if let Some(v) = self.trial_jitter {
            profile.trial_jitter = v;
        }
        if let Some(v) = self.perception_noise {
            profile.perception_noise = v;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServerConfig {
    pub bind: String,
    /// Per-subscriber queue length before the oldest lines are dropped.
    pub queue_capacity: usize,
    /// Pace streaming stages to wall-clock time.
    pub realtime: bool,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self { bind: "127.0.0.1:7878".into(), queue_capacity: DEFAULT_QUEUE_CAPACITY, realtime: true }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Config {
    pub session: SessionConfig,
    pub subject: SubjectOverrides,
    pub tsne: TsneParams,
    pub server: ServerConfig,
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self, IoError> {
        toml::from_str(text).map_err(|e| IoError::Toml(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String, IoError> {
        toml::to_string_pretty(self).map_err(|e| IoError::Toml(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, IoError> {
        let text = std::fs::read_to_string(path).map_err(IoError::file(path))?;
        Self::from_toml(&text)
    }
}

pub fn read_profile(path: &Path) -> Result<SubjectProfile, IoError> {
    let text = std::fs::read_to_string(path).map_err(IoError::file(path))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn write_profile(profile: &SubjectProfile, path: &Path) -> Result<(), IoError> {
    std::fs::write(path, serde_json::to_string_pretty(profile)?).map_err(IoError::file(path))
}
