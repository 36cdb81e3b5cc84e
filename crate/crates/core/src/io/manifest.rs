//! Session manifest: a JSON document naming the subject, configuration,
//! stage position, every recording and model file, and the reports. Paths
//! are relative to the manifest's directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::model_file::{read_model, write_model};
use super::recording_file::{read_recording, write_recording_for};
use super::IoError;
use crate::session::{IterationData, IterationReport, PracticeSummary, Session, SessionConfig, Stage};
use crate::types::{ArmCondition, Role, SubjectMeta};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordingEntry {
    pub id: String,
    pub path: PathBuf,
    pub role: Role,
    pub condition: ArmCondition,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationEntry {
    pub iteration: u32,
    pub recordings: Vec<RecordingEntry>,
    pub model: Option<PathBuf>,
    pub report: Option<IterationReport>,
    pub practice: Option<PracticeSummary>,
}

impl IterationEntry {
    pub fn count(&self, role: Role) -> usize {
        self.recordings.iter().filter(|r| r.role == role).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionManifest {
    pub v: u32,
    pub subject: SubjectMeta,
    pub config: SessionConfig,
    pub iteration: u32,
    pub stage: Stage,
    pub completed: Option<Stage>,
    pub iterations: Vec<IterationEntry>,
}

impl SessionManifest {
    pub fn read(path: &Path) -> Result<Self, IoError> {
        let text = std::fs::read_to_string(path).map_err(IoError::file(path))?;
        let manifest: SessionManifest = serde_json::from_str(&text)?;
        if manifest.v != MANIFEST_VERSION {
            return Err(IoError::Version { what: "manifest", found: manifest.v.to_string() });
        }
        Ok(manifest)
    }

    pub fn iteration(&self, n: u32) -> Option<&IterationEntry> {
        self.iterations.iter().find(|e| e.iteration == n)
    }
}

fn base_dir(manifest_path: &Path) -> PathBuf {
    manifest_path.parent().map(Path::to_path_buf).unwrap_or_default()
}

/// Writes recording and model files that are missing (always rewriting the
/// current iteration's) and then the manifest itself, atomically.
pub fn save_session(session: &Session, manifest_path: &Path) -> Result<SessionManifest, IoError> {
    let base = base_dir(manifest_path);
    let rec_dir = Path::new("recordings");
    let model_dir = Path::new("models");
    std::fs::create_dir_all(base.join(rec_dir)).map_err(IoError::file(base.join(rec_dir)))?;
    std::fs::create_dir_all(base.join(model_dir)).map_err(IoError::file(base.join(model_dir)))?;

    let mut iterations: BTreeMap<u32, IterationEntry> = BTreeMap::new();
    fn slot(iterations: &mut BTreeMap<u32, IterationEntry>, n: u32) -> &mut IterationEntry {
        iterations.entry(n).or_insert_with(|| IterationEntry {
            iteration: n,
            recordings: Vec::new(),
            model: None,
            report: None,
            practice: None,
        })
    }
    for (&n, data) in session.datasets() {
        for rec in data.train.iter().chain(&data.test) {
            let rel = rec_dir.join(format!("{}.csv", rec.id));
            let abs = base.join(&rel);
            if n == session.iteration() || !abs.exists() {
                write_recording_for(rec, &session.subject().id, &abs)?;
            }
            slot(&mut iterations, n).recordings.push(RecordingEntry {
                id: rec.id.clone(),
                path: rel,
                role: rec.role,
                condition: rec.condition,
                samples: rec.samples.len(),
            });
        }
    }
    for (&n, model) in session.models() {
        let rel = model_dir.join(format!("iter{n}.lda"));
        let abs = base.join(&rel);
        if n == session.iteration() || !abs.exists() {
            write_model(model, &abs)?;
        }
        slot(&mut iterations, n).model = Some(rel);
    }
    for (&n, report) in session.reports() {
        slot(&mut iterations, n).report = Some(report.clone());
    }
    for (&n, summary) in session.practice_summaries() {
        slot(&mut iterations, n).practice = Some(summary.clone());
    }

    let manifest = SessionManifest {
        v: MANIFEST_VERSION,
        subject: session.subject().clone(),
        config: session.config().clone(),
        iteration: session.iteration(),
        stage: session.stage(),
        completed: session.completed_stage(),
        iterations: iterations.into_values().collect(),
    };
    let tmp = manifest_path.with_extension("json.tmp");
    std::fs::write(&tmp, serde_json::to_string_pretty(&manifest)?).map_err(IoError::file(&tmp))?;
    std::fs::rename(&tmp, manifest_path).map_err(IoError::file(manifest_path))?;
    Ok(manifest)
}

/// Rebuilds a session from its manifest so it can resume at the recorded
/// stage.
pub fn load_session(manifest_path: &Path) -> Result<Session, IoError> {
    let manifest = SessionManifest::read(manifest_path)?;
    let base = base_dir(manifest_path);
    let mut session = Session::new(manifest.subject.clone(), manifest.config.clone());
    for entry in &manifest.iterations {
        let mut data = IterationData::default();
        for r in &entry.recordings {
            let rec = read_recording(&base.join(&r.path))?;
            if rec.role != r.role || rec.id != r.id {
                return Err(IoError::Invalid(format!("recording {} does not match its manifest entry", r.id)));
            }
            match rec.role {
                Role::Train => data.train.push(rec),
                Role::Test => data.test.push(rec),
            }
        }
        if !entry.recordings.is_empty() {
            session.datasets.insert(entry.iteration, data);
        }
        if let Some(path) = &entry.model {
            session.models.insert(entry.iteration, Arc::new(read_model(&base.join(path))?));
        }
        if let Some(report) = &entry.report {
            session.reports.insert(entry.iteration, report.clone());
        }
        if let Some(practice) = &entry.practice {
            session.practice.insert(entry.iteration, practice.clone());
        }
    }
    session.iteration = manifest.iteration.max(1);
    session.completed = manifest.completed;
    session.stage = Stage::Idle;
    if let Some(model) = session.models.get(&session.iteration).cloned() {
        session.engine.set_model(model);
    }
    Ok(session)
}
