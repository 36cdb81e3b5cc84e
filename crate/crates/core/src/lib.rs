//! EMG intent inferral and reciprocal-learning sessions.
//!
//! Samples flow through [`engine::Engine`] (preprocess, LDA, median smoothing,
//! decision, orthosis state machine). [`session::Session`] runs the
//! collect/train/evaluate/practice loop against any [`source::SampleSource`],
//! including the adaptive [`simsubject::SimulatedSubject`].

pub mod analytics;
pub mod classifier;
pub mod engine;
pub mod io;
pub mod session;
pub mod signal;
pub mod simsubject;
pub mod source;
pub mod types;

pub use classifier::{fit, fit_with, predict_proba, IntentClassifier, LabeledDataset, LdaConfig, LdaModel};
pub use engine::{Engine, EngineConfig, FeedbackFrame, Hand};
pub use session::{IterationReport, Session, SessionConfig, SessionError, Stage};
pub use signal::{decide, preprocess, MedianSmoother, ProbVector};
pub use simsubject::{SimulatedSubject, SubjectProfile};
pub use source::{Prompt, SampleSource, SourceError};
pub use types::{ArmCondition, Channels, CueSchedule, EmgSample, Intent, Recording, Role, SubjectMeta};
