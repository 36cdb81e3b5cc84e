//! Uniform contract for anything that produces EMG samples: the simulated
//! subject, a replayed recording, or a live socket.

use thiserror::Error;

use crate::classifier::LdaModel;
use crate::engine::FeedbackFrame;
use crate::types::{ArmCondition, EmgSample, Intent};

/// What the session is asking for at a given instant. Simulated subjects act
/// on the cue; recorded and live sources ignore it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prompt {
    pub t_ms: u64,
    pub cue: Option<Intent>,
    pub condition: ArmCondition,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SourceError {
    #[error("source exhausted")]
    Exhausted,
    #[error("source i/o failure: {0}")]
    Io(String),
    #[error("malformed sample: {0}")]
    Malformed(String),
}

pub trait SampleSource {
    fn next_sample(&mut self, prompt: &Prompt) -> Result<EmgSample, SourceError>;

    /// Feedback shown to the subject for the sample just produced. Only
    /// sources that model a human react to it.
    fn observe(&mut self, _frame: &FeedbackFrame, _prompt: &Prompt, _model: &LdaModel) {}
}

impl<S: SampleSource + ?Sized> SampleSource for &mut S {
    fn next_sample(&mut self, prompt: &Prompt) -> Result<EmgSample, SourceError> {
        (**self).next_sample(prompt)
    }

    fn observe(&mut self, frame: &FeedbackFrame, prompt: &Prompt, model: &LdaModel) {
        (**self).observe(frame, prompt, model)
    }
}

impl<S: SampleSource + ?Sized> SampleSource for Box<S> {
    fn next_sample(&mut self, prompt: &Prompt) -> Result<EmgSample, SourceError> {
        (**self).next_sample(prompt)
    }

    fn observe(&mut self, frame: &FeedbackFrame, prompt: &Prompt, model: &LdaModel) {
        (**self).observe(frame, prompt, model)
    }
}

/// Plays back a fixed sample list, then reports exhaustion.
#[derive(Debug, Clone)]
pub struct ReplaySource {
    samples: Vec<EmgSample>,
    next: usize,
}

impl ReplaySource {
    pub fn new(samples: Vec<EmgSample>) -> Self {
        Self { samples, next: 0 }
    }

    pub fn remaining(&self) -> usize {
        self.samples.len() - self.next
    }
}

impl SampleSource for ReplaySource {
    fn next_sample(&mut self, _prompt: &Prompt) -> Result<EmgSample, SourceError> {
        let s = self.samples.get(self.next).copied().ok_or(SourceError::Exhausted)?;
        self.next += 1;
        Ok(s)
    }
}

/// Passes through an inner source and fails after `limit` samples.
#[derive(Debug)]
pub struct DropoutAfter<S> {
    inner: S,
    limit: usize,
    served: usize,
}

impl<S> DropoutAfter<S> {
    pub fn new(inner: S, limit: usize) -> Self {
        Self { inner, limit, served: 0 }
    }
}

impl<S: SampleSource> SampleSource for DropoutAfter<S> {
    fn next_sample(&mut self, prompt: &Prompt) -> Result<EmgSample, SourceError> {
        if self.served >= self.limit {
            return Err(SourceError::Io("simulated dropout".into()));
        }
        self.served += 1;
        self.inner.next_sample(prompt)
    }

    fn observe(&mut self, frame: &FeedbackFrame, prompt: &Prompt, model: &LdaModel) {
        self.inner.observe(frame, prompt, model)
    }
}
