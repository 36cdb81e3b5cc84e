//! Synthetic subject: per-intent Gaussian EMG generators shifted by arm
//! condition, plus a feedback-driven adaptation rule that moves the open and
//! close generators toward the classifier's more separable regions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::classifier::LdaModel;
use crate::engine::FeedbackFrame;
use crate::signal::{preprocess, preprocess_slope};
use crate::source::{Prompt, SampleSource, SourceError};
use crate::types::{ArmCondition, Channels, EmgSample, Intent, CHANNELS};

/// Generated samples are clamped to this raw ceiling.
pub const RAW_MAX: f64 = 1200.0;

pub type Matrix8 = [[f64; CHANNELS]; CHANNELS];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generator {
    /// Mean activation in raw units.
    pub mean: Channels,
    /// Sample covariance in raw units squared. Must be positive semi-definite.
    pub cov: Matrix8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionParams {
    /// Added to every intent's mean under this condition.
    pub offset: Channels,
    /// Multiplies the generator covariance.
    pub noise_scale: f64,
}

/// Everything needed to replay a simulated subject.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectProfile {
    pub name: String,
    /// Relax, open, close.
    pub generators: [Generator; 3],
    /// In [`ArmCondition::FIXED`] order. The free condition picks one of these
    /// per cue trial.
    pub conditions: [ConditionParams; 4],
    /// Raw units moved per feedback frame at zero bar height.
    pub learning_rate: f64,
    /// Random-walk step applied to every generator mean per feedback frame.
    pub drift: f64,
    /// Standard deviation of the per-trial mean jitter.
    pub trial_jitter: f64,
    /// Noise added to the perceived margin direction before normalizing.
    pub perception_noise: f64,
    pub seed: u64,
}

/// Covariance with per-channel standard deviations and correlation
/// `rho^d` between electrodes `d` positions apart around the forearm.
pub fn ring_covariance(std: &Channels, rho: f64) -> Matrix8 {
    let mut cov = [[0.0; CHANNELS]; CHANNELS];
    for i in 0..CHANNELS {
        for j in 0..CHANNELS {
            let d = i.abs_diff(j).min(CHANNELS - i.abs_diff(j));
            cov[i][j] = std[i] * std[j] * rho.powi(d as i32);
        }
    }
    cov
}

impl SubjectProfile {
    /// Coactivating subject whose open and close patterns overlap heavily
    /// and shift with arm posture; learns from feedback.
    pub fn default_adaptive() -> Self {
        let relax = [90.0, 80.0, 85.0, 95.0, 100.0, 90.0, 85.0, 80.0];
        let open = [300.0, 330.0, 280.0, 220.0, 190.0, 170.0, 175.0, 230.0];
        let close = [220.0, 195.0, 200.0, 245.0, 310.0, 335.0, 300.0, 250.0];
        let std_relax = [35.0; CHANNELS];
        let std_active = [300.0; CHANNELS];
        Self {
            name: "sim:adaptive".into(),
            generators: [
                Generator { mean: relax, cov: ring_covariance(&std_relax, 0.4) },
                Generator { mean: open, cov: ring_covariance(&std_active, 0.55) },
                Generator { mean: close, cov: ring_covariance(&std_active, 0.55) },
            ],
            conditions: [
                ConditionParams { offset: [0.0; CHANNELS], noise_scale: 1.0 },
                ConditionParams { offset: [30.0, 30.0, 10.0, 0.0, -10.0, 0.0, 10.0, 30.0], noise_scale: 1.1 },
                ConditionParams { offset: [40.0, 50.0, 70.0, 90.0, 100.0, 90.0, 70.0, 50.0], noise_scale: 1.25 },
                ConditionParams { offset: [80.0, 80.0, 70.0, 80.0, 80.0, 70.0, 60.0, 70.0], noise_scale: 1.35 },
            ],
            learning_rate: 0.3,
            drift: 0.05,
            trial_jitter: 30.0,
            perception_noise: 0.0,
            seed: 0,
        }
    }

    /// Same generators with learning switched off.
    pub fn default_static() -> Self {
        Self { name: "sim:static".into(), learning_rate: 0.0, drift: 0.0, ..Self::default_adaptive() }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn condition_params(&self, index: usize) -> &ConditionParams {
        &self.conditions[index]
    }
}

/// Lower-triangular factor of a positive semi-definite matrix; columns with
/// a vanishing pivot are zeroed.
fn psd_cholesky(a: &Matrix8) -> Matrix8 {
    let mut l = [[0.0; CHANNELS]; CHANNELS];
    for j in 0..CHANNELS {
        let mut diag = a[j][j];
        for v in &l[j][..j] {
            diag -= v * v;
        }
        let scale = a[j][j].abs().max(1e-300);
        if diag <= 1e-12 * scale {
            continue;
        }
        let pivot = diag.sqrt();
        l[j][j] = pivot;
        for i in j + 1..CHANNELS {
            let mut v = a[i][j];
            for (a, b) in l[i][..j].iter().zip(&l[j][..j]) {
                v -= a * b;
            }
            l[i][j] = v / pivot;
        }
    }
    l
}

#[derive(Debug, Clone, PartialEq)]
struct Trial {
    intent: Intent,
    condition: ArmCondition,
    /// Index into the profile's condition table actually in effect.
    effective: usize,
    jitter: Channels,
    last_t: u64,
}

#[derive(Debug, Clone)]
pub struct SimulatedSubject {
    profile: SubjectProfile,
    means: [Channels; 3],
    factors: [Matrix8; 3],
    rng: ChaCha8Rng,
    trial: Option<Trial>,
    frames_observed: u64,
}

impl SimulatedSubject {
    pub fn new(profile: SubjectProfile) -> Self {
        let means = std::array::from_fn(|k| profile.generators[k].mean);
        let factors = std::array::from_fn(|k| psd_cholesky(&profile.generators[k].cov));
        let rng = ChaCha8Rng::seed_from_u64(profile.seed);
        Self { profile, means, factors, rng, trial: None, frames_observed: 0 }
    }

    pub fn profile(&self) -> &SubjectProfile {
        &self.profile
    }

    /// Current generator means, in intent order.
    pub fn means(&self) -> &[Channels; 3] {
        &self.means
    }

    pub fn frames_observed(&self) -> u64 {
        self.frames_observed
    }

    /// Profile with the generator means replaced by their adapted values, so
    /// a later run can resume from here.
    pub fn snapshot(&self) -> SubjectProfile {
        let mut p = self.profile.clone();
        for (g, m) in p.generators.iter_mut().zip(self.means.iter()) {
            g.mean = *m;
        }
        p
    }

    fn start_trial_if_needed(&mut self, intent: Intent, condition: ArmCondition, t_ms: u64) {
        let continuing = matches!(
            &self.trial,
            Some(tr) if tr.intent == intent && tr.condition == condition && t_ms > tr.last_t
        );
        if continuing {
            return;
        }
        let effective = match condition.fixed_index() {
            Some(i) => i,
            None => self.rng.random_range(0..self.profile.conditions.len()),
        };
        let sigma = self.profile.trial_jitter;
        let jitter = std::array::from_fn(|_| sigma * self.normal());
        self.trial = Some(Trial { intent, condition, effective, jitter, last_t: t_ms });
    }

    fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    /// Draws one sample for `intent` under `condition`.
    pub fn emit(&mut self, intent: Intent, condition: ArmCondition, t_ms: u64) -> EmgSample {
        self.start_trial_if_needed(intent, condition, t_ms);
        let trial = self.trial.as_mut().expect("trial started");
        trial.last_t = t_ms;
        let effective = trial.effective;
        let jitter = trial.jitter;
        let params = &self.profile.conditions[effective];
        let noise_sd = params.noise_scale.sqrt();
        let offset = params.offset;
        let k = intent.index();
        let z: Channels = std::array::from_fn(|_| StandardNormal.sample(&mut self.rng));
        let l = &self.factors[k];
        let mut channels = [0.0; CHANNELS];
        for i in 0..CHANNELS {
            let mut noise = 0.0;
            for j in 0..=i {
                noise += l[i][j] * z[j];
            }
            let v = self.means[k][i] + offset[i] + jitter[i] + noise_sd * noise;
            channels[i] = v.clamp(0.0, RAW_MAX);
        }
        EmgSample::new(t_ms, channels, Some(intent))
    }

    /// One feedback-gated learning step toward a larger classifier margin for
    /// the attempted intent. No-op when the learning rate is zero.
    pub fn adapt(&mut self, frame: &FeedbackFrame, attempted: Intent, model: &LdaModel) {
        self.frames_observed += 1;
        let eta = self.profile.learning_rate;
        if eta == 0.0 || attempted == Intent::Relax {
            return;
        }
        let k = attempted.index();
        let bar = frame.bar(attempted).clamp(0.0, 1.0);
        let mut direction = margin_gradient(model, attempted, &self.means[k]);
        if self.profile.perception_noise > 0.0 {
            let sd = self.profile.perception_noise * norm(&direction).max(f64::MIN_POSITIVE);
            for d in direction.iter_mut() {
                *d += sd * self.normal();
            }
        }
        let length = norm(&direction);
        if length > 0.0 {
            let step = eta * (1.0 - bar) / length;
            for (m, d) in self.means[k].iter_mut().zip(direction.iter()) {
                *m = (*m + step * d).clamp(0.0, RAW_MAX);
            }
        }
        let rho = self.profile.drift;
        if rho > 0.0 {
            for k in 0..3 {
                for i in 0..CHANNELS {
                    let step = rho * self.normal();
                    self.means[k][i] = (self.means[k][i] + step).clamp(0.0, RAW_MAX);
                }
            }
        }
    }
}

fn norm(v: &Channels) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Strongest competing class at a preprocessed point.
fn runner_up(scores: &[f64; 3], attempted: Intent) -> usize {
    (0..3)
        .filter(|&j| j != attempted.index())
        .max_by(|&a, &b| scores[a].total_cmp(&scores[b]))
        .expect("two competitors")
}

/// `delta_attempted - max_{j != attempted} delta_j` at a raw-unit point.
pub fn margin(model: &LdaModel, attempted: Intent, raw: &Channels) -> f64 {
    let x = preprocess(raw).expect("finite generator mean");
    let scores = model.discriminants(&x);
    scores[attempted.index()] - scores[runner_up(&scores, attempted)]
}

/// Gradient of [`margin`] with respect to the raw point, through the clip
/// and affine map of preprocessing.
pub fn margin_gradient(model: &LdaModel, attempted: Intent, raw: &Channels) -> Channels {
    let x = preprocess(raw).expect("finite generator mean");
    let scores = model.discriminants(&x);
    let j = runner_up(&scores, attempted);
    let a = attempted.index();
    std::array::from_fn(|i| (model.weights[(a, i)] - model.weights[(j, i)]) * preprocess_slope(raw[i]))
}

impl SampleSource for SimulatedSubject {
    fn next_sample(&mut self, prompt: &Prompt) -> Result<EmgSample, SourceError> {
        Ok(self.emit(prompt.cue.unwrap_or(Intent::Relax), prompt.condition, prompt.t_ms))
    }

    fn observe(&mut self, frame: &FeedbackFrame, prompt: &Prompt, model: &LdaModel) {
        if let Some(attempted) = prompt.cue {
            self.adapt(frame, attempted, model);
        }
    }
}
