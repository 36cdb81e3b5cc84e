//! Offline evaluation: confusion and accuracy, silhouette separability,
//! per-intent sampling for embeddings, exact t-SNE and iteration tables.

mod tsne;

pub use tsne::{conditional_affinities, kl_divergence, tsne, Affinities, EmbeddingResult, TsneParams};

use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::session::IterationReport;
use crate::signal::preprocess;
use crate::types::{Channels, Intent, Recording};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalyticsError {
    #[error("confusion matrix is empty")]
    EmptyEvaluation,
    #[error("too few points: {0}")]
    TooFewPoints(String),
    #[error("too many points for exact embedding: {got} > {max}")]
    TooManyPoints { got: usize, max: usize },
    #[error("{points} points but {labels} labels")]
    LabelMismatch { points: usize, labels: usize },
}

/// Counts indexed `[true][predicted]`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion(pub [[u64; 3]; 3]);

impl Confusion {
    pub fn record(&mut self, truth: Intent, predicted: Intent) {
        self.0[truth.index()][predicted.index()] += 1;
    }

    pub fn total(&self) -> u64 {
        self.0.iter().flatten().sum()
    }

    pub fn correct(&self) -> u64 {
        (0..3).map(|k| self.0[k][k]).sum()
    }

    pub fn row_sums(&self) -> [u64; 3] {
        self.0.map(|row| row.iter().sum())
    }

    pub fn merge(&mut self, other: &Confusion) {
        for (a, b) in self.0.iter_mut().flatten().zip(other.0.iter().flatten()) {
            *a += b;
        }
    }
}

/// Trace over total.
pub fn accuracy(confusion: &Confusion) -> Result<f64, AnalyticsError> {
    match confusion.total() {
        0 => Err(AnalyticsError::EmptyEvaluation),
        total => Ok(confusion.correct() as f64 / total as f64),
    }
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Mean silhouette coefficient under the Euclidean metric.
///
/// Every class present needs at least two points and at least two classes
/// must be present.
pub fn silhouette<P: AsRef<[f64]> + Sync>(points: &[P], labels: &[Intent]) -> Result<f64, AnalyticsError> {
    if points.len() != labels.len() {
        return Err(AnalyticsError::LabelMismatch { points: points.len(), labels: labels.len() });
    }
    let mut sizes = [0usize; 3];
    for l in labels {
        sizes[l.index()] += 1;
    }
    let present: Vec<usize> = (0..3).filter(|&k| sizes[k] > 0).collect();
    if present.len() < 2 {
        return Err(AnalyticsError::TooFewPoints("need at least two classes".into()));
    }
    if let Some(&k) = present.iter().find(|&&k| sizes[k] < 2) {
        return Err(AnalyticsError::TooFewPoints(format!("class {} has one point", Intent::ALL[k])));
    }
    let scores: Vec<f64> = (0..points.len())
        .into_par_iter()
        .map(|i| {
            let xi = points[i].as_ref();
            let mut sums = [0.0; 3];
            for (j, p) in points.iter().enumerate() {
                if j != i {
                    sums[labels[j].index()] += squared_distance(xi, p.as_ref()).sqrt();
                }
            }
            let own = labels[i].index();
            let a = sums[own] / (sizes[own] - 1) as f64;
            let b =
                present.iter().filter(|&&k| k != own).map(|&k| sums[k] / sizes[k] as f64).fold(f64::INFINITY, f64::min);
            let denom = a.max(b);
            if denom > 0.0 {
                (b - a) / denom
            } else {
                0.0
            }
        })
        .collect();
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleSpace {
    #[default]
    Preprocessed,
    Raw,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shortfall {
    pub intent: Intent,
    pub requested: usize,
    pub available: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSample {
    pub x: Vec<Channels>,
    pub labels: Vec<Intent>,
    /// Intents that had fewer labeled samples than requested.
    pub shortfall: Vec<Shortfall>,
}

/// Uniform sampling without replacement of up to `per_intent` labeled
/// samples per intent, grouped relax, open, close.
pub fn sample_for_embedding(
    recordings: &[&Recording],
    per_intent: usize,
    seed: u64,
    space: SampleSpace,
) -> EmbeddingSample {
    let mut pools: [Vec<Channels>; 3] = Default::default();
    for rec in recordings {
        for (s, intent) in rec.labeled() {
            let v = match space {
                SampleSpace::Preprocessed => match preprocess(&s.channels) {
                    Ok(v) => v,
                    Err(_) => continue,
                },
                SampleSpace::Raw => s.channels,
            };
            pools[intent.index()].push(v);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = EmbeddingSample { x: Vec::new(), labels: Vec::new(), shortfall: Vec::new() };
    for intent in Intent::ALL {
        let pool = &pools[intent.index()];
        let take = per_intent.min(pool.len());
        if take < per_intent {
            out.shortfall.push(Shortfall { intent, requested: per_intent, available: pool.len() });
        }
        let mut picked = rand::seq::index::sample(&mut rng, pool.len(), take).into_vec();
        picked.sort_unstable();
        for i in picked {
            out.x.push(pool[i]);
            out.labels.push(intent);
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Notation {
    Fixed,
    Scientific,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub metric: String,
    pub first: f64,
    pub second: f64,
    pub delta: f64,
    pub notation: Notation,
}

impl ComparisonRow {
    fn new(metric: &str, first: f64, second: f64, notation: Notation) -> Self {
        Self { metric: metric.into(), first, second, delta: second - first, notation }
    }

    pub fn format_value(&self, v: f64) -> String {
        match self.notation {
            Notation::Fixed => format!("{v:.2}"),
            Notation::Scientific => format!("{v:.1e}"),
        }
    }

    pub fn format_delta(&self) -> String {
        match self.notation {
            Notation::Fixed => format!("{:+.2}", self.delta),
            Notation::Scientific => format!("{:+.1e}", self.delta),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub first_iteration: u32,
    pub second_iteration: u32,
    pub rows: Vec<ComparisonRow>,
}

impl ComparisonTable {
    pub fn row(&self, metric: &str) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.metric == metric)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<22} {:>12} {:>12} {:>12}",
            "metric",
            format!("iteration {}", self.first_iteration),
            format!("iteration {}", self.second_iteration),
            "delta"
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<22} {:>12} {:>12} {:>12}",
                r.metric,
                r.format_value(r.first),
                r.format_value(r.second),
                r.format_delta()
            );
        }
        out
    }

    /// Plot-ready rows: `metric,iteration_a,iteration_b,delta`.
    pub fn to_csv(&self) -> String {
        let mut out = format!("metric,iteration_{},iteration_{},delta\n", self.first_iteration, self.second_iteration);
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{},{}", r.metric, r.first, r.second, r.delta);
        }
        out
    }
}

/// Side-by-side accuracy, open-intent weight variance and silhouette.
pub fn iteration_comparison(first: &IterationReport, second: &IterationReport) -> ComparisonTable {
    ComparisonTable {
        first_iteration: first.iteration,
        second_iteration: second.iteration,
        rows: vec![
            ComparisonRow::new("accuracy", first.test_accuracy, second.test_accuracy, Notation::Fixed),
            ComparisonRow::new("raw_accuracy", first.raw_accuracy, second.raw_accuracy, Notation::Fixed),
            ComparisonRow::new(
                "weight_variance_open",
                first.weight_variance_open,
                second.weight_variance_open,
                Notation::Scientific,
            ),
            ComparisonRow::new("silhouette", first.silhouette, second.silhouette, Notation::Fixed),
        ],
    }
}
