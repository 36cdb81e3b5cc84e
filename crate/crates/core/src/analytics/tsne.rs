//! Exact O(N^2) t-SNE.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::AnalyticsError;
use crate::types::Intent;

pub const MAX_POINTS: usize = 3000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TsneParams {
    pub perplexity: f64,
    pub out_dims: usize,
    pub iterations: usize,
    pub learning_rate: f64,
    pub early_exaggeration: f64,
    pub exaggeration_iters: usize,
    pub initial_momentum: f64,
    pub final_momentum: f64,
    pub momentum_switch_iter: usize,
    /// Standard deviation of the Gaussian initial layout.
    pub init_sigma: f64,
    /// Allowed gap between each row's entropy and ln(perplexity).
    pub entropy_tolerance: f64,
    pub seed: u64,
}

impl Default for TsneParams {
    fn default() -> Self {
        Self {
            perplexity: 30.0,
            out_dims: 3,
            iterations: 1000,
            learning_rate: 200.0,
            early_exaggeration: 12.0,
            exaggeration_iters: 250,
            initial_momentum: 0.5,
            final_momentum: 0.8,
            momentum_switch_iter: 250,
            init_sigma: 1e-4,
            entropy_tolerance: 1e-6,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingResult {
    /// N rows of `out_dims` coordinates.
    pub points: Vec<Vec<f64>>,
    pub labels: Vec<Intent>,
    pub kl_initial: f64,
    pub kl_final: f64,
    pub perplexity: f64,
    pub iterations: usize,
    pub seed: u64,
    /// Largest |H(P_i) - ln(perplexity)| over rows.
    pub max_entropy_error: f64,
}

/// Row-conditional input affinities.
#[derive(Debug, Clone, PartialEq)]
pub struct Affinities {
    pub n: usize,
    /// Row-major N x N, row i is P(j | i), zero diagonal.
    pub conditional: Vec<f64>,
    /// Precision (1 / 2 sigma^2) found for each row.
    pub betas: Vec<f64>,
    /// Shannon entropy (nats) of each row.
    pub entropies: Vec<f64>,
}

fn row_distribution(dist: &[f64], i: usize, beta: f64, out: &mut [f64]) -> f64 {
    // Shift by the smallest off-diagonal distance; P and H are unchanged.
    let min = dist.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, d)| *d).fold(f64::INFINITY, f64::min);
    let mut sum = 0.0;
    let mut weighted = 0.0;
    for (j, (o, d)) in out.iter_mut().zip(dist).enumerate() {
        if j == i {
            *o = 0.0;
            continue;
        }
        let shifted = d - min;
        let p = (-beta * shifted).exp();
        *o = p;
        sum += p;
        weighted += shifted * p;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
    sum.ln() + beta * weighted / sum
}

/// Bisection on each row's precision until the row entropy matches
/// ln(perplexity) within `tolerance`.
pub fn conditional_affinities(dist2: &[f64], n: usize, perplexity: f64, tolerance: f64) -> Affinities {
    let target = perplexity.ln();
    let rows: Vec<(Vec<f64>, f64, f64)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let dist = &dist2[i * n..(i + 1) * n];
            let mut row = vec![0.0; n];
            let mut beta = 1.0;
            let (mut lo, mut hi) = (0.0f64, f64::INFINITY);
            let mut h = row_distribution(dist, i, beta, &mut row);
            for _ in 0..500 {
                if (h - target).abs() < tolerance {
                    break;
                }
                if h > target {
                    lo = beta;
                    beta = if hi.is_finite() { (beta + hi) / 2.0 } else { beta * 2.0 };
                } else {
                    hi = beta;
                    beta = (beta + lo) / 2.0;
                }
                h = row_distribution(dist, i, beta, &mut row);
            }
            (row, beta, h)
        })
        .collect();
    let mut conditional = Vec::with_capacity(n * n);
    let mut betas = Vec::with_capacity(n);
    let mut entropies = Vec::with_capacity(n);
    for (row, beta, h) in rows {
        conditional.extend(row);
        betas.push(beta);
        entropies.push(h);
    }
    Affinities { n, conditional, betas, entropies }
}

fn pairwise_sq_distances<P: AsRef<[f64]> + Sync>(points: &[P]) -> Vec<f64> {
    let n = points.len();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let a = points[i].as_ref();
            points.iter().map(|b| a.iter().zip(b.as_ref()).map(|(x, y)| (x - y) * (x - y)).sum()).collect()
        })
        .collect();
    rows.concat()
}

/// Student-t kernel `1 / (1 + |y_i - y_j|^2)` with zero diagonal, plus its
/// total.
fn student_kernel(y: &[f64], n: usize, dims: usize) -> (Vec<f64>, f64) {
    let rows: Vec<(Vec<f64>, f64)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let yi = &y[i * dims..(i + 1) * dims];
            let mut row = vec![0.0; n];
            let mut sum = 0.0;
            for (j, r) in row.iter_mut().enumerate() {
                if j == i {
                    continue;
                }
                let yj = &y[j * dims..(j + 1) * dims];
                let d: f64 = yi.iter().zip(yj).map(|(a, b)| (a - b) * (a - b)).sum();
                *r = 1.0 / (1.0 + d);
                sum += *r;
            }
            (row, sum)
        })
        .collect();
    let total = rows.iter().map(|(_, s)| s).sum();
    let kernel = rows.into_iter().flat_map(|(r, _)| r).collect();
    (kernel, total)
}

struct GradientScratch {
    attract: Vec<f64>,
    repel: Vec<f64>,
    row_total: Vec<f64>,
}

impl GradientScratch {
    fn new(n: usize, dims: usize) -> Self {
        Self { attract: vec![0.0; n * dims], repel: vec![0.0; n * dims], row_total: vec![0.0; n] }
    }
}

/// KL gradient in one pass over the pairs without materializing Q:
/// `4 * sum_j (e * p_ij - k_ij / Z) * k_ij * (y_i - y_j)`, where the kernel
/// total Z is summed row by row in index order.
fn gradient(
    p: &[f64],
    y: &[f64],
    n: usize,
    dims: usize,
    exaggeration: f64,
    scratch: &mut GradientScratch,
    grad: &mut [f64],
) {
    scratch
        .attract
        .par_chunks_mut(dims)
        .zip(scratch.repel.par_chunks_mut(dims))
        .zip(scratch.row_total.par_iter_mut())
        .enumerate()
        .for_each(|(i, ((attract, repel), row_total))| {
            let p_row = &p[i * n..(i + 1) * n];
            *row_total = match dims {
                2 => row_terms::<2>(i, y, p_row, attract, repel),
                3 => row_terms::<3>(i, y, p_row, attract, repel),
                _ => row_terms_dyn(i, y, dims, p_row, attract, repel),
            };
        });
    let z: f64 = scratch.row_total.iter().sum();
    for ((g, a), r) in grad.iter_mut().zip(&scratch.attract).zip(&scratch.repel) {
        *g = 4.0 * (exaggeration * a - r / z);
    }
}

/// Attractive and repulsive sums for row `i`; returns the row's kernel sum.
fn row_terms<const D: usize>(i: usize, y: &[f64], p_row: &[f64], attract: &mut [f64], repel: &mut [f64]) -> f64 {
    let yi: [f64; D] = y[i * D..(i + 1) * D].try_into().expect("row width");
    let mut a = [0.0; D];
    let mut r = [0.0; D];
    let mut total = 0.0;
    for (j, (yj, &pij)) in y.chunks_exact(D).zip(p_row).enumerate() {
        let mut diff = [0.0; D];
        let mut d2 = 0.0;
        for d in 0..D {
            diff[d] = yi[d] - yj[d];
            d2 += diff[d] * diff[d];
        }
        let k = if j == i { 0.0 } else { 1.0 / (1.0 + d2) };
        total += k;
        let pk = pij * k;
        let kk = k * k;
        for d in 0..D {
            a[d] += pk * diff[d];
            r[d] += kk * diff[d];
        }
    }
    attract.copy_from_slice(&a);
    repel.copy_from_slice(&r);
    total
}

fn row_terms_dyn(i: usize, y: &[f64], dims: usize, p_row: &[f64], attract: &mut [f64], repel: &mut [f64]) -> f64 {
    attract.fill(0.0);
    repel.fill(0.0);
    let yi = &y[i * dims..(i + 1) * dims];
    let mut total = 0.0;
    for (j, yj) in y.chunks_exact(dims).enumerate() {
        if j == i {
            continue;
        }
        let d2: f64 = yi.iter().zip(yj).map(|(a, b)| (a - b) * (a - b)).sum();
        let k = 1.0 / (1.0 + d2);
        total += k;
        for d in 0..dims {
            let diff = yi[d] - yj[d];
            attract[d] += p_row[j] * k * diff;
            repel[d] += k * k * diff;
        }
    }
    total
}

/// KL(P || Q) for the joint affinities `p` and layout `y`.
pub fn kl_divergence(p: &[f64], y: &[f64], n: usize, dims: usize) -> f64 {
    let (kernel, total) = student_kernel(y, n, dims);
    let mut kl = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let pij = p[i * n + j];
            let qij = (kernel[i * n + j] / total).max(f64::MIN_POSITIVE);
            kl += pij * (pij / qij).ln();
        }
    }
    kl
}

/// Embeds `points` with exact t-SNE. Requires `3 * perplexity <= N <= 3000`.
pub fn tsne<P: AsRef<[f64]> + Sync>(
    points: &[P],
    labels: &[Intent],
    params: &TsneParams,
) -> Result<EmbeddingResult, AnalyticsError> {
    let n = points.len();
    if labels.len() != n {
        return Err(AnalyticsError::LabelMismatch { points: n, labels: labels.len() });
    }
    if (n as f64) < 3.0 * params.perplexity || n < 2 {
        return Err(AnalyticsError::TooFewPoints(format!("{n} points for perplexity {}", params.perplexity)));
    }
    if n > MAX_POINTS {
        return Err(AnalyticsError::TooManyPoints { got: n, max: MAX_POINTS });
    }
    let dims = params.out_dims;

    let dist2 = pairwise_sq_distances(points);
    let aff = conditional_affinities(&dist2, n, params.perplexity, params.entropy_tolerance);
    let target = params.perplexity.ln();
    let max_entropy_error = aff.entropies.iter().map(|h| (h - target).abs()).fold(0.0, f64::max);

    let mut p = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let v = (aff.conditional[i * n + j] + aff.conditional[j * n + i]) / (2.0 * n as f64);
                p[i * n + j] = v.max(1e-12);
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let normal = Normal::new(0.0, params.init_sigma).expect("positive sigma");
    let mut y: Vec<f64> = (0..n * dims).map(|_| normal.sample(&mut rng)).collect();
    let kl_initial = kl_divergence(&p, &y, n, dims);

    let mut update = vec![0.0f64; n * dims];
    let mut gains = vec![1.0f64; n * dims];
    let mut grad = vec![0.0f64; n * dims];
    let mut scratch = GradientScratch::new(n, dims);
    for iter in 0..params.iterations {
        let exaggeration = if iter < params.exaggeration_iters { params.early_exaggeration } else { 1.0 };
        let momentum = if iter < params.momentum_switch_iter { params.initial_momentum } else { params.final_momentum };
        gradient(&p, &y, n, dims, exaggeration, &mut scratch, &mut grad);
        for ((yv, (u, gain)), &g) in y.iter_mut().zip(update.iter_mut().zip(gains.iter_mut())).zip(&grad) {
            *gain = if (g > 0.0) != (*u > 0.0) { *gain + 0.2 } else { *gain * 0.8 };
            *gain = f64::max(*gain, 0.01);
            *u = momentum * *u - params.learning_rate * *gain * g;
            *yv += *u;
        }
        for d in 0..dims {
            let mean = (0..n).map(|i| y[i * dims + d]).sum::<f64>() / n as f64;
            for i in 0..n {
                y[i * dims + d] -= mean;
            }
        }
    }
    let kl_final = kl_divergence(&p, &y, n, dims);

    Ok(EmbeddingResult {
        points: y.chunks_exact(dims).map(|c| c.to_vec()).collect(),
        labels: labels.to_vec(),
        kl_initial,
        kl_final,
        perplexity: params.perplexity,
        iterations: params.iterations,
        seed: params.seed,
        max_entropy_error,
    })
}
