//! Per-sample preprocessing, trailing median smoothing of class
//! probabilities, and the intent decision rule.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{Channels, Intent, CHANNELS};

/// Upper clip bound in raw device units.
pub const CLIP_MAX: f64 = 1000.0;

pub const DEFAULT_WINDOW: usize = 20;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SignalError {
    #[error("non-finite value {value} on channel {channel}")]
    NonFiniteSample { channel: usize, value: f64 },
    #[error("invalid probability vector {0:?}")]
    InvalidProbabilities([f64; 3]),
}

/// Class probabilities indexed by [`Intent::index`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbVector(pub [f64; 3]);

impl ProbVector {
    pub fn new(p_relax: f64, p_open: f64, p_close: f64) -> Result<Self, SignalError> {
        let p = [p_relax, p_open, p_close];
        let in_range = p.iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v));
        if !in_range || (p.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(SignalError::InvalidProbabilities(p));
        }
        Ok(Self(p))
    }

    pub fn uniform() -> Self {
        Self([1.0 / 3.0; 3])
    }

    /// Divides by the sum; an all-zero vector becomes uniform.
    pub fn normalized(values: [f64; 3]) -> Self {
        let sum: f64 = values.iter().sum();
        if sum > 0.0 && sum.is_finite() {
            Self(values.map(|v| v / sum))
        } else {
            Self::uniform()
        }
    }

    pub fn get(&self, intent: Intent) -> f64 {
        self.0[intent.index()]
    }

    pub fn relax(&self) -> f64 {
        self.0[0]
    }

    pub fn open(&self) -> f64 {
        self.0[1]
    }

    pub fn close(&self) -> f64 {
        self.0[2]
    }
}

#[inline]
pub fn preprocess_value(x: f64) -> f64 {
    x.clamp(0.0, CLIP_MAX) / 500.0 - 1.0
}

/// Clips each channel to [0, 1000] and maps it affinely onto [-1, 1].
pub fn preprocess(raw: &Channels) -> Result<Channels, SignalError> {
    let mut out = [0.0; CHANNELS];
    for (channel, (&x, o)) in raw.iter().zip(out.iter_mut()).enumerate() {
        if !x.is_finite() {
            return Err(SignalError::NonFiniteSample { channel, value: x });
        }
        *o = preprocess_value(x);
    }
    Ok(out)
}

/// Derivative of [`preprocess_value`] with respect to the raw value.
/// Zero where the clip is active.
#[inline]
pub fn preprocess_slope(x: f64) -> f64 {
    if x > 0.0 && x < CLIP_MAX {
        1.0 / 500.0
    } else {
        0.0
    }
}

/// Causal per-class median over the last `window` probability vectors.
///
/// Each class keeps its window contents in a sorted buffer, so a step costs
/// O(window) rather than a full re-sort.
#[derive(Debug, Clone)]
pub struct MedianSmoother {
    window: usize,
    renormalize: bool,
    history: VecDeque<[f64; 3]>,
    sorted: [Vec<f64>; 3],
}

impl MedianSmoother {
    pub fn new(window: usize) -> Self {
        Self::with_renormalize(window, true)
    }

    /// With `renormalize` off the raw per-class medians are returned as-is and
    /// need not sum to one.
    pub fn with_renormalize(window: usize, renormalize: bool) -> Self {
        assert!(window > 0, "median window must be positive");
        Self {
            window,
            renormalize,
            history: VecDeque::with_capacity(window),
            sorted: std::array::from_fn(|_| Vec::with_capacity(window)),
        }
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn len(&self) -> usize {
        self.history.len()
    }

    pub fn is_empty(&self) -> bool {
        self.history.is_empty()
    }

    pub fn reset(&mut self) {
        self.history.clear();
        for s in &mut self.sorted {
            s.clear();
        }
    }

    /// Pushes `p` and returns the smoothed vector.
    pub fn smooth(&mut self, p: ProbVector) -> ProbVector {
        let medians = self.push_medians(p);
        if self.renormalize {
            ProbVector::normalized(medians)
        } else {
            ProbVector(medians)
        }
    }

    /// Pushes `p` and returns the per-class medians before renormalization.
    pub fn push_medians(&mut self, p: ProbVector) -> [f64; 3] {
        if self.history.len() == self.window {
            let old = self.history.pop_front().expect("window is non-empty");
            for (k, v) in old.iter().enumerate() {
                let col = &mut self.sorted[k];
                let at = col.partition_point(|x| x.total_cmp(v).is_lt());
                col.remove(at);
            }
        }
        for (k, v) in p.0.iter().enumerate() {
            let col = &mut self.sorted[k];
            let at = col.partition_point(|x| x.total_cmp(v).is_lt());
            col.insert(at, *v);
        }
        self.history.push_back(p.0);
        std::array::from_fn(|k| median_of_sorted(&self.sorted[k]))
    }
}

impl Default for MedianSmoother {
    fn default() -> Self {
        Self::new(DEFAULT_WINDOW)
    }
}

/// Median of an ascending slice; even lengths average the two middle values.
pub fn median_of_sorted(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    debug_assert!(n > 0);
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    }
}

/// Argmax with ties resolved to `current` when it is among the maximizers,
/// otherwise to Relax.
pub fn decide(p: &ProbVector, current: Intent) -> Intent {
    let max = p.0.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let maximizers: Vec<Intent> = Intent::ALL.into_iter().filter(|i| p.get(*i) == max).collect();
    match maximizers.as_slice() {
        [only] => *only,
        tied if tied.contains(&current) => current,
        _ => Intent::Relax,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Independent oracle: re-sort the trailing window from scratch.
    fn naive_medians(stream: &[[f64; 3]], end: usize, window: usize) -> [f64; 3] {
        let start = end.saturating_sub(window);
        std::array::from_fn(|k| {
            let mut col: Vec<f64> = stream[start..end].iter().map(|p| p[k]).collect();
            col.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let n = col.len();
            if n % 2 == 1 {
                col[n / 2]
            } else {
                (col[n / 2 - 1] + col[n / 2]) / 2.0
            }
        })
    }

    #[test]
    fn preprocess_bounds() {
        assert_eq!(preprocess(&[0.0; 8]).unwrap(), [-1.0; 8]);
        let mut raw = [0.0; 8];
        raw[2] = 1000.0;
        raw[3] = 500.0;
        raw[4] = 1500.0;
        raw[5] = -20.0;
        let out = preprocess(&raw).unwrap();
        assert_eq!(out[2], 1.0);
        assert_eq!(out[3], 0.0);
        assert_eq!(out[4], 1.0);
        assert_eq!(out[5], -1.0);
    }

    #[test]
    fn preprocess_rejects_non_finite() {
        let mut raw = [10.0; 8];
        raw[6] = f64::NAN;
        assert!(matches!(preprocess(&raw), Err(SignalError::NonFiniteSample { channel: 6, .. })));
        raw[6] = f64::INFINITY;
        assert!(preprocess(&raw).is_err());
    }

    #[test]
    fn constant_stream_passes_through() {
        let mut s = MedianSmoother::default();
        let p = ProbVector::uniform();
        for _ in 0..50 {
            let out = s.smooth(p);
            for k in 0..3 {
                assert!((out.0[k] - 1.0 / 3.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn single_outlier_is_suppressed() {
        let mut s = MedianSmoother::new(20);
        let base = ProbVector::new(1.0, 0.0, 0.0).unwrap();
        let spike = ProbVector::new(0.0, 1.0, 0.0).unwrap();
        let mut stream = vec![base; 19];
        stream.insert(9, spike);
        let mut last = None;
        for p in stream {
            last = Some(s.smooth(p));
        }
        assert_eq!(last.unwrap().0, [1.0, 0.0, 0.0]);
    }

    #[test]
    fn first_output_equals_input() {
        let mut s = MedianSmoother::default();
        let p = ProbVector::new(0.2, 0.5, 0.3).unwrap();
        assert_eq!(s.smooth(p), p);
    }

    #[test]
    fn buffer_never_exceeds_window() {
        let mut s = MedianSmoother::new(4);
        for _ in 0..10 {
            s.smooth(ProbVector::uniform());
            assert!(s.len() <= 4);
        }
        s.reset();
        assert!(s.is_empty());
    }

    #[test]
    fn decide_examples() {
        let p = |a, b, c| ProbVector::new(a, b, c).unwrap();
        assert_eq!(decide(&p(0.1, 0.8, 0.1), Intent::Relax), Intent::Open);
        assert_eq!(decide(&p(0.4, 0.4, 0.2), Intent::Open), Intent::Open);
        assert_eq!(decide(&p(0.4, 0.4, 0.2), Intent::Relax), Intent::Relax);
        assert_eq!(decide(&p(0.2, 0.4, 0.4), Intent::Relax), Intent::Relax);
        assert_eq!(decide(&p(0.2, 0.4, 0.4), Intent::Close), Intent::Close);
        assert_eq!(decide(&p(0.5, 0.25, 0.25), Intent::Close), Intent::Relax);
        assert_eq!(decide(&ProbVector::uniform(), Intent::Open), Intent::Open);
    }

    #[test]
    fn zero_medians_fall_back_to_uniform() {
        assert_eq!(ProbVector::normalized([0.0; 3]), ProbVector::uniform());
    }

    fn prob() -> impl Strategy<Value = ProbVector> {
        (0.0f64..1.0, 0.0f64..1.0, 0.0f64..1.0)
            .prop_filter("non-zero", |(a, b, c)| a + b + c > 1e-6)
            .prop_map(|(a, b, c)| ProbVector::normalized([a, b, c]))
    }

    proptest! {
        #[test]
        fn smoother_matches_naive_oracle(
            stream in proptest::collection::vec(prob(), 1..120),
            window in 1usize..25,
        ) {
            let raw: Vec<[f64; 3]> = stream.iter().map(|p| p.0).collect();
            let mut s = MedianSmoother::new(window);
            for (i, p) in stream.iter().enumerate() {
                let got = s.push_medians(*p);
                prop_assert_eq!(got, naive_medians(&raw, i + 1, window));
            }
        }

        #[test]
        fn median_bounded_by_window_extremes(stream in proptest::collection::vec(prob(), 1..60)) {
            let mut s = MedianSmoother::new(DEFAULT_WINDOW);
            for (i, p) in stream.iter().enumerate() {
                let m = s.push_medians(*p);
                let start = (i + 1).saturating_sub(DEFAULT_WINDOW);
                for (k, mk) in m.iter().enumerate() {
                    let lo = stream[start..=i].iter().map(|q| q.0[k]).fold(f64::INFINITY, f64::min);
                    let hi = stream[start..=i].iter().map(|q| q.0[k]).fold(f64::NEG_INFINITY, f64::max);
                    prop_assert!(lo <= *mk && *mk <= hi);
                }
            }
        }

        #[test]
        fn smoothed_output_is_distribution(stream in proptest::collection::vec(prob(), 1..60)) {
            let mut s = MedianSmoother::default();
            for p in stream {
                let out = s.smooth(p);
                prop_assert!((out.0.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                prop_assert!(out.0.iter().all(|v| (0.0..=1.0).contains(v)));
            }
        }

        #[test]
        fn preprocess_monotone_and_affine(a in -500.0f64..1500.0, b in -500.0f64..1500.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(preprocess_value(lo) <= preprocess_value(hi));
            if (0.0..=1000.0).contains(&lo) && (0.0..=1000.0).contains(&hi) {
                let slope = (preprocess_value(hi) - preprocess_value(lo)) / (hi - lo);
                if hi - lo > 1e-3 {
                    prop_assert!((slope - 1.0 / 500.0).abs() < 1e-9);
                }
            }
        }

        #[test]
        fn decide_shift_invariant(p in prob(), c in 0.0f64..5.0, cur in 0u8..3) {
            let current = Intent::from_code(cur).unwrap();
            let shifted = ProbVector::normalized(p.0.map(|v| v + c));
            // Shifting can only merge exact ties through rounding; compare where
            // the argmax is unambiguous after the shift too.
            let base = decide(&p, current);
            let after = decide(&shifted, current);
            let distinct = |q: &ProbVector| q.0[0] != q.0[1] && q.0[1] != q.0[2] && q.0[0] != q.0[2];
            if distinct(&p) && distinct(&shifted) {
                prop_assert_eq!(base, after);
            }
        }
    }
}
