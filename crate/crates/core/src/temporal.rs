//! Progressive temporal weighting of per-frame correction fields.
//!
//! Within a sliding window the per-frame fields are blended with weights
//! that form a decreasing arithmetic progression summing to one. The oldest
//! frame receives the largest weight so a newly arrived estimate can only
//! move the blended field a little.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::distortion::DistortionParams;
use crate::error::{Error, Result};
use crate::estimators::FrameEstimate;
use crate::raster::{check_dims, FlowField, ValidityMask};

/// Arithmetic-progression weights, oldest frame first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SchemeSpec", into = "SchemeSpec")]
pub struct WeightScheme {
    n: usize,
    a1: f64,
    weights: Vec<f64>,
}

/// Serialized form `{"n":5,"a1":0.3}`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SchemeSpec {
    n: usize,
    a1: f64,
}

impl TryFrom<SchemeSpec> for WeightScheme {
    type Error = Error;
    fn try_from(s: SchemeSpec) -> Result<Self> {
        make_weights(s.n, s.a1)
    }
}

impl From<WeightScheme> for SchemeSpec {
    fn from(w: WeightScheme) -> Self {
        SchemeSpec { n: w.n, a1: w.a1 }
    }
}

impl Default for WeightScheme {
    fn default() -> Self {
        make_weights(5, 0.3).expect("default scheme is admissible")
    }
}

impl WeightScheme {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn a1(&self) -> f64 {
        self.a1
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Weights for a window of `m <= n` frames: the first `m` weights of the
    /// progression, renormalized to sum to one.
    pub fn window_weights(&self, m: usize) -> Result<Vec<f64>> {
        if m == 0 || m > self.n {
            return Err(Error::LengthMismatch {
                expected: self.n,
                found: m,
            });
        }
        if m == self.n {
            return Ok(self.weights.clone());
        }
        let head = &self.weights[..m];
        let total: f64 = head.iter().sum();
        Ok(head.iter().map(|w| w / total).collect())
    }

    /// Sum of squared weights; the variance attenuation for i.i.d. inputs.
    pub fn noise_gain(&self) -> f64 {
        self.weights.iter().map(|w| w * w).sum()
    }
}

/// Builds `a_i = a1 - (i - 1) d` with `d = 2 (n a1 - 1) / (n (n - 1))`.
///
/// `a1` must lie in `(1/n, 2/n)`: at `1/n` the weights are uniform, at `2/n`
/// the last one reaches zero.
pub fn make_weights(n: usize, a1: f64) -> Result<WeightScheme> {
    if n < 2 {
        return Err(Error::InvalidInput(format!("window length must be at least 2, got {n}")));
    }
    let nf = n as f64;
    let (lo, hi) = (1.0 / nf, 2.0 / nf);
    if !(a1 > lo && a1 < hi) {
        return Err(Error::InvalidWeightRange { n, a1, lo, hi });
    }
    // Numerator and denominator kept separate so decimal inputs such as
    // a1 = 0.3 yield correctly rounded weights.
    let denom = nf * (nf - 1.0);
    let head = a1 * denom;
    let step = 2.0 * (nf * a1 - 1.0);
    let weights = (0..n).map(|i| (head - i as f64 * step) / denom).collect();
    Ok(WeightScheme { n, a1, weights })
}

/// Weighted per-pixel sum; `flows[0]` is the oldest field.
pub fn tws_combine(flows: &[FlowField], scheme: &WeightScheme) -> Result<FlowField> {
    if flows.len() != scheme.n {
        return Err(Error::LengthMismatch {
            expected: scheme.n,
            found: flows.len(),
        });
    }
    weighted_sum(flows, &scheme.weights)
}

/// Blends a possibly incomplete window of at most `n` fields, oldest
/// first, with the renormalized leading weights.
pub fn tws_combine_partial(flows: &[FlowField], scheme: &WeightScheme) -> Result<FlowField> {
    let weights = scheme.window_weights(flows.len())?;
    weighted_sum(flows, &weights)
}

fn weighted_sum<'a, I>(flows: I, weights: &[f64]) -> Result<FlowField>
where
    I: IntoIterator<Item = &'a FlowField>,
    I::IntoIter: Clone,
{
    let iter = flows.into_iter();
    let first = iter.clone().next().ok_or(Error::LengthMismatch {
        expected: weights.len(),
        found: 0,
    })?;
    let (w, h) = first.dims();
    let n = w * h;
    let mut u = vec![0.0; n];
    let mut v = vec![0.0; n];
    let mut valid = ValidityMask::full(w, h);
    for (f, &a) in iter.zip(weights) {
        check_dims((w, h), f.dims())?;
        for i in 0..n {
            u[i] += a * f.u()[i];
            v[i] += a * f.v()[i];
        }
        valid = valid.and(f.valid())?;
    }
    FlowField::new(w, h, u, v, valid)
}

/// Ordered per-frame fields with their frame indices.
#[derive(Debug, Clone, Default)]
pub struct FlowStream {
    frames: Vec<(usize, FlowField)>,
}

impl FlowStream {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a field; indices must increase and dimensions must agree.
    pub fn push(&mut self, index: usize, field: FlowField) -> Result<()> {
        if let Some((last, f)) = self.frames.last() {
            if index <= *last {
                return Err(Error::InvalidInput(format!(
                    "frame index {index} does not follow {last}"
                )));
            }
            check_dims(f.dims(), field.dims())?;
        }
        self.frames.push((index, field));
        Ok(())
    }

    pub fn from_fields(fields: impl IntoIterator<Item = FlowField>) -> Result<Self> {
        let mut s = Self::new();
        for (i, f) in fields.into_iter().enumerate() {
            s.push(i, f)?;
        }
        Ok(s)
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &FlowField)> {
        self.frames.iter().map(|(i, f)| (*i, f))
    }

    pub fn fields(&self) -> impl Iterator<Item = &FlowField> {
        self.frames.iter().map(|(_, f)| f)
    }

    pub fn into_fields(self) -> Vec<FlowField> {
        self.frames.into_iter().map(|(_, f)| f).collect()
    }
}

/// Ring buffer over the last `n` fields; each push emits the blended field
/// for the newest frame.
#[derive(Debug, Clone)]
pub struct TemporalBlender {
    scheme: WeightScheme,
    window: VecDeque<FlowField>,
}

impl TemporalBlender {
    pub fn new(scheme: WeightScheme) -> Self {
        let cap = scheme.n;
        Self {
            scheme,
            window: VecDeque::with_capacity(cap),
        }
    }

    pub fn push(&mut self, field: FlowField) -> Result<FlowField> {
        if self.window.len() == self.scheme.n {
            self.window.pop_front();
        }
        self.window.push_back(field);
        let weights = self.scheme.window_weights(self.window.len())?;
        weighted_sum(self.window.iter(), &weights)
    }
}

/// Emits the blended field for every frame of `stream`. The first `n - 1`
/// frames use truncated windows.
pub fn stabilize_stream(stream: &FlowStream, scheme: &WeightScheme) -> Result<FlowStream> {
    let mut blender = TemporalBlender::new(scheme.clone());
    let mut out = FlowStream::new();
    for (i, f) in stream.iter() {
        out.push(i, blender.push(f.clone())?)?;
    }
    Ok(out)
}

/// Weighted mean of coefficients and centers over a window of estimates,
/// oldest first. Shorter windows use the truncated weights.
pub fn combine_params(estimates: &[FrameEstimate], scheme: &WeightScheme) -> Result<DistortionParams> {
    let weights = scheme.window_weights(estimates.len())?;
    let mut k = [0.0; 3];
    let mut center = [0.0; 2];
    let mut norm_radius = 0.0;
    for (e, a) in estimates.iter().zip(&weights) {
        for (acc, v) in k.iter_mut().zip(e.params.k) {
            *acc += a * v;
        }
        for (acc, v) in center.iter_mut().zip(e.params.center) {
            *acc += a * v;
        }
        norm_radius += a * e.params.norm_radius;
    }
    let combined = DistortionParams::new(k, center, norm_radius)?;
    if !combined.passes_guard() {
        return Err(Error::MonotonicityViolation);
    }
    Ok(combined)
}
