//! Per-frame lens estimators.
//!
//! Each frame of a video gets its own independent estimate of the lens
//! parameters. Two classical estimators are provided, plus a ground-truth
//! passthrough; they share the [`FrameEstimator`] trait so pipelines select
//! them by name.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::distortion::{intra_frame_flow, DistortionParams};
use crate::error::{Error, Result};
use crate::optim::golden_section;
use crate::raster::{check_dims, resize_bilinear, warp_backward, Frame};
use crate::synthesis::MAX_SAMPLING_ATTEMPTS;

/// Lens parameters estimated for one frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameEstimate {
    pub params: DistortionParams,
    /// In `[0, 1]`.
    pub confidence: f64,
    pub frame_index: usize,
}

/// Ground truth with i.i.d. Gaussian coefficient jitter, standing in for
/// an imperfect per-frame predictor.
pub fn oracle_noisy_estimator(
    gt: &DistortionParams,
    sigma: [f64; 3],
    seed: u64,
    frame_index: usize,
) -> Result<FrameEstimate> {
    if sigma.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
        return Err(Error::InvalidInput(format!("noise scales must be non-negative, got {sigma:?}")));
    }
    if sigma == [0.0; 3] {
        return Ok(FrameEstimate {
            params: *gt,
            confidence: 1.0,
            frame_index,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(frame_index as u64);
    for _ in 0..MAX_SAMPLING_ATTEMPTS {
        let mut params = *gt;
        for (k, s) in params.k.iter_mut().zip(sigma) {
            let z: f64 = rng.sample(StandardNormal);
            *k += s * z;
        }
        if params.passes_guard() {
            return Ok(FrameEstimate {
                params,
                confidence: 1.0,
                frame_index,
            });
        }
    }
    Err(Error::SamplingExhausted {
        attempts: MAX_SAMPLING_ATTEMPTS,
    })
}

/// Search settings for [`photometric_search_estimator`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhotometricConfig {
    /// Initial half-widths of the (k1, k2) brackets.
    pub half_width: [f64; 2],
    /// Bracket shrink factor per coordinate-descent sweep.
    pub shrink: f64,
    pub evaluations_per_line: usize,
    pub max_evaluations: usize,
    /// Frames wider than this are searched at this width; coefficients are
    /// resolution independent because radii are normalized.
    pub work_width: usize,
}

impl Default for PhotometricConfig {
    fn default() -> Self {
        Self {
            half_width: [0.12, 0.05],
            shrink: 0.35,
            evaluations_per_line: 12,
            max_evaluations: 200,
            work_width: 128,
        }
    }
}

/// Masked mean absolute difference between `fisheye` corrected with
/// `params` and `reference`, in gray levels. `+inf` for params that fail
/// the guard or leave nothing valid.
pub fn photometric_error(fisheye: &Frame, reference: &Frame, params: &DistortionParams) -> f64 {
    if !params.passes_guard() {
        return f64::INFINITY;
    }
    let (w, h) = fisheye.dims();
    let Ok(field) = intra_frame_flow(params, w, h) else {
        return f64::INFINITY;
    };
    let Ok((corrected, mask)) = warp_backward(fisheye, &field) else {
        return f64::INFINITY;
    };
    let ch = fisheye.channels();
    let (mut sum, mut n) = (0.0, 0usize);
    for (i, &ok) in mask.as_slice().iter().enumerate() {
        if ok {
            for c in 0..ch {
                sum += (corrected.data()[i * ch + c] as f64 - reference.data()[i * ch + c] as f64).abs();
            }
            n += ch;
        }
    }
    if n == 0 {
        f64::INFINITY
    } else {
        sum / n as f64
    }
}

/// Fits `(k1, k2)` by coordinate descent with golden-section line searches,
/// holding `k3` and the center at `init`.
///
/// Returns [`Error::NoProgress`] when no candidate beats `init`; callers
/// then fall back to `init` with zero confidence.
pub fn photometric_search_estimator(
    fisheye: &Frame,
    reference: &Frame,
    init: &DistortionParams,
    frame_index: usize,
    cfg: &PhotometricConfig,
) -> Result<FrameEstimate> {
    check_dims(fisheye.dims(), reference.dims())?;
    if fisheye.channels() != reference.channels() {
        return Err(Error::InvalidInput("fisheye and reference channel counts differ".into()));
    }
    let objective = |p: &DistortionParams| photometric_error(fisheye, reference, p);
    let init_value = objective(init);
    let mut evaluations = 1;
    let mut best = (*init, init_value);
    let mut half = cfg.half_width;
    while evaluations < cfg.max_evaluations {
        for coord in 0..2 {
            let budget = cfg.evaluations_per_line.min(cfg.max_evaluations - evaluations);
            if budget == 0 {
                break;
            }
            let center = best.0.k[coord];
            let base = best.0;
            let (x, v, used) = golden_section(
                |x| {
                    let mut p = base;
                    p.k[coord] = x;
                    objective(&p)
                },
                center - half[coord],
                center + half[coord],
                budget,
            );
            evaluations += used;
            if v < best.1 {
                best.0.k[coord] = x;
                best.1 = v;
            }
        }
        half[0] *= cfg.shrink;
        half[1] *= cfg.shrink;
    }
    if !(best.1 < init_value) {
        return Err(Error::NoProgress);
    }
    Ok(FrameEstimate {
        params: best.0,
        confidence: (1.0 - best.1 / 255.0).clamp(0.0, 1.0),
        frame_index,
    })
}

/// Everything an estimator may look at for one frame.
#[derive(Debug, Clone, Copy)]
pub struct EstimateContext<'a> {
    /// Position of the video within its dataset.
    pub video_index: usize,
    pub frame_index: usize,
    pub fisheye: &'a Frame,
    /// Distortion-free counterpart, when the benchmark has one.
    pub reference: Option<&'a Frame>,
    /// Ground-truth lens, when known.
    pub ground_truth: Option<&'a DistortionParams>,
}

/// A per-frame lens predictor.
pub trait FrameEstimator: Send + Sync {
    fn name(&self) -> &'static str;
    fn estimate(&self, ctx: &EstimateContext<'_>) -> Result<FrameEstimate>;
}

/// Returns the known ground truth.
#[derive(Debug, Clone, Copy, Default)]
pub struct GroundTruthEstimator;

impl FrameEstimator for GroundTruthEstimator {
    fn name(&self) -> &'static str {
        "ground-truth"
    }

    fn estimate(&self, ctx: &EstimateContext<'_>) -> Result<FrameEstimate> {
        let gt = ctx
            .ground_truth
            .ok_or_else(|| Error::InvalidInput("ground-truth estimator needs known parameters".into()))?;
        Ok(FrameEstimate {
            params: *gt,
            confidence: 1.0,
            frame_index: ctx.frame_index,
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct NoisyOracleEstimator {
    pub sigma: [f64; 3],
    pub seed: u64,
}

impl FrameEstimator for NoisyOracleEstimator {
    fn name(&self) -> &'static str {
        "oracle-noisy"
    }

    fn estimate(&self, ctx: &EstimateContext<'_>) -> Result<FrameEstimate> {
        let gt = ctx
            .ground_truth
            .ok_or_else(|| Error::InvalidInput("oracle estimator needs known parameters".into()))?;
        // distinct noise per video; video 0 uses the configured seed as is
        let seed = self.seed ^ (ctx.video_index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        oracle_noisy_estimator(gt, self.sigma, seed, ctx.frame_index)
    }
}

/// Photometric search from a fixed starting lens. Frames where the search
/// stalls keep the starting lens with zero confidence.
#[derive(Debug, Clone, Copy)]
pub struct PhotometricEstimator {
    /// Starting coefficients; the center and radius come from the frame.
    pub init_k: [f64; 3],
    pub config: PhotometricConfig,
}

impl FrameEstimator for PhotometricEstimator {
    fn name(&self) -> &'static str {
        "photometric"
    }

    fn estimate(&self, ctx: &EstimateContext<'_>) -> Result<FrameEstimate> {
        let reference = ctx
            .reference
            .ok_or_else(|| Error::InvalidInput("photometric estimator needs a reference frame".into()))?;
        let (w, h) = ctx.fisheye.dims();
        let init = DistortionParams::for_frame(self.init_k, w, h);
        let (fisheye, reference) = if w > self.config.work_width && self.config.work_width >= 2 {
            let ww = self.config.work_width;
            let wh = ((h * ww) as f64 / w as f64).round().max(2.0) as usize;
            (resize_bilinear(ctx.fisheye, ww, wh)?, resize_bilinear(reference, ww, wh)?)
        } else {
            (ctx.fisheye.clone(), reference.clone())
        };
        let (sw, sh) = fisheye.dims();
        let start = DistortionParams::for_frame(self.init_k, sw, sh);
        match photometric_search_estimator(&fisheye, &reference, &start, ctx.frame_index, &self.config) {
            Err(Error::NoProgress) => Ok(FrameEstimate {
                params: init,
                confidence: 0.0,
                frame_index: ctx.frame_index,
            }),
            Ok(e) => Ok(FrameEstimate {
                params: DistortionParams::for_frame(e.params.k, w, h),
                ..e
            }),
            Err(e) => Err(e),
        }
    }
}

/// Names accepted by [`estimator_by_name`].
pub const ESTIMATOR_NAMES: [&str; 3] = ["ground-truth", "oracle-noisy", "photometric"];

/// Settings shared by the named estimators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimatorOptions {
    pub sigma: [f64; 3],
    pub seed: u64,
    pub photometric_init: [f64; 3],
    pub photometric: PhotometricConfig,
}

impl Default for EstimatorOptions {
    fn default() -> Self {
        Self {
            sigma: [0.02, 0.0, 0.0],
            seed: 0,
            photometric_init: [-0.2, 0.0, 0.0],
            photometric: PhotometricConfig::default(),
        }
    }
}

/// Estimator registry.
pub fn estimator_by_name(name: &str, opts: &EstimatorOptions) -> Result<Box<dyn FrameEstimator>> {
    match name {
        "ground-truth" => Ok(Box::new(GroundTruthEstimator)),
        "oracle-noisy" => Ok(Box::new(NoisyOracleEstimator {
            sigma: opts.sigma,
            seed: opts.seed,
        })),
        "photometric" => Ok(Box::new(PhotometricEstimator {
            init_k: opts.photometric_init,
            config: opts.photometric,
        })),
        other => Err(Error::InvalidInput(format!(
            "unknown estimator {other:?}, expected one of {ESTIMATOR_NAMES:?}"
        ))),
    }
}
