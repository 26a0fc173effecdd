//! Dual optical flow and the fisheye deformation identity.
//!
//! For a rigidly translating scene, the difference between the fisheye
//! motion `Mf` and the corrected motion `Mn` at corresponding points equals
//! the change of the intra-frame flow `W` along the corrected motion:
//!
//! ```text
//! Mf(b + W(b)) - Mn(b) = W(b + Mn(b)) - W(b)
//! ```
//!
//! Everything here lives on the corrected grid, where `W` is the backward
//! warp field (`fisheye position - corrected position`).

use serde::{Deserialize, Serialize};

use crate::distortion::{intra_frame_flow, DistortionParams, PixelCoord};
use crate::error::{Error, Result};
use crate::flow::{estimate_flow, FlowConfig};
use crate::optim::{nelder_mead, NelderMeadOptions};
use crate::raster::{check_dims, warp_backward, FlowField, Frame, ValidityMask};

/// Scale of the Huber weights, in pixels.
pub const HUBER_DELTA: f64 = 1.0;

/// Median fisheye motion below which a window is treated as static.
const STATIC_MOTION: f64 = 0.05;

/// Left minus right side of the deformation identity.
#[derive(Debug, Clone)]
pub struct DeformationResidual {
    pub residual: FlowField,
    pub valid: ValidityMask,
    /// Huber-weighted mean magnitude over valid pixels, in pixels.
    pub summary: f64,
}

/// `ΔM(b) = Mf(b + W(b)) - Mn(b)`.
pub fn delta_m(mf: &FlowField, mn: &FlowField, w: &FlowField) -> Result<FlowField> {
    check_dims(mf.dims(), mn.dims())?;
    check_dims(mf.dims(), w.dims())?;
    let (width, height) = w.dims();
    Ok(FlowField::from_fn(width, height, |x, y| {
        let (wu, wv) = w.get(x, y)?;
        let (nu, nv) = mn.get(x, y)?;
        let (fu, fv) = mf.sample(PixelCoord::new(x as f64 + wu, y as f64 + wv))?;
        Some((fu - nu, fv - nv))
    }))
}

/// `ΔW(b) = W(b + Mn(b)) - W(b)`.
pub fn delta_w(w: &FlowField, mn: &FlowField) -> Result<FlowField> {
    check_dims(w.dims(), mn.dims())?;
    let (width, height) = w.dims();
    Ok(FlowField::from_fn(width, height, |x, y| {
        let (wu, wv) = w.get(x, y)?;
        let (nu, nv) = mn.get(x, y)?;
        let (au, av) = w.sample(PixelCoord::new(x as f64 + nu, y as f64 + nv))?;
        Some((au - wu, av - wv))
    }))
}

/// Huber-weighted mean of non-negative magnitudes, weights `min(1, δ/|r|)`.
pub fn huber_mean(magnitudes: &[f64], delta: f64) -> Option<f64> {
    if magnitudes.is_empty() {
        return None;
    }
    let (mut num, mut den) = (0.0, 0.0);
    for &m in magnitudes {
        let w = if m > delta { delta / m } else { 1.0 };
        num += w * m;
        den += w;
    }
    Some(num / den)
}

pub fn deformation_residual(w: &FlowField, mf: &FlowField, mn: &FlowField) -> Result<DeformationResidual> {
    let residual = delta_m(mf, mn, w)?.sub(&delta_w(w, mn)?)?;
    let summary = huber_mean(&residual.valid_magnitudes(), HUBER_DELTA).ok_or(Error::EmptyValidRegion)?;
    Ok(DeformationResidual {
        valid: residual.valid().clone(),
        residual,
        summary,
    })
}

/// Gray heatmap of residual magnitudes, linear up to `max_px` (white);
/// invalid pixels are black.
pub fn residual_heatmap(residual: &FlowField, max_px: f64) -> Result<Frame> {
    let (w, h) = residual.dims();
    let data = (0..w * h)
        .map(|i| {
            let (x, y) = (i % w, i / w);
            match residual.get(x, y) {
                Some((u, v)) => (u.hypot(v) / max_px).min(1.0) * 255.0,
                None => 0.0,
            }
        })
        .map(crate::raster::quantize)
        .collect();
    Frame::new(w, h, 1, data)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RefineConfig {
    pub flow: FlowConfig,
    /// Initial simplex offsets for (k1, k2, k3).
    pub initial_step: [f64; 3],
    pub diameter_tol: f64,
    pub max_evaluations: usize,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            flow: FlowConfig::default(),
            initial_step: [0.05, 0.02, 0.005],
            diameter_tol: 1e-4,
            max_evaluations: 150,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Refinement {
    pub params: DistortionParams,
    pub objective: f64,
    pub init_objective: f64,
    pub evaluations: usize,
}

/// Fisheye flows between consecutive frames of a window.
pub fn fisheye_flows(window: &[Frame], cfg: &FlowConfig) -> Result<Vec<FlowField>> {
    if window.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "refinement window needs at least 2 frames, got {}",
            window.len()
        )));
    }
    window
        .windows(2)
        .map(|pair| estimate_flow(&pair[0], &pair[1], cfg))
        .collect()
}

fn median(mut values: Vec<f64>) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    })
}

/// Rigid translation of a pair of corrected frames: component-wise median of
/// the measured flow restricted to `mask`.
fn corrected_translation(a: &Frame, b: &Frame, mask: &ValidityMask, cfg: &FlowConfig) -> Result<(f64, f64)> {
    let mn = estimate_flow(a, b, cfg)?.masked(mask)?;
    let (w, h) = mn.dims();
    let (mut us, mut vs) = (Vec::new(), Vec::new());
    for y in 0..h {
        for x in 0..w {
            if let Some((u, v)) = mn.get(x, y) {
                us.push(u);
                vs.push(v);
            }
        }
    }
    Ok((
        median(us).ok_or(Error::EmptyValidRegion)?,
        median(vs).ok_or(Error::EmptyValidRegion)?,
    ))
}

/// Deformation residual of every consecutive pair of a window under
/// `params`, given the fisheye flows of those pairs.
///
/// Each pair is corrected with `params`; the corrected motion is modelled as
/// the rigid translation fitted to the measured corrected flow, so lenses
/// that leave the corrected motion non-rigid are penalized.
pub fn window_residuals(
    params: &DistortionParams,
    window: &[Frame],
    mf: &[FlowField],
    cfg: &FlowConfig,
) -> Result<Vec<DeformationResidual>> {
    if mf.len() + 1 != window.len() {
        return Err(Error::LengthMismatch {
            expected: window.len().saturating_sub(1),
            found: mf.len(),
        });
    }
    let (w, h) = window[0].dims();
    let warp = intra_frame_flow(params, w, h)?;
    let corrected = window
        .iter()
        .map(|f| warp_backward(f, &warp))
        .collect::<Result<Vec<_>>>()?;
    let margin = cfg.window / 2 + 1;
    mf.iter()
        .enumerate()
        .map(|(i, flow)| {
            let (ca, ma) = &corrected[i];
            let (cb, mb) = &corrected[i + 1];
            let region = ma.and(mb)?.erode_border(margin);
            let region = erode(&region, margin);
            let (tu, tv) = corrected_translation(ca, cb, &region, cfg)?;
            let mn = FlowField::constant(w, h, tu, tv).masked(&region)?;
            deformation_residual(&warp, flow, &mn)
        })
        .collect()
}

/// Mean of the pair summaries of [`window_residuals`].
pub fn window_objective(params: &DistortionParams, window: &[Frame], mf: &[FlowField], cfg: &FlowConfig) -> Result<f64> {
    let residuals = window_residuals(params, window, mf, cfg)?;
    Ok(residuals.iter().map(|r| r.summary).sum::<f64>() / residuals.len() as f64)
}

/// Shrinks the valid region by `r` pixels in every direction.
fn erode(mask: &ValidityMask, r: usize) -> ValidityMask {
    let (w, h) = mask.dims();
    let mut out = mask.clone();
    for y in 0..h {
        for x in 0..w {
            if !mask.get(x, y) {
                continue;
            }
            let (x0, x1) = (x.saturating_sub(r), (x + r).min(w - 1));
            let (y0, y1) = (y.saturating_sub(r), (y + r).min(h - 1));
            let hole = (y0..=y1).any(|yy| (x0..=x1).any(|xx| !mask.get(xx, yy)));
            if hole {
                out.set(x, y, false);
            }
        }
    }
    out
}

/// Nelder-Mead over `(k1, k2, k3)` minimizing [`window_objective`].
///
/// Returns [`Error::NoProgress`] for a static window, where every lens
/// explains the (absent) motion equally well. The result is never worse
/// than `init` under the objective.
pub fn refine_params(init: &DistortionParams, window: &[Frame], cfg: &RefineConfig) -> Result<Refinement> {
    let mf = fisheye_flows(window, &cfg.flow)?;
    let moving = mf
        .iter()
        .filter_map(|f| median(f.valid_magnitudes()))
        .any(|m| m > STATIC_MOTION);
    if !moving {
        return Err(Error::NoProgress);
    }
    let init_objective = window_objective(init, window, &mf, &cfg.flow)?;
    let candidate = |k: &[f64]| {
        let mut p = *init;
        p.k = [k[0], k[1], k[2]];
        p
    };
    let opts = NelderMeadOptions {
        diameter_tol: cfg.diameter_tol,
        max_evaluations: cfg.max_evaluations.saturating_sub(1),
    };
    let best = nelder_mead(
        |k| {
            let p = candidate(k);
            if !p.passes_guard() {
                return f64::INFINITY;
            }
            window_objective(&p, window, &mf, &cfg.flow).unwrap_or(f64::INFINITY)
        },
        &init.k,
        &cfg.initial_step,
        opts,
    );
    let evaluations = best.evaluations + 1;
    if best.value < init_objective {
        Ok(Refinement {
            params: candidate(&best.x),
            objective: best.value,
            init_objective,
            evaluations,
        })
    } else {
        Ok(Refinement {
            params: *init,
            objective: init_objective,
            init_objective,
            evaluations,
        })
    }
}
