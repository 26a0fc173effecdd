//! Browser bindings: lens preview, temporal weighting traces and the
//! deformation residual as a function of lens error.

use fvl_core::distortion::{intra_frame_flow, DistortionParams};
use fvl_core::dual_flow::{fisheye_flows, window_objective};
use fvl_core::estimators::oracle_noisy_estimator;
use fvl_core::flow::FlowConfig;
use fvl_core::raster::warp_backward;
use fvl_core::synthesis::distort_frame;
use fvl_core::synthesis::scene::{pan_sequence, SceneConfig, TextureCanvas};
use fvl_core::temporal::{combine_params, make_weights};
use fvl_core::{Frame, Result};
use wasm_bindgen::prelude::*;

/// Lens used by the residual demo.
const DEMO_K: [f64; 3] = [-0.2, 0.02, 0.0];
const RESIDUAL_SIZE: usize = 96;

fn planar_with_grid(size: usize) -> Frame {
    let tex = TextureCanvas::new(size + 4, size + 4, 2.0, 9).crop(2.0, 2.0, size, size);
    let step = (size / 8).max(2);
    Frame::from_fn_gray(size, size, |x, y| {
        if x % step == 0 || y % step == 0 {
            255.0
        } else {
            0.25 * tex.get(x, y, 0) as f64
        }
    })
    .expect("preview size is valid")
}

fn rgba_into(out: &mut [u8], stride: usize, x0: usize, frame: &Frame, mask: Option<&fvl_core::ValidityMask>) {
    let (w, h) = frame.dims();
    for y in 0..h {
        for x in 0..w {
            let visible = mask.is_none_or(|m| m.get(x, y));
            let v = if visible { frame.get(x, y, 0) } else { 0 };
            let i = (y * stride + x0 + x) * 4;
            out[i..i + 4].copy_from_slice(&[v, v, v, 255]);
        }
    }
}

/// RGBA image `2 * size` wide: the fisheye view of a grid and its
/// correction with the same lens.
pub fn preview_rgba(k: [f64; 3], size: usize) -> Result<Vec<u8>> {
    if size < 16 {
        return Err(fvl_core::Error::InvalidInput("preview size must be at least 16".into()));
    }
    let params = DistortionParams::for_frame(k, size, size);
    if !params.passes_guard() {
        return Err(fvl_core::Error::MonotonicityViolation);
    }
    let planar = planar_with_grid(size);
    let fisheye = distort_frame(&planar, &params);
    let (corrected, mask) = warp_backward(&fisheye, &intra_frame_flow(&params, size, size)?)?;
    let mut out = vec![0u8; 2 * size * size * 4];
    rgba_into(&mut out, 2 * size, 0, &fisheye, None);
    rgba_into(&mut out, 2 * size, size, &corrected, Some(&mask));
    Ok(out)
}

/// Per-frame k1 of a noisy estimate stream followed by the same stream
/// blended over trailing windows of five frames.
pub fn tws_traces(sigma: f64, a1: f64, frames: usize, seed: u64) -> Result<Vec<f64>> {
    let scheme = make_weights(5, a1)?;
    let gt = DistortionParams::for_frame(DEMO_K, 256, 256);
    let estimates = (0..frames)
        .map(|i| oracle_noisy_estimator(&gt, [sigma, 0.0, 0.0], seed, i))
        .collect::<Result<Vec<_>>>()?;
    let mut out: Vec<f64> = estimates.iter().map(|e| e.params.k[0]).collect();
    for i in 0..frames {
        let lo = (i + 1).saturating_sub(scheme.n());
        out.push(combine_params(&estimates[lo..=i], &scheme)?.k[0]);
    }
    Ok(out)
}

/// Window objective of the demo pan for each k1 offset from the true lens.
pub fn residual_curve(offsets: &[f64]) -> Result<Vec<f64>> {
    let scene = SceneConfig {
        width: RESIDUAL_SIZE,
        height: RESIDUAL_SIZE,
        frames: 3,
        velocity: [2.0, 1.0],
        ..SceneConfig::default()
    };
    let gt = DistortionParams::for_frame(DEMO_K, RESIDUAL_SIZE, RESIDUAL_SIZE);
    let (planar, _) = pan_sequence(&scene);
    let window: Vec<Frame> = planar.iter().map(|f| distort_frame(f, &gt)).collect();
    let cfg = FlowConfig::default();
    let mf = fisheye_flows(&window, &cfg)?;
    offsets
        .iter()
        .map(|d| {
            let mut p = gt;
            p.k[0] += d;
            if !p.passes_guard() {
                return Ok(f64::NAN);
            }
            window_objective(&p, &window, &mf, &cfg)
        })
        .collect()
}

fn js(e: fvl_core::Error) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen(js_name = distortionPreview)]
pub fn distortion_preview(k1: f64, k2: f64, k3: f64, size: usize) -> std::result::Result<Vec<u8>, JsError> {
    preview_rgba([k1, k2, k3], size).map_err(js)
}

#[wasm_bindgen(js_name = twsTraces)]
pub fn tws_traces_js(sigma: f64, a1: f64, frames: usize, seed: u64) -> std::result::Result<Vec<f64>, JsError> {
    tws_traces(sigma, a1, frames, seed).map_err(js)
}

#[wasm_bindgen(js_name = residualCurve)]
pub fn residual_curve_js(offsets: Vec<f64>) -> std::result::Result<Vec<f64>, JsError> {
    residual_curve(&offsets).map_err(js)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preview_has_both_panels() {
        let img = preview_rgba([-0.2, 0.0, 0.0], 32).unwrap();
        assert_eq!(img.len(), 64 * 32 * 4);
        assert!(img.chunks(4).all(|p| p[3] == 255));
        assert!(preview_rgba([-0.9, 0.0, 0.0], 32).is_err());
    }

    #[test]
    fn blended_trace_is_smoother() {
        let t = tws_traces(0.02, 0.3, 60, 1).unwrap();
        let (raw, tws) = t.split_at(60);
        let spread = |v: &[f64]| {
            let m = v.iter().sum::<f64>() / v.len() as f64;
            (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64).sqrt()
        };
        assert!(spread(&tws[4..]) < 0.7 * spread(&raw[4..]));
        assert!(tws_traces(0.02, 0.9, 10, 1).is_err());
    }

    #[test]
    fn residual_is_smallest_near_truth() {
        let c = residual_curve(&[-0.1, 0.0, 0.1]).unwrap();
        assert!(c[1] < c[0] && c[1] < c[2], "{c:?}");
    }
}
