//! Dense coarse-to-fine Lucas-Kanade optical flow.
//!
//! Each pyramid level refines the upsampled coarser estimate by iterating a
//! windowed Gauss-Newton update against the backward-warped second frame.
//! Pixels whose window has a rank-deficient structure tensor, or whose
//! endpoint leaves the frame, are reported invalid.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{check_dims, FlowField, Frame, ValidityMask};

/// Smaller structure-tensor eigenvalue below which a window is considered
/// textureless, for intensities scaled to `[0, 1]`.
pub const MIN_EIGENVALUE: f64 = 1e-4;

const MIN_LEVEL_SIZE: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlowConfig {
    pub pyramid_levels: usize,
    /// Side of the square integration window, odd.
    pub window: usize,
    pub iterations: usize,
    /// Gaussian pre-smoothing in pixels; `0` disables it.
    pub smoothing_sigma: f64,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            pyramid_levels: 4,
            window: 7,
            iterations: 5,
            smoothing_sigma: 1.0,
        }
    }
}

impl FlowConfig {
    pub fn validate(&self) -> Result<()> {
        if self.pyramid_levels < 1 {
            return Err(Error::InvalidInput("pyramid_levels must be at least 1".into()));
        }
        if self.window < 3 || self.window.is_multiple_of(2) {
            return Err(Error::InvalidInput(format!(
                "window must be odd and at least 3, got {}",
                self.window
            )));
        }
        if !(self.smoothing_sigma >= 0.0 && self.smoothing_sigma.is_finite()) {
            return Err(Error::InvalidInput("smoothing_sigma must be non-negative".into()));
        }
        Ok(())
    }
}

/// Single-channel floating point image.
#[derive(Debug, Clone)]
pub(crate) struct Plane {
    pub w: usize,
    pub h: usize,
    pub data: Vec<f64>,
}

impl Plane {
    pub fn from_frame(frame: &Frame) -> Self {
        Self {
            w: frame.width(),
            h: frame.height(),
            data: frame.luma().into_iter().map(|v| v / 255.0).collect(),
        }
    }

    #[inline]
    fn at(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.w + x]
    }

    /// Bilinear sample with border clamping.
    #[inline]
    fn sample_clamped(&self, x: f64, y: f64) -> f64 {
        let x = x.clamp(0.0, (self.w - 1) as f64);
        let y = y.clamp(0.0, (self.h - 1) as f64);
        let x0 = (x.floor() as usize).min(self.w - 2);
        let y0 = (y.floor() as usize).min(self.h - 2);
        let fx = x - x0 as f64;
        let fy = y - y0 as f64;
        let top = self.at(x0, y0) * (1.0 - fx) + self.at(x0 + 1, y0) * fx;
        let bot = self.at(x0, y0 + 1) * (1.0 - fx) + self.at(x0 + 1, y0 + 1) * fx;
        top * (1.0 - fy) + bot * fy
    }
}

fn convolve_separable(p: &Plane, kernel: &[f64]) -> Plane {
    let r = (kernel.len() / 2) as isize;
    let (w, h) = (p.w as isize, p.h as isize);
    let mut tmp = vec![0.0; p.data.len()];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, &kv) in kernel.iter().enumerate() {
                let xx = (x + k as isize - r).clamp(0, w - 1);
                acc += kv * p.data[(y * w + xx) as usize];
            }
            tmp[(y * w + x) as usize] = acc;
        }
    }
    let mut out = vec![0.0; p.data.len()];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, &kv) in kernel.iter().enumerate() {
                let yy = (y + k as isize - r).clamp(0, h - 1);
                acc += kv * tmp[(yy * w + x) as usize];
            }
            out[(y * w + x) as usize] = acc;
        }
    }
    Plane {
        w: p.w,
        h: p.h,
        data: out,
    }
}

pub(crate) fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil().max(1.0) as isize;
    let mut k: Vec<f64> = (-r..=r)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

fn gaussian_blur(p: &Plane, sigma: f64) -> Plane {
    if sigma <= 0.0 {
        return p.clone();
    }
    convolve_separable(p, &gaussian_kernel(sigma))
}

fn downsample(p: &Plane) -> Plane {
    let blurred = convolve_separable(p, &[1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0]);
    let w = p.w.div_ceil(2);
    let h = p.h.div_ceil(2);
    let mut data = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            data.push(blurred.at(2 * x, 2 * y));
        }
    }
    Plane { w, h, data }
}

fn gradients(p: &Plane) -> (Vec<f64>, Vec<f64>) {
    let (w, h) = (p.w, p.h);
    let mut gx = vec![0.0; w * h];
    let mut gy = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let (xl, xr) = (x.saturating_sub(1), (x + 1).min(w - 1));
            let (yu, yd) = (y.saturating_sub(1), (y + 1).min(h - 1));
            gx[y * w + x] = (p.at(xr, y) - p.at(xl, y)) / (xr - xl) as f64;
            gy[y * w + x] = (p.at(x, yd) - p.at(x, yu)) / (yd - yu) as f64;
        }
    }
    (gx, gy)
}

/// Mean over a `(2r+1)^2` window clipped at the borders.
fn box_mean(data: &[f64], w: usize, h: usize, r: usize) -> Vec<f64> {
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        let row = &data[y * w..(y + 1) * w];
        let mut prefix = vec![0.0; w + 1];
        for x in 0..w {
            prefix[x + 1] = prefix[x] + row[x];
        }
        for x in 0..w {
            let lo = x.saturating_sub(r);
            let hi = (x + r + 1).min(w);
            tmp[y * w + x] = (prefix[hi] - prefix[lo]) / (hi - lo) as f64;
        }
    }
    let mut out = vec![0.0; w * h];
    let mut prefix = vec![0.0; h + 1];
    for x in 0..w {
        for y in 0..h {
            prefix[y + 1] = prefix[y] + tmp[y * w + x];
        }
        for y in 0..h {
            let lo = y.saturating_sub(r);
            let hi = (y + r + 1).min(h);
            out[y * w + x] = (prefix[hi] - prefix[lo]) / (hi - lo) as f64;
        }
    }
    out
}

fn upsample_flow(u: &[f64], v: &[f64], from: (usize, usize), to: (usize, usize)) -> (Vec<f64>, Vec<f64>) {
    let src_u = Plane {
        w: from.0,
        h: from.1,
        data: u.to_vec(),
    };
    let src_v = Plane {
        w: from.0,
        h: from.1,
        data: v.to_vec(),
    };
    let sx = from.0 as f64 / to.0 as f64;
    let sy = from.1 as f64 / to.1 as f64;
    let mut ou = Vec::with_capacity(to.0 * to.1);
    let mut ov = Vec::with_capacity(to.0 * to.1);
    for y in 0..to.1 {
        let fy = (y as f64 + 0.5) * sy - 0.5;
        for x in 0..to.0 {
            let fx = (x as f64 + 0.5) * sx - 0.5;
            ou.push(src_u.sample_clamped(fx, fy) / sx);
            ov.push(src_v.sample_clamped(fx, fy) / sy);
        }
    }
    (ou, ov)
}

fn pyramid(base: Plane, levels: usize) -> Vec<Plane> {
    let mut out = vec![base];
    while out.len() < levels {
        let last = out.last().expect("non-empty");
        if last.w / 2 < MIN_LEVEL_SIZE || last.h / 2 < MIN_LEVEL_SIZE {
            break;
        }
        let next = downsample(last);
        out.push(next);
    }
    out
}

struct Gradients<'a> {
    gx: &'a [f64],
    gy: &'a [f64],
    sxx: &'a [f64],
    sxy: &'a [f64],
    syy: &'a [f64],
}

const CONVERGED_STEP: f64 = 1e-3;

/// Gauss-Newton iterations for one pixel, with its own displacement applied
/// to the whole window.
fn refine_pixel(la: &Plane, lb: &Plane, g: &Gradients<'_>, r: usize, iterations: usize, x: usize, y: usize, uv: (f64, f64)) -> (f64, f64) {
    let (w, h) = (la.w, la.h);
    let i = y * w + x;
    let det = g.sxx[i] * g.syy[i] - g.sxy[i] * g.sxy[i];
    if det.abs() < 1e-18 {
        return uv;
    }
    let (x0, x1) = (x.saturating_sub(r), (x + r).min(w - 1));
    let (y0, y1) = (y.saturating_sub(r), (y + r).min(h - 1));
    let n = ((x1 - x0 + 1) * (y1 - y0 + 1)) as f64;
    let (mut u, mut v) = uv;
    for _ in 0..iterations {
        let (mut bx, mut by) = (0.0, 0.0);
        for yy in y0..=y1 {
            for xx in x0..=x1 {
                let j = yy * w + xx;
                let it = lb.sample_clamped(xx as f64 + u, yy as f64 + v) - la.data[j];
                bx += g.gx[j] * it;
                by += g.gy[j] * it;
            }
        }
        bx /= n;
        by /= n;
        let du = (g.syy[i] * bx - g.sxy[i] * by) / det;
        let dv = (g.sxx[i] * by - g.sxy[i] * bx) / det;
        u -= du;
        v -= dv;
        if du.hypot(dv) < CONVERGED_STEP {
            break;
        }
    }
    (u, v)
}

fn refine_level(la: &Plane, lb: &Plane, g: &Gradients<'_>, r: usize, iterations: usize, u: &mut [f64], v: &mut [f64]) {
    let w = la.w;
    let row = |y: usize, ur: &mut [f64], vr: &mut [f64]| {
        for x in 0..w {
            let (nu, nv) = refine_pixel(la, lb, g, r, iterations, x, y, (ur[x], vr[x]));
            ur[x] = nu;
            vr[x] = nv;
        }
    };
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        u.par_chunks_mut(w)
            .zip(v.par_chunks_mut(w))
            .enumerate()
            .for_each(|(y, (ur, vr))| row(y, ur, vr));
    }
    #[cfg(not(feature = "parallel"))]
    for (y, (ur, vr)) in u.chunks_mut(w).zip(v.chunks_mut(w)).enumerate() {
        row(y, ur, vr);
    }
}

/// Flow from `a` to `b`: `a(p) ~ b(p + flow(p))`.
pub fn estimate_flow(a: &Frame, b: &Frame, cfg: &FlowConfig) -> Result<FlowField> {
    check_dims(a.dims(), b.dims())?;
    cfg.validate()?;
    let pa = gaussian_blur(&Plane::from_frame(a), cfg.smoothing_sigma);
    let pb = gaussian_blur(&Plane::from_frame(b), cfg.smoothing_sigma);
    let pyr_a = pyramid(pa, cfg.pyramid_levels);
    let pyr_b = pyramid(pb, cfg.pyramid_levels);
    let r = cfg.window / 2;

    let top = pyr_a.len() - 1;
    let mut u = vec![0.0; pyr_a[top].w * pyr_a[top].h];
    let mut v = u.clone();
    let mut min_eig = Vec::new();
    for level in (0..=top).rev() {
        let la = &pyr_a[level];
        let lb = &pyr_b[level];
        let (w, h) = (la.w, la.h);
        if level != top {
            let prev = &pyr_a[level + 1];
            (u, v) = upsample_flow(&u, &v, (prev.w, prev.h), (w, h));
        }
        let (gx, gy) = gradients(la);
        let sxx = box_mean(&gx.iter().map(|g| g * g).collect::<Vec<_>>(), w, h, r);
        let sxy = box_mean(&gx.iter().zip(&gy).map(|(a, b)| a * b).collect::<Vec<_>>(), w, h, r);
        let syy = box_mean(&gy.iter().map(|g| g * g).collect::<Vec<_>>(), w, h, r);

        let grad = Gradients {
            gx: &gx,
            gy: &gy,
            sxx: &sxx,
            sxy: &sxy,
            syy: &syy,
        };
        refine_level(la, lb, &grad, r, cfg.iterations, &mut u, &mut v);
        if level == 0 {
            min_eig = (0..w * h)
                .map(|i| {
                    let tr = sxx[i] + syy[i];
                    let disc = ((sxx[i] - syy[i]).powi(2) + 4.0 * sxy[i] * sxy[i]).sqrt();
                    0.5 * (tr - disc)
                })
                .collect();
        }
    }

    let (w, h) = a.dims();
    let mut valid = ValidityMask::full(w, h);
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let ex = x as f64 + u[i];
            let ey = y as f64 + v[i];
            let inside = ex >= 0.0 && ey >= 0.0 && ex <= (w - 1) as f64 && ey <= (h - 1) as f64;
            if min_eig[i] < MIN_EIGENVALUE || !inside {
                valid.set(x, y, false);
            }
        }
    }
    FlowField::new(w, h, u, v, valid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthesis::scene::TextureCanvas;

    fn interior(w: usize, h: usize, m: usize) -> ValidityMask {
        ValidityMask::full(w, h).erode_border(m)
    }

    fn mean_epe(f: &FlowField, gt: impl Fn(usize, usize) -> (f64, f64), mask: &ValidityMask) -> f64 {
        let (mut s, mut n) = (0.0, 0);
        for y in 0..f.height() {
            for x in 0..f.width() {
                if let (Some((u, v)), true) = (f.get(x, y), mask.get(x, y)) {
                    let (gu, gv) = gt(x, y);
                    s += (u - gu).hypot(v - gv);
                    n += 1;
                }
            }
        }
        assert!(n > 0);
        s / n as f64
    }

    #[test]
    fn identical_frames_give_zero_flow() {
        let tex = TextureCanvas::new(160, 160, 2.5, 3);
        let a = tex.crop(0.0, 0.0, 96, 96);
        let f = estimate_flow(&a, &a, &FlowConfig::default()).unwrap();
        assert!(f.valid().count() > 96 * 96 / 2);
        for y in 0..96 {
            for x in 0..96 {
                if let Some((u, v)) = f.get(x, y) {
                    assert_eq!((u, v), (0.0, 0.0));
                }
            }
        }
    }

    #[test]
    fn recovers_global_shift() {
        let tex = TextureCanvas::new(200, 200, 2.5, 5);
        let a = tex.crop(20.0, 20.0, 128, 128);
        let b = tex.crop(23.0, 20.0, 128, 128);
        // b(p) = a(p + (3,0)) in texture coordinates, so a(p) = b(p - (3,0))
        let f = estimate_flow(&a, &b, &FlowConfig::default()).unwrap();
        let e = mean_epe(&f, |_, _| (-3.0, 0.0), &interior(128, 128, 8));
        assert!(e <= 0.3, "epe {e}");
    }

    #[test]
    fn recovers_small_rotation() {
        let tex = TextureCanvas::new(240, 240, 2.5, 7);
        let angle = 1f64.to_radians();
        let a = tex.crop_rotated(50.0, 50.0, 128, 128, 0.0);
        let b = tex.crop_rotated(50.0, 50.0, 128, 128, angle);
        let c = 63.5;
        let (s, co) = (-angle).sin_cos();
        let gt = |x: usize, y: usize| {
            let (dx, dy) = (x as f64 - c, y as f64 - c);
            (co * dx - s * dy - dx, s * dx + co * dy - dy)
        };
        let f = estimate_flow(&a, &b, &FlowConfig::default()).unwrap();
        let e = mean_epe(&f, gt, &interior(128, 128, 8));
        assert!(e <= 0.5, "epe {e}");
    }

    #[test]
    fn translation_flow_is_antisymmetric() {
        let tex = TextureCanvas::new(200, 200, 2.5, 11);
        let a = tex.crop(30.0, 30.0, 128, 128);
        let b = tex.crop(32.0, 29.0, 128, 128);
        let cfg = FlowConfig::default();
        let fwd = estimate_flow(&a, &b, &cfg).unwrap();
        let bwd = estimate_flow(&b, &a, &cfg).unwrap();
        let mask = interior(128, 128, 8);
        let (mut s, mut n) = (0.0, 0);
        for y in 0..128 {
            for x in 0..128 {
                if let (Some(f), Some(b), true) = (fwd.get(x, y), bwd.get(x, y), mask.get(x, y)) {
                    s += (f.0 + b.0).hypot(f.1 + b.1);
                    n += 1;
                }
            }
        }
        let dev = s / n as f64;
        assert!(dev <= 0.3, "deviation {dev}");
    }

    #[test]
    fn rejects_mismatched_frames() {
        let a = Frame::filled(10, 10, 1, 0).unwrap();
        let b = Frame::filled(10, 11, 1, 0).unwrap();
        assert!(matches!(
            estimate_flow(&a, &b, &FlowConfig::default()),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn flat_frames_are_invalid() {
        let a = Frame::filled(32, 32, 1, 90).unwrap();
        let f = estimate_flow(&a, &a, &FlowConfig::default()).unwrap();
        assert_eq!(f.valid().count(), 0);
    }

    #[test]
    fn config_validation() {
        let bad = FlowConfig {
            window: 4,
            ..FlowConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = FlowConfig {
            pyramid_levels: 0,
            ..FlowConfig::default()
        };
        assert!(bad.validate().is_err());
        assert!(serde_json::from_str::<FlowConfig>(r#"{"window":9}"#).unwrap().window == 9);
        assert!(serde_json::from_str::<FlowConfig>(r#"{"windw":9}"#).is_err());
    }

    #[test]
    fn box_mean_of_constant_is_constant() {
        let d = vec![2.0; 35];
        assert!(box_mean(&d, 7, 5, 2).iter().all(|&v| (v - 2.0).abs() < 1e-12));
    }
}
