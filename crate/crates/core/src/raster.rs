//! Frames, flow fields and the bilinear resampling they share.

use crate::distortion::PixelCoord;
use crate::error::{Error, Result};

/// 8-bit raster, row-major, interleaved channels (1 = gray, 3 = RGB).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<u8>,
}

impl Frame {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<u8>) -> Result<Self> {
        if width < 2 || height < 2 {
            return Err(Error::InvalidInput(format!(
                "frames must be at least 2x2, got {width}x{height}"
            )));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidInput(format!("unsupported channel count {channels}")));
        }
        if data.len() != width * height * channels {
            return Err(Error::LengthMismatch {
                expected: width * height * channels,
                found: data.len(),
            });
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: u8) -> Result<Self> {
        Self::new(width, height, channels, vec![value; width * height * channels])
    }

    /// Gray frame from a per-pixel function, quantized on write.
    pub fn from_fn_gray(width: usize, height: usize, f: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(quantize(f(x, y)));
            }
        }
        Self::new(width, height, 1, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    pub fn get(&self, x: usize, y: usize, c: usize) -> u8 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    /// Rec. 601 luma in `[0, 255]`.
    pub fn luma(&self) -> Vec<f64> {
        match self.channels {
            1 => self.data.iter().map(|&v| v as f64).collect(),
            _ => self
                .data
                .chunks_exact(3)
                .map(|p| 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64)
                .collect(),
        }
    }

    /// Same frame collapsed to one luma channel.
    pub fn to_gray(&self) -> Frame {
        if self.channels == 1 {
            return self.clone();
        }
        let data = self.luma().into_iter().map(quantize).collect();
        Frame {
            width: self.width,
            height: self.height,
            channels: 1,
            data,
        }
    }
}

/// Round half away from zero and clamp to `0..=255`.
pub fn quantize(v: f64) -> u8 {
    if v.is_nan() {
        0
    } else {
        v.round().clamp(0.0, 255.0) as u8
    }
}

/// Per-pixel boolean mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidityMask {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

impl ValidityMask {
    pub fn full(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![true; width * height],
        }
    }

    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![false; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::LengthMismatch {
                expected: width * height,
                found: data.len(),
            });
        }
        Ok(Self { width, height, data })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.data
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn and(&self, other: &ValidityMask) -> Result<ValidityMask> {
        check_dims(self.dims(), other.dims())?;
        Ok(ValidityMask {
            width: self.width,
            height: self.height,
            data: self.data.iter().zip(&other.data).map(|(a, b)| *a && *b).collect(),
        })
    }

    /// Clears a border of `margin` pixels.
    pub fn erode_border(&self, margin: usize) -> ValidityMask {
        let mut out = self.clone();
        for y in 0..self.height {
            for x in 0..self.width {
                if x < margin || y < margin || x + margin >= self.width || y + margin >= self.height {
                    out.set(x, y, false);
                }
            }
        }
        out
    }
}

/// Dense two-channel displacement field with a validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    width: usize,
    height: usize,
    u: Vec<f64>,
    v: Vec<f64>,
    valid: ValidityMask,
}

impl FlowField {
    pub fn new(width: usize, height: usize, u: Vec<f64>, v: Vec<f64>, valid: ValidityMask) -> Result<Self> {
        let n = width * height;
        if u.len() != n || v.len() != n {
            return Err(Error::LengthMismatch {
                expected: n,
                found: u.len().min(v.len()),
            });
        }
        check_dims((width, height), valid.dims())?;
        let mut valid = valid;
        for i in 0..n {
            if !(u[i].is_finite() && v[i].is_finite()) {
                valid.data[i] = false;
            }
        }
        Ok(Self {
            width,
            height,
            u,
            v,
            valid,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self::constant(width, height, 0.0, 0.0)
    }

    pub fn constant(width: usize, height: usize, u: f64, v: f64) -> Self {
        let n = width * height;
        Self {
            width,
            height,
            u: vec![u; n],
            v: vec![v; n],
            valid: ValidityMask::full(width, height),
        }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> Option<(f64, f64)>) -> Self {
        let n = width * height;
        let (mut u, mut v, mut valid) = (vec![0.0; n], vec![0.0; n], vec![false; n]);
        for y in 0..height {
            for x in 0..width {
                let i = y * width + x;
                if let Some((du, dv)) = f(x, y) {
                    if du.is_finite() && dv.is_finite() {
                        u[i] = du;
                        v[i] = dv;
                        valid[i] = true;
                    }
                }
            }
        }
        Self {
            width,
            height,
            u,
            v,
            valid: ValidityMask {
                width,
                height,
                data: valid,
            },
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn u(&self) -> &[f64] {
        &self.u
    }

    pub fn v(&self) -> &[f64] {
        &self.v
    }

    pub fn valid(&self) -> &ValidityMask {
        &self.valid
    }

    pub fn is_valid(&self, x: usize, y: usize) -> bool {
        self.valid.get(x, y)
    }

    /// Raw displacement regardless of validity.
    pub fn raw(&self, x: usize, y: usize) -> (f64, f64) {
        let i = y * self.width + x;
        (self.u[i], self.v[i])
    }

    pub fn get(&self, x: usize, y: usize) -> Option<(f64, f64)> {
        self.is_valid(x, y).then(|| self.raw(x, y))
    }

    /// Restricts validity to `mask`.
    pub fn masked(mut self, mask: &ValidityMask) -> Result<Self> {
        self.valid = self.valid.and(mask)?;
        Ok(self)
    }

    /// Bilinear sample; `None` if any contributing neighbor is invalid or outside.
    pub fn sample(&self, p: PixelCoord) -> Option<(f64, f64)> {
        let taps = bilinear_taps(self.width, self.height, p)?;
        let (mut su, mut sv) = (0.0, 0.0);
        for (i, w) in taps.iter() {
            if !self.valid.data[i] {
                return None;
            }
            su += w * self.u[i];
            sv += w * self.v[i];
        }
        Some((su, sv))
    }

    /// Per-pixel `self - other`, valid where both are.
    pub fn sub(&self, other: &FlowField) -> Result<FlowField> {
        check_dims(self.dims(), other.dims())?;
        let valid = self.valid.and(&other.valid)?;
        let u = self.u.iter().zip(&other.u).map(|(a, b)| a - b).collect();
        let v = self.v.iter().zip(&other.v).map(|(a, b)| a - b).collect();
        FlowField::new(self.width, self.height, u, v, valid)
    }

    /// Endpoint magnitudes of valid pixels, row-major.
    pub fn valid_magnitudes(&self) -> Vec<f64> {
        (0..self.u.len())
            .filter(|&i| self.valid.data[i])
            .map(|i| self.u[i].hypot(self.v[i]))
            .collect()
    }
}

/// Up to four `(index, weight)` taps; zero-weight neighbors are dropped so
/// integer coordinates on the last row or column stay in bounds.
pub(crate) struct Taps {
    idx: [usize; 4],
    w: [f64; 4],
    len: usize,
}

impl Taps {
    pub(crate) fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        (0..self.len).map(|k| (self.idx[k], self.w[k]))
    }
}

pub(crate) fn bilinear_taps(width: usize, height: usize, p: PixelCoord) -> Option<Taps> {
    if !p.is_finite() {
        return None;
    }
    let x0 = p.x.floor();
    let y0 = p.y.floor();
    let fx = p.x - x0;
    let fy = p.y - y0;
    let mut taps = Taps {
        idx: [0; 4],
        w: [0.0; 4],
        len: 0,
    };
    for (dy, wy) in [(0.0, 1.0 - fy), (1.0, fy)] {
        if wy == 0.0 {
            continue;
        }
        for (dx, wx) in [(0.0, 1.0 - fx), (1.0, fx)] {
            if wx == 0.0 {
                continue;
            }
            let xi = x0 + dx;
            let yi = y0 + dy;
            if xi < 0.0 || yi < 0.0 || xi >= width as f64 || yi >= height as f64 {
                return None;
            }
            taps.idx[taps.len] = yi as usize * width + xi as usize;
            taps.w[taps.len] = wx * wy;
            taps.len += 1;
        }
    }
    Some(taps)
}

/// Bilinear interpolation of every channel at `p`; `None` when any
/// contributing neighbor lies outside the frame.
pub fn sample_bilinear(frame: &Frame, p: PixelCoord) -> Option<[f64; 3]> {
    let taps = bilinear_taps(frame.width, frame.height, p)?;
    let mut out = [0.0; 3];
    for (i, w) in taps.iter() {
        let base = i * frame.channels;
        for (c, o) in out.iter_mut().enumerate().take(frame.channels) {
            *o += w * frame.data[base + c] as f64;
        }
    }
    Some(out)
}

/// `out(p) = frame(p + flow(p))`; masked pixels are zero.
pub fn warp_backward(frame: &Frame, flow: &FlowField) -> Result<(Frame, ValidityMask)> {
    check_dims(frame.dims(), flow.dims())?;
    let (w, h, ch) = (frame.width, frame.height, frame.channels);
    let mut data = vec![0u8; w * h * ch];
    let mut mask = vec![false; w * h];
    let fill_row = |y: usize, row: &mut [u8], mrow: &mut [bool]| {
        for x in 0..w {
            let Some((du, dv)) = flow.get(x, y) else { continue };
            let Some(vals) = sample_bilinear(frame, PixelCoord::new(x as f64 + du, y as f64 + dv)) else {
                continue;
            };
            for c in 0..ch {
                row[x * ch + c] = quantize(vals[c]);
            }
            mrow[x] = true;
        }
    };
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        data.par_chunks_mut(w * ch)
            .zip(mask.par_chunks_mut(w))
            .enumerate()
            .for_each(|(y, (row, mrow))| fill_row(y, row, mrow));
    }
    #[cfg(not(feature = "parallel"))]
    {
        data.chunks_mut(w * ch)
            .zip(mask.chunks_mut(w))
            .enumerate()
            .for_each(|(y, (row, mrow))| fill_row(y, row, mrow));
    }
    Ok((Frame::new(w, h, ch, data)?, ValidityMask::from_vec(w, h, mask)?))
}

/// Bilinear resize on pixel-center-aligned grids, borders clamped.
pub fn resize_bilinear(frame: &Frame, width: usize, height: usize) -> Result<Frame> {
    if width < 2 || height < 2 {
        return Err(Error::InvalidInput(format!(
            "resize target must be at least 2x2, got {width}x{height}"
        )));
    }
    if frame.dims() == (width, height) {
        return Ok(frame.clone());
    }
    let sx = frame.width as f64 / width as f64;
    let sy = frame.height as f64 / height as f64;
    let ch = frame.channels;
    let mut data = Vec::with_capacity(width * height * ch);
    let max_x = (frame.width - 1) as f64;
    let max_y = (frame.height - 1) as f64;
    for y in 0..height {
        let src_y = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, max_y);
        for x in 0..width {
            let src_x = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, max_x);
            let vals = sample_bilinear(frame, PixelCoord::new(src_x, src_y))
                .expect("clamped coordinates are in bounds");
            data.extend(vals[..ch].iter().map(|&v| quantize(v)));
        }
    }
    Frame::new(width, height, ch, data)
}

pub(crate) fn check_dims(expected: (usize, usize), found: (usize, usize)) -> Result<()> {
    if expected != found {
        return Err(Error::DimensionMismatch { expected, found });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ramp(w: usize, h: usize) -> Frame {
        Frame::from_fn_gray(w, h, |x, _| (x * 10) as f64).unwrap()
    }

    #[test]
    fn sample_exact_and_midpoint() {
        let f = Frame::new(2, 2, 1, vec![10, 20, 30, 40]).unwrap();
        assert_eq!(sample_bilinear(&f, PixelCoord::new(1.0, 1.0)), Some([40.0, 0.0, 0.0]));
        assert_eq!(sample_bilinear(&f, PixelCoord::new(0.5, 0.0)), Some([15.0, 0.0, 0.0]));
        assert_eq!(sample_bilinear(&f, PixelCoord::new(1.5, 0.0)), None);
        assert_eq!(sample_bilinear(&f, PixelCoord::new(-0.01, 0.0)), None);
    }

    #[test]
    fn constant_frame_interpolates_to_constant() {
        let f = Frame::filled(5, 4, 3, 77).unwrap();
        let v = sample_bilinear(&f, PixelCoord::new(2.3, 1.7)).unwrap();
        for c in v {
            assert!((c - 77.0).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_flow_is_identity() {
        let f = ramp(9, 7);
        let (out, mask) = warp_backward(&f, &FlowField::zeros(9, 7)).unwrap();
        assert_eq!(out, f);
        assert_eq!(mask.count(), 63);
    }

    #[test]
    fn unit_shift_moves_ramp_and_masks_last_column() {
        let f = ramp(6, 3);
        let (out, mask) = warp_backward(&f, &FlowField::constant(6, 3, 1.0, 0.0)).unwrap();
        for y in 0..3 {
            for x in 0..5 {
                assert_eq!(out.get(x, y, 0), f.get(x + 1, y, 0));
                assert!(mask.get(x, y));
            }
            assert!(!mask.get(5, y));
            assert_eq!(out.get(5, y, 0), 0);
        }
    }

    #[test]
    fn warp_rejects_mismatched_flow() {
        let f = ramp(6, 3);
        assert!(matches!(
            warp_backward(&f, &FlowField::zeros(5, 3)),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn invalid_flow_pixels_are_masked() {
        let f = ramp(4, 4);
        let flow = FlowField::from_fn(4, 4, |x, _| (x != 2).then_some((0.0, 0.0)));
        let (_, mask) = warp_backward(&f, &flow).unwrap();
        assert!(!mask.get(2, 1));
        assert!(mask.get(1, 1));
    }

    #[test]
    fn resize_examples() {
        let f = ramp(8, 5);
        assert_eq!(resize_bilinear(&f, 8, 5).unwrap(), f);
        let c = Frame::filled(7, 9, 3, 201).unwrap();
        let r = resize_bilinear(&c, 4, 13).unwrap();
        assert!(r.data().iter().all(|&v| v == 201));
        let checker = Frame::from_fn_gray(4, 4, |x, y| if (x + y) % 2 == 0 { 255.0 } else { 0.0 }).unwrap();
        let r = resize_bilinear(&checker, 2, 2).unwrap();
        for &v in r.data() {
            assert!((v as f64 - 127.5).abs() <= 1.0, "{v}");
        }
    }

    #[test]
    fn luma_uses_rec601() {
        let f = Frame::new(2, 2, 3, [255, 0, 0].repeat(4)).unwrap();
        assert!((f.luma()[0] - 0.299 * 255.0).abs() < 1e-9);
        assert_eq!(f.to_gray().get(0, 0, 0), 76);
    }

    #[test]
    fn quantize_rounds_half_away() {
        assert_eq!(quantize(2.5), 3);
        assert_eq!(quantize(-3.0), 0);
        assert_eq!(quantize(300.0), 255);
        assert_eq!(quantize(f64::NAN), 0);
    }

    #[test]
    fn frame_validation() {
        assert!(Frame::new(1, 5, 1, vec![0; 5]).is_err());
        assert!(Frame::new(2, 2, 2, vec![0; 8]).is_err());
        assert!(Frame::new(2, 2, 1, vec![0; 3]).is_err());
    }

    fn smooth(w: usize, h: usize) -> Frame {
        Frame::from_fn_gray(w, h, |x, y| {
            let (x, y) = (x as f64, y as f64);
            120.0 + 60.0 * (x * 0.07).sin() + 40.0 * (y * 0.05 + 0.3).cos() + 0.3 * x
        })
        .unwrap()
    }

    proptest! {
        #[test]
        fn warp_composition_on_smooth_images(
            fu in -2.0f64..2.0, fv in -2.0f64..2.0,
            gu in -2.0f64..2.0, gv in -2.0f64..2.0,
            a in -0.02f64..0.02,
        ) {
            let (w, h) = (48, 40);
            let img = smooth(w, h);
            // f is a smooth non-constant field, g a constant shift
            let f = FlowField::from_fn(w, h, |x, y| Some((fu + a * y as f64, fv - a * x as f64)));
            let g = FlowField::constant(w, h, gu, gv);
            let (once_f, mask_f) = warp_backward(&img, &f).unwrap();
            let (twice, mask_g) = warp_backward(&once_f, &g).unwrap();
            let composed = FlowField::from_fn(w, h, |x, y| {
                let p = PixelCoord::new(x as f64 + gu, y as f64 + gv);
                f.sample(p).map(|(du, dv)| (gu + du, gv + dv))
            });
            let (direct, mask_c) = warp_backward(&img, &composed).unwrap();
            for y in 0..h {
                for x in 0..w {
                    let gx = x as f64 + gu;
                    let gy = y as f64 + gv;
                    // the second warp must only see pixels the first one produced
                    let inner_ok = mask_g.get(x, y)
                        && (gx.floor() as usize..=(gx.ceil() as usize).min(w - 1))
                            .all(|xx| (gy.floor() as usize..=(gy.ceil() as usize).min(h - 1))
                                .all(|yy| mask_f.get(xx, yy)));
                    if inner_ok && mask_c.get(x, y) {
                        let d = twice.get(x, y, 0) as i32 - direct.get(x, y, 0) as i32;
                        prop_assert!(d.abs() <= 1, "({x},{y}) diff {d}");
                    }
                }
            }
        }

        #[test]
        fn warp_is_deterministic(seed in any::<u64>()) {
            let img = smooth(16, 16);
            let s = (seed % 1000) as f64 / 1000.0;
            let flow = FlowField::constant(16, 16, s, -s);
            prop_assert_eq!(warp_backward(&img, &flow).unwrap(), warp_backward(&img, &flow).unwrap());
        }
    }
}
