//! Image fidelity, flow accuracy and video stability metrics.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{estimate_flow, gaussian_kernel, FlowConfig};
use crate::raster::{check_dims, FlowField, Frame, ValidityMask};

/// Reported instead of `+inf` for identical frames.
pub const PSNR_CAP_DB: f64 = 99.0;

const SSIM_RADIUS: usize = 5;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = (0.01 * 255.0) * (0.01 * 255.0);
const SSIM_C2: f64 = (0.03 * 255.0) * (0.03 * 255.0);

/// Shortest camera path accepted by [`stability_triple`].
pub const MIN_PATH_LEN: usize = 8;

/// Highest 0-based frequency bin counted as low frequency (bins 1..=5).
const LOW_FREQ_BINS: usize = 5;

fn check_frames(a: &Frame, b: &Frame, mask: &ValidityMask) -> Result<()> {
    check_dims(a.dims(), b.dims())?;
    check_dims(a.dims(), mask.dims())?;
    if a.channels() != b.channels() {
        return Err(Error::InvalidInput(format!(
            "channel counts differ: {} vs {}",
            a.channels(),
            b.channels()
        )));
    }
    Ok(())
}

/// Peak signal-to-noise ratio over masked pixels, all channels, in dB.
pub fn psnr(a: &Frame, b: &Frame, mask: &ValidityMask) -> Result<f64> {
    check_frames(a, b, mask)?;
    let ch = a.channels();
    let (mut sse, mut n) = (0.0, 0usize);
    for (i, &ok) in mask.as_slice().iter().enumerate() {
        if ok {
            for c in 0..ch {
                let d = a.data()[i * ch + c] as f64 - b.data()[i * ch + c] as f64;
                sse += d * d;
            }
            n += ch;
        }
    }
    if n == 0 {
        return Err(Error::EmptyValidRegion);
    }
    if sse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (255.0 * 255.0 / (sse / n as f64)).log10()).min(PSNR_CAP_DB))
}

/// Separable filter evaluated only where the full window fits.
fn filter_valid(data: &[f64], w: usize, h: usize, k: &[f64]) -> Vec<f64> {
    let r = k.len() / 2;
    let (ow, oh) = (w - 2 * r, h - 2 * r);
    let mut tmp = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            tmp[y * ow + x] = k.iter().enumerate().map(|(i, kv)| kv * data[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = k.iter().enumerate().map(|(i, kv)| kv * tmp[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Mean structural similarity on luma, 11x11 Gaussian window (σ = 1.5).
/// Windows touching an invalid pixel are skipped.
pub fn ssim(a: &Frame, b: &Frame, mask: &ValidityMask) -> Result<f64> {
    check_frames(a, b, mask)?;
    let (w, h) = a.dims();
    let side = 2 * SSIM_RADIUS + 1;
    if w < side || h < side {
        return Err(Error::InvalidInput(format!("ssim needs frames of at least {side}x{side}")));
    }
    let la = a.luma();
    let lb = b.luma();
    let k = gaussian_kernel_exact(SSIM_SIGMA, SSIM_RADIUS);
    let prod = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p * q).collect::<Vec<_>>();
    let mu_a = filter_valid(&la, w, h, &k);
    let mu_b = filter_valid(&lb, w, h, &k);
    let saa = filter_valid(&prod(&la, &la), w, h, &k);
    let sbb = filter_valid(&prod(&lb, &lb), w, h, &k);
    let sab = filter_valid(&prod(&la, &lb), w, h, &k);

    let invalid = invalid_counts(mask);
    let (ow, oh) = (w - 2 * SSIM_RADIUS, h - 2 * SSIM_RADIUS);
    let (mut sum, mut n) = (0.0, 0usize);
    for y in 0..oh {
        for x in 0..ow {
            if window_sum(&invalid, w, x, y, side) > 0 {
                continue;
            }
            let i = y * ow + x;
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = saa[i] - ma * ma;
            let vb = sbb[i] - mb * mb;
            let cov = sab[i] - ma * mb;
            sum += ((2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2))
                / ((ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2));
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::EmptyValidRegion);
    }
    Ok(sum / n as f64)
}

fn gaussian_kernel_exact(sigma: f64, radius: usize) -> Vec<f64> {
    let k = gaussian_kernel(sigma);
    let r = k.len() / 2;
    if r == radius {
        return k;
    }
    let mut k: Vec<f64> = (0..=2 * radius)
        .map(|i| {
            let d = i as f64 - radius as f64;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Summed-area table of invalid pixels, `(w+1) x (h+1)`.
fn invalid_counts(mask: &ValidityMask) -> Vec<usize> {
    let (w, h) = mask.dims();
    let mut t = vec![0usize; (w + 1) * (h + 1)];
    for y in 0..h {
        for x in 0..w {
            let bad = usize::from(!mask.get(x, y));
            t[(y + 1) * (w + 1) + x + 1] = bad + t[y * (w + 1) + x + 1] + t[(y + 1) * (w + 1) + x] - t[y * (w + 1) + x];
        }
    }
    t
}

fn window_sum(t: &[usize], w: usize, x: usize, y: usize, side: usize) -> usize {
    let s = w + 1;
    t[(y + side) * s + x + side] + t[y * s + x] - t[y * s + x + side] - t[(y + side) * s + x]
}

/// Mean endpoint error over jointly valid pixels.
pub fn epe(flow: &FlowField, gt: &FlowField) -> Result<f64> {
    let d = flow.sub(gt)?;
    let m = d.valid_magnitudes();
    if m.is_empty() {
        return Err(Error::EmptyValidRegion);
    }
    Ok(m.iter().sum::<f64>() / m.len() as f64)
}

/// Global motion between two consecutive frames, in absolute pixel
/// coordinates (origin at the top-left pixel): `q = s R(θ) p + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairTransform {
    pub tx: f64,
    pub ty: f64,
    pub rotation: f64,
    pub scale: f64,
    /// Linear part of the least-squares affine fit, row-major.
    pub linear: [[f64; 2]; 2],
}

impl PairTransform {
    pub fn identity() -> Self {
        Self {
            tx: 0.0,
            ty: 0.0,
            rotation: 0.0,
            scale: 1.0,
            linear: [[1.0, 0.0], [0.0, 1.0]],
        }
    }

    /// Ratio of the smaller to the larger singular value of the affine
    /// linear part.
    pub fn anisotropy(&self) -> f64 {
        let [[a, b], [c, d]] = self.linear;
        // singular values of a 2x2 from its Frobenius norm and determinant
        let f = a * a + b * b + c * c + d * d;
        let det = (a * d - b * c).abs();
        let disc = (f * f - 4.0 * det * det).max(0.0).sqrt();
        let smax = ((f + disc) / 2.0).sqrt();
        let smin = ((f - disc) / 2.0).max(0.0).sqrt();
        if smax == 0.0 {
            0.0
        } else {
            smin / smax
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraPath {
    pub transforms: Vec<PairTransform>,
}

impl CameraPath {
    pub fn len(&self) -> usize {
        self.transforms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transforms.is_empty()
    }
}

/// Least-squares similarity and affine fit to point correspondences.
pub fn fit_transform(points: &[([f64; 2], [f64; 2])]) -> Result<PairTransform> {
    if points.len() < 3 {
        return Err(Error::DegenerateFit);
    }
    let n = points.len() as f64;
    let (mut px, mut py, mut qx, mut qy) = (0.0, 0.0, 0.0, 0.0);
    for (p, q) in points {
        px += p[0];
        py += p[1];
        qx += q[0];
        qy += q[1];
    }
    let (px, py, qx, qy) = (px / n, py / n, qx / n, qy / n);
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    let (mut a_num, mut b_num) = (0.0, 0.0);
    let (mut uxx, mut uxy, mut vxx, mut vxy) = (0.0, 0.0, 0.0, 0.0);
    for (p, q) in points {
        let (x, y) = (p[0] - px, p[1] - py);
        let (u, v) = (q[0] - qx, q[1] - qy);
        sxx += x * x;
        sxy += x * y;
        syy += y * y;
        a_num += x * u + y * v;
        b_num += x * v - y * u;
        uxx += u * x;
        uxy += u * y;
        vxx += v * x;
        vxy += v * y;
    }
    let spread = sxx + syy;
    let det = sxx * syy - sxy * sxy;
    if spread < 1e-9 || det.abs() < 1e-9 * spread * spread {
        return Err(Error::DegenerateFit);
    }
    let a = a_num / spread;
    let b = b_num / spread;
    let tx = qx - (a * px - b * py);
    let ty = qy - (b * px + a * py);
    // affine: [u v] = A [x y], normal equations with the same scatter matrix
    let inv = [[syy / det, -sxy / det], [-sxy / det, sxx / det]];
    let row = |cx: f64, cy: f64| [cx * inv[0][0] + cy * inv[1][0], cx * inv[0][1] + cy * inv[1][1]];
    let linear = [row(uxx, uxy), row(vxx, vxy)];
    Ok(PairTransform {
        tx,
        ty,
        rotation: b.atan2(a),
        scale: a.hypot(b),
        linear,
    })
}

fn transform_residual(t: &PairTransform, p: [f64; 2], q: [f64; 2]) -> f64 {
    let (s, c) = t.rotation.sin_cos();
    let x = t.scale * (c * p[0] - s * p[1]) + t.tx;
    let y = t.scale * (s * p[0] + c * p[1]) + t.ty;
    (x - q[0]).hypot(y - q[1])
}

/// Fits the global motion of a dense flow. One refit drops correspondences
/// whose residual exceeds `max(1 px, 3 x median)`.
pub fn fit_flow_transform(flow: &FlowField) -> Result<PairTransform> {
    let (w, h) = flow.dims();
    let mut points = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if let Some((u, v)) = flow.get(x, y) {
                let p = [x as f64, y as f64];
                points.push((p, [p[0] + u, p[1] + v]));
            }
        }
    }
    let first = fit_transform(&points)?;
    let mut res: Vec<f64> = points.iter().map(|(p, q)| transform_residual(&first, *p, *q)).collect();
    let mut sorted = res.clone();
    sorted.sort_by(f64::total_cmp);
    let cut = (3.0 * sorted[sorted.len() / 2]).max(1.0);
    let inliers: Vec<_> = points
        .iter()
        .zip(res.drain(..))
        .filter(|(_, r)| *r <= cut)
        .map(|(pq, _)| *pq)
        .collect();
    if inliers.len() == points.len() {
        return Ok(first);
    }
    fit_transform(&inliers)
}

/// Global motion of every consecutive pair of frames.
pub fn camera_path(video: &[Frame], cfg: &FlowConfig) -> Result<CameraPath> {
    camera_path_masked(video, None, cfg)
}

/// [`camera_path`] restricted to per-frame validity masks; flows are
/// trusted only away from mask boundaries.
pub fn camera_path_masked(video: &[Frame], masks: Option<&[ValidityMask]>, cfg: &FlowConfig) -> Result<CameraPath> {
    camera_path_from_flows(&pair_flows(video, masks, cfg)?)
}

/// Flow of every consecutive pair of frames. With `masks`, each flow keeps
/// only pixels at least `window / 2 + 1` away from the pair's invalid region.
pub fn pair_flows(video: &[Frame], masks: Option<&[ValidityMask]>, cfg: &FlowConfig) -> Result<Vec<FlowField>> {
    if video.len() < 2 {
        return Err(Error::PathTooShort {
            len: video.len().saturating_sub(1),
            min: 1,
        });
    }
    if let Some(m) = masks {
        if m.len() != video.len() {
            return Err(Error::LengthMismatch {
                expected: video.len(),
                found: m.len(),
            });
        }
    }
    let margin = cfg.window / 2 + 1;
    let pair = |i: usize| -> Result<FlowField> {
        let flow = estimate_flow(&video[i], &video[i + 1], cfg)?;
        match masks {
            Some(m) => flow.masked(&shrink(&m[i].and(&m[i + 1])?, margin)),
            None => Ok(flow),
        }
    };
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..video.len() - 1).into_par_iter().map(pair).collect()
    }
    #[cfg(not(feature = "parallel"))]
    (0..video.len() - 1).map(pair).collect()
}

/// Global motion fitted to each pair flow.
pub fn camera_path_from_flows(flows: &[FlowField]) -> Result<CameraPath> {
    let transforms = flows.iter().map(fit_flow_transform).collect::<Result<Vec<_>>>()?;
    Ok(CameraPath { transforms })
}

/// Removes every valid pixel within `r` of an invalid one or the border.
pub(crate) fn shrink(mask: &ValidityMask, r: usize) -> ValidityMask {
    let (w, h) = mask.dims();
    let counts = invalid_counts(mask);
    let side = 2 * r + 1;
    let mut out = ValidityMask::empty(w, h);
    if w < side || h < side {
        return out;
    }
    for y in r..h - r {
        for x in r..w - r {
            if window_sum(&counts, w, x - r, y - r, side) == 0 {
                out.set(x, y, true);
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilityTriple {
    pub cropping: f64,
    pub distortion: f64,
    pub stability: f64,
}

/// Fraction of one-sided spectral energy in the lowest non-DC bins.
/// An all-zero sequence counts as perfectly stable.
pub fn low_frequency_ratio(seq: &[f64]) -> f64 {
    let n = seq.len();
    let energy = |k: usize| {
        let (mut re, mut im) = (0.0, 0.0);
        for (t, &x) in seq.iter().enumerate() {
            let ang = -std::f64::consts::TAU * (k * t) as f64 / n as f64;
            re += x * ang.cos();
            im += x * ang.sin();
        }
        re * re + im * im
    };
    let spectrum: Vec<f64> = (1..=n / 2).map(energy).collect();
    let total: f64 = spectrum.iter().sum();
    if total <= 1e-24 {
        return 1.0;
    }
    let low: f64 = spectrum.iter().take(LOW_FREQ_BINS).sum();
    (low / total).clamp(0.0, 1.0)
}

/// Cropping ratio, distortion value and stability score of a camera path.
pub fn stability_triple(path: &CameraPath) -> Result<StabilityTriple> {
    let n = path.len();
    if n < MIN_PATH_LEN {
        return Err(Error::PathTooShort {
            len: n,
            min: MIN_PATH_LEN,
        });
    }
    let t = &path.transforms;
    let cropping = t.iter().map(|p| (1.0 / p.scale).min(1.0)).sum::<f64>() / n as f64;
    let distortion = t.iter().map(PairTransform::anisotropy).sum::<f64>() / n as f64;
    let tx: Vec<f64> = t.iter().map(|p| p.tx).collect();
    let ty: Vec<f64> = t.iter().map(|p| p.ty).collect();
    let rot: Vec<f64> = t.iter().map(|p| p.rotation).collect();
    let stability = (low_frequency_ratio(&tx) + low_frequency_ratio(&ty) + low_frequency_ratio(&rot)) / 3.0;
    Ok(StabilityTriple {
        cropping: cropping.clamp(0.0, 1.0),
        distortion: distortion.clamp(0.0, 1.0),
        stability,
    })
}

/// Mean over jointly valid pixels of the temporal standard deviation of the
/// flow vectors, `sqrt(var(u) + var(v))` with population variances.
pub fn jitter_score(flows: &[FlowField]) -> Result<f64> {
    if flows.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "jitter needs at least 2 fields, got {}",
            flows.len()
        )));
    }
    let dims = flows[0].dims();
    for f in flows {
        check_dims(dims, f.dims())?;
    }
    let m = flows.len() as f64;
    let (mut sum, mut count) = (0.0, 0usize);
    for i in 0..dims.0 * dims.1 {
        if !flows.iter().all(|f| f.valid().as_slice()[i]) {
            continue;
        }
        // shifted by the first sample so identical fields give exactly zero
        let (u0, v0) = (flows[0].u()[i], flows[0].v()[i]);
        let mu = flows.iter().map(|f| f.u()[i] - u0).sum::<f64>() / m;
        let mv = flows.iter().map(|f| f.v()[i] - v0).sum::<f64>() / m;
        let var = flows
            .iter()
            .map(|f| (f.u()[i] - u0 - mu).powi(2) + (f.v()[i] - v0 - mv).powi(2))
            .sum::<f64>()
            / m;
        sum += var.sqrt();
        count += 1;
    }
    if count == 0 {
        return Err(Error::EmptyValidRegion);
    }
    Ok(sum / count as f64)
}

/// One row of a benchmark table. Field order is the CSV column order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub psnr: f64,
    pub ssim: f64,
    pub epe: f64,
    pub cropping: f64,
    pub distortion: f64,
    pub stability: f64,
    pub jitter: f64,
    pub frames: usize,
    pub valid_pixels: usize,
}

pub const REPORT_COLUMNS: [&str; 9] = [
    "psnr",
    "ssim",
    "epe",
    "cropping",
    "distortion",
    "stability",
    "jitter",
    "frames",
    "valid_pixels",
];

impl MetricReport {
    pub fn values(&self) -> [String; 9] {
        [
            fmt(self.psnr),
            fmt(self.ssim),
            fmt(self.epe),
            fmt(self.cropping),
            fmt(self.distortion),
            fmt(self.stability),
            fmt(self.jitter),
            self.frames.to_string(),
            self.valid_pixels.to_string(),
        ]
    }
}

fn fmt(v: f64) -> String {
    format!("{v:.6}")
}

/// A labelled report, as stored in benchmark outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledReport {
    pub video: String,
    #[serde(flatten)]
    pub report: MetricReport,
}

/// CSV with a `video` column, the [`REPORT_COLUMNS`], then `config_hash`.
pub fn reports_csv(rows: &[LabeledReport], config_hash: &str) -> String {
    let mut out = String::from("video,");
    out.push_str(&REPORT_COLUMNS.join(","));
    out.push_str(",config_hash\n");
    for r in rows {
        out.push_str(&r.video);
        for v in r.report.values() {
            out.push(',');
            out.push_str(&v);
        }
        out.push(',');
        out.push_str(config_hash);
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportDocument {
    pub config_hash: String,
    pub reports: Vec<LabeledReport>,
}

pub fn write_reports(rows: &[LabeledReport], config_hash: &str, csv_path: &Path, json_path: &Path) -> Result<()> {
    crate::io::write_text(&reports_csv(rows, config_hash), csv_path)?;
    crate::io::write_json(
        &ReportDocument {
            config_hash: config_hash.to_string(),
            reports: rows.to_vec(),
        },
        json_path,
    )
}
