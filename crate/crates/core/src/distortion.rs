//! Polynomial radial fisheye model.
//!
//! A distorted (fisheye) point `pd` maps to its undistorted (perspective)
//! counterpart through
//!
//! ```text
//! pu = c + (1 + k1 r^2 + k2 r^4 + k3 r^6) (pd - c),   r = |pd - c| / norm_radius
//! ```
//!
//! The radius is normalized so the coefficients do not depend on frame size.
//! The inverse mapping has no closed form and is solved per point on the
//! scalar equation `r_u = g(r_d)` with `g(r) = r (1 + k1 r^2 + k2 r^4 + k3 r^6)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{FlowField, ValidityMask};

/// Upper bound on the normalized radius considered by [`valid_radius`].
///
/// Corner-to-center distance of a square frame measured in half-widths.
pub const MAX_NORM_RADIUS: f64 = std::f64::consts::SQRT_2;

/// Sampling step of the monotonicity scan.
pub const MONOTONICITY_STEP: f64 = 1e-3;

/// Sampled parameters must stay monotone at least out to the frame
/// half-diagonal, which is `1.0` when `norm_radius` is the half-diagonal.
pub const GUARD_RADIUS: f64 = 1.0;

const INVERSION_TOL: f64 = 1e-12;
const INVERSION_MAX_ITER: usize = 50;

/// Continuous pixel coordinate, origin at the top-left pixel center.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PixelCoord {
    pub x: f64,
    pub y: f64,
}

impl PixelCoord {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl std::ops::Add for PixelCoord {
    type Output = PixelCoord;
    fn add(self, o: PixelCoord) -> PixelCoord {
        PixelCoord::new(self.x + o.x, self.y + o.y)
    }
}

impl std::ops::Sub for PixelCoord {
    type Output = PixelCoord;
    fn sub(self, o: PixelCoord) -> PixelCoord {
        PixelCoord::new(self.x - o.x, self.y - o.y)
    }
}

impl std::ops::Mul<f64> for PixelCoord {
    type Output = PixelCoord;
    fn mul(self, s: f64) -> PixelCoord {
        PixelCoord::new(self.x * s, self.y * s)
    }
}

/// Radial polynomial coefficients plus the distortion center.
///
/// Serialized as `{"k":[k1,k2,k3],"center":[x0,y0],"norm_radius":v}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistortionParams {
    pub k: [f64; 3],
    pub center: [f64; 2],
    pub norm_radius: f64,
}

impl DistortionParams {
    pub fn new(k: [f64; 3], center: [f64; 2], norm_radius: f64) -> Result<Self> {
        if !(norm_radius > 0.0 && norm_radius.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "norm_radius must be positive and finite, got {norm_radius}"
            )));
        }
        if k.iter().chain(center.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite distortion parameter".into()));
        }
        Ok(Self {
            k,
            center,
            norm_radius,
        })
    }

    /// Coefficients `k` centered on a `width x height` frame, normalized by
    /// its half-diagonal.
    pub fn for_frame(k: [f64; 3], width: usize, height: usize) -> Self {
        Self {
            k,
            center: frame_center(width, height),
            norm_radius: half_diagonal(width, height),
        }
    }

    /// The same lens on a frame resized from `from` to `to` pixels, with
    /// pixel-center aligned grids.
    pub fn resized(&self, from: (usize, usize), to: (usize, usize)) -> Self {
        let sx = to.0 as f64 / from.0 as f64;
        let sy = to.1 as f64 / from.1 as f64;
        Self {
            k: self.k,
            center: [(self.center[0] + 0.5) * sx - 0.5, (self.center[1] + 0.5) * sy - 0.5],
            norm_radius: self.norm_radius * half_diagonal(to.0, to.1) / half_diagonal(from.0, from.1),
        }
    }

    pub fn identity(width: usize, height: usize) -> Self {
        Self::for_frame([0.0; 3], width, height)
    }

    pub fn center(&self) -> PixelCoord {
        PixelCoord::new(self.center[0], self.center[1])
    }

    /// `g(r) = r * radial_scale(r)`.
    pub fn radial_map(&self, r: f64) -> f64 {
        r * radial_scale(r, self)
    }

    /// `g'(r) = 1 + 3 k1 r^2 + 5 k2 r^4 + 7 k3 r^6`.
    pub fn radial_map_derivative(&self, r: f64) -> f64 {
        let r2 = r * r;
        let [k1, k2, k3] = self.k;
        1.0 + r2 * (3.0 * k1 + r2 * (5.0 * k2 + r2 * 7.0 * k3))
    }

    /// Whether the radial map is monotone out to [`GUARD_RADIUS`].
    pub fn passes_guard(&self) -> bool {
        valid_radius(self) >= GUARD_RADIUS
    }

    pub fn is_identity(&self) -> bool {
        self.k == [0.0; 3]
    }

    /// Precomputes the invertible range so many points can be inverted cheaply.
    pub fn inverse(&self) -> RadialInverse {
        RadialInverse::new(*self)
    }
}

/// Geometric center of a pixel grid.
pub fn frame_center(width: usize, height: usize) -> [f64; 2] {
    [(width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0]
}

/// Half of the frame diagonal, the default radius normalizer.
pub fn half_diagonal(width: usize, height: usize) -> f64 {
    (width as f64).hypot(height as f64) / 2.0
}

/// `1 + k1 r^2 + k2 r^4 + k3 r^6`.
pub fn radial_scale(r_norm: f64, params: &DistortionParams) -> f64 {
    let r2 = r_norm * r_norm;
    let [k1, k2, k3] = params.k;
    1.0 + k1 * r2 + k2 * r2 * r2 + k3 * r2 * r2 * r2
}

/// Maps a fisheye point to the perspective image.
pub fn undistorted_of(pd: PixelCoord, params: &DistortionParams) -> PixelCoord {
    let c = params.center();
    let offset = pd - c;
    let r = offset.norm() / params.norm_radius;
    c + offset * radial_scale(r, params)
}

/// Maps a perspective point back into the fisheye image.
pub fn distorted_of(pu: PixelCoord, params: &DistortionParams) -> Result<PixelCoord> {
    params.inverse().distorted_of(pu)
}

/// Largest sampled radius up to which `g` stays strictly increasing.
///
/// Scans `[0, MAX_NORM_RADIUS]` on a `1e-3` grid and stops before the first
/// sample where `g'` is not positive.
pub fn valid_radius(params: &DistortionParams) -> f64 {
    if params.radial_map_derivative(0.0) <= 0.0 {
        return 0.0;
    }
    let steps = (MAX_NORM_RADIUS / MONOTONICITY_STEP).floor() as usize;
    let mut last = 0.0;
    for i in 1..=steps {
        let r = i as f64 * MONOTONICITY_STEP;
        if params.radial_map_derivative(r) <= 0.0 {
            return last;
        }
        last = r;
    }
    if params.radial_map_derivative(MAX_NORM_RADIUS) > 0.0 {
        MAX_NORM_RADIUS
    } else {
        last
    }
}

/// Inverse radial mapping with the invertible range cached.
#[derive(Debug, Clone, Copy)]
pub struct RadialInverse {
    params: DistortionParams,
    r_valid: f64,
    g_valid: f64,
}

impl RadialInverse {
    pub fn new(params: DistortionParams) -> Self {
        let r_valid = valid_radius(&params);
        Self {
            params,
            r_valid,
            g_valid: params.radial_map(r_valid),
        }
    }

    pub fn params(&self) -> &DistortionParams {
        &self.params
    }

    pub fn valid_radius(&self) -> f64 {
        self.r_valid
    }

    /// Largest undistorted radius that can be inverted.
    pub fn max_undistorted_radius(&self) -> f64 {
        self.g_valid
    }

    /// Solves `g(r_d) = r_u` on `[0, valid_radius]`.
    ///
    /// Newton steps that leave the bracket, or hit a non-positive slope, fall
    /// back to bisection.
    pub fn solve_radius(&self, r_u: f64) -> Result<f64> {
        if r_u == 0.0 {
            return Ok(0.0);
        }
        if !(r_u > 0.0 && r_u <= self.g_valid) {
            return Err(Error::NonInvertible {
                radius: r_u,
                limit: self.g_valid,
            });
        }
        let p = &self.params;
        let (mut lo, mut hi) = (0.0, self.r_valid);
        let mut r = r_u.min(hi);
        for _ in 0..INVERSION_MAX_ITER {
            let f = p.radial_map(r) - r_u;
            if f.abs() <= INVERSION_TOL {
                return Ok(r);
            }
            if f > 0.0 {
                hi = r;
            } else {
                lo = r;
            }
            let slope = p.radial_map_derivative(r);
            let newton = r - f / slope;
            r = if slope > 0.0 && newton > lo && newton < hi {
                newton
            } else {
                0.5 * (lo + hi)
            };
            if hi - lo <= INVERSION_TOL {
                return Ok(r);
            }
        }
        Err(Error::NoConvergence {
            iterations: INVERSION_MAX_ITER,
        })
    }

    pub fn distorted_of(&self, pu: PixelCoord) -> Result<PixelCoord> {
        if !pu.is_finite() {
            return Err(Error::InvalidInput("non-finite point".into()));
        }
        let c = self.params.center();
        let offset = pu - c;
        let dist = offset.norm();
        if dist == 0.0 {
            return Ok(c);
        }
        let r_u = dist / self.params.norm_radius;
        let r_d = self.solve_radius(r_u)?;
        Ok(c + offset * (r_d / r_u))
    }
}

/// Backward-warp field on the corrected grid: `W(pu) = distorted_of(pu) - pu`.
///
/// A corrected frame is `fisheye(pu + W(pu))`. Pixels whose radius cannot be
/// inverted are flagged invalid.
pub fn intra_frame_flow(params: &DistortionParams, width: usize, height: usize) -> Result<FlowField> {
    if width < 2 || height < 2 {
        return Err(Error::InvalidInput(format!(
            "flow field must be at least 2x2, got {width}x{height}"
        )));
    }
    let inv = params.inverse();
    let n = width * height;
    let mut u = vec![0.0; n];
    let mut v = vec![0.0; n];
    let mut valid = vec![false; n];
    let fill_row = |y: usize, u: &mut [f64], v: &mut [f64], valid: &mut [bool]| {
        for x in 0..width {
            let pu = PixelCoord::new(x as f64, y as f64);
            if let Ok(pd) = inv.distorted_of(pu) {
                u[x] = pd.x - pu.x;
                v[x] = pd.y - pu.y;
                valid[x] = true;
            }
        }
    };
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        u.par_chunks_mut(width)
            .zip(v.par_chunks_mut(width))
            .zip(valid.par_chunks_mut(width))
            .enumerate()
            .for_each(|(y, ((u, v), valid))| fill_row(y, u, v, valid));
    }
    #[cfg(not(feature = "parallel"))]
    {
        u.chunks_mut(width)
            .zip(v.chunks_mut(width))
            .zip(valid.chunks_mut(width))
            .enumerate()
            .for_each(|(y, ((u, v), valid))| fill_row(y, u, v, valid));
    }
    FlowField::new(width, height, u, v, ValidityMask::from_vec(width, height, valid)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn horner_scale(r: f64, k: [f64; 3]) -> f64 {
        let r2 = r * r;
        1.0 + r2 * (k[0] + r2 * (k[1] + r2 * k[2]))
    }

    #[test]
    fn resizing_keeps_centered_lens_centered() {
        let p = DistortionParams::for_frame([-0.2, 0.01, 0.0], 256, 192);
        assert_eq!(p.resized((256, 192), (128, 96)), DistortionParams::for_frame(p.k, 128, 96));
        let off = DistortionParams::new([-0.1, 0.0, 0.0], [100.5, 60.0], 160.0).unwrap();
        let half = off.resized((256, 192), (128, 96));
        assert_abs_diff_eq!(half.center[0], 50.0, epsilon = 1e-12);
        assert_abs_diff_eq!(half.center[1], 29.75, epsilon = 1e-12);
        assert_abs_diff_eq!(half.norm_radius, 80.0, epsilon = 1e-12);
    }

    #[test]
    fn radial_scale_examples() {
        let p = DistortionParams::for_frame([-0.3, 0.02, 0.001], 256, 256);
        assert_eq!(radial_scale(0.0, &p), 1.0);
        let zero = DistortionParams::identity(256, 256);
        assert_eq!(radial_scale(0.5, &zero), 1.0);
        let p = DistortionParams::for_frame([-0.2, 0.05, 0.0], 256, 256);
        let oracle = horner_scale(0.5, p.k);
        assert_abs_diff_eq!(oracle, 0.953125, epsilon = 1e-15);
        assert_abs_diff_eq!(radial_scale(0.5, &p), 0.953125, epsilon = 1e-15);
    }

    #[test]
    fn undistorted_hand_example() {
        let p = DistortionParams::new([-0.2, 0.0, 0.0], [128.0, 128.0], 181.02).unwrap();
        let pu = undistorted_of(PixelCoord::new(218.51, 128.0), &p);
        // r = 90.51 / 181.02 = 0.5, scale 0.95
        assert_abs_diff_eq!(pu.x, 128.0 + 90.51 * 0.95, epsilon = 1e-9);
        assert_abs_diff_eq!(pu.x, 213.9845, epsilon = 1e-9);
        assert_abs_diff_eq!(pu.y, 128.0, epsilon = 1e-12);
    }

    #[test]
    fn fixed_points_and_identity() {
        let p = DistortionParams::for_frame([-0.25, 0.01, 0.0], 256, 256);
        let c = p.center();
        assert_eq!(undistorted_of(c, &p), c);
        assert_eq!(distorted_of(c, &p).unwrap(), c);
        let id = DistortionParams::identity(64, 48);
        let q = PixelCoord::new(3.25, 40.5);
        assert_eq!(undistorted_of(q, &id), q);
        let back = distorted_of(q, &id).unwrap();
        assert_abs_diff_eq!(back.x, q.x, epsilon = 1e-12);
        assert_abs_diff_eq!(back.y, q.y, epsilon = 1e-12);
    }

    #[test]
    fn valid_radius_examples() {
        let id = DistortionParams::identity(256, 256);
        assert_eq!(valid_radius(&id), MAX_NORM_RADIUS);

        let p = DistortionParams::for_frame([-0.2, 0.0, 0.0], 256, 256);
        let root = (1.0f64 / 0.6).sqrt();
        let r = valid_radius(&p);
        assert!(r <= root && root - r <= MONOTONICITY_STEP, "{r} vs {root}");

        let p = DistortionParams::for_frame([-1.0, 0.0, 0.0], 256, 256);
        let root = 1.0 / 3.0f64.sqrt();
        let r = valid_radius(&p);
        assert!(r <= root && root - r <= MONOTONICITY_STEP, "{r} vs {root}");
    }

    #[test]
    fn inversion_rejects_out_of_range() {
        let p = DistortionParams::for_frame([-0.3, 0.0, 0.0], 256, 256);
        let far = PixelCoord::new(255.0, 255.0);
        assert!(matches!(distorted_of(far, &p), Err(Error::NonInvertible { .. })));
    }

    #[test]
    fn new_rejects_bad_radius() {
        assert!(DistortionParams::new([0.0; 3], [0.0, 0.0], 0.0).is_err());
        assert!(DistortionParams::new([f64::NAN, 0.0, 0.0], [0.0, 0.0], 1.0).is_err());
    }

    #[test]
    fn json_layout() {
        let p = DistortionParams::new([-0.1, 0.02, -0.003], [127.5, 127.25], 181.01933598375618).unwrap();
        let s = serde_json::to_string(&p).unwrap();
        assert_eq!(
            s,
            r#"{"k":[-0.1,0.02,-0.003],"center":[127.5,127.25],"norm_radius":181.01933598375618}"#
        );
        let back: DistortionParams = serde_json::from_str(&s).unwrap();
        assert_eq!(back, p);
        assert!(serde_json::from_str::<DistortionParams>(
            r#"{"k":[0,0,0],"center":[0,0],"norm_radius":1,"extra":1}"#
        )
        .is_err());
    }

    #[test]
    fn zero_coefficients_give_zero_flow() {
        let w = intra_frame_flow(&DistortionParams::identity(32, 24), 32, 24).unwrap();
        assert!(w.u().iter().chain(w.v()).all(|&d| d == 0.0));
        assert_eq!(w.valid().count(), 32 * 24);
    }

    #[test]
    fn flow_vanishes_at_center_and_is_rotationally_symmetric() {
        // Even size puts the center between pixels, so (x, y) has three mirror images.
        let (w, h) = (64, 64);
        let p = DistortionParams::for_frame([-0.2, 0.01, 0.0], w, h);
        let f = intra_frame_flow(&p, w, h).unwrap();
        for y in 0..h / 2 {
            for x in 0..w / 2 {
                let quad = [(x, y), (w - 1 - x, y), (x, h - 1 - y), (w - 1 - x, h - 1 - y)];
                let mags: Vec<f64> = quad
                    .iter()
                    .map(|&(qx, qy)| f.get(qx, qy).map(|(u, v)| u.hypot(v)).unwrap_or(-1.0))
                    .collect();
                for m in &mags[1..] {
                    assert_abs_diff_eq!(*m, mags[0], epsilon = 1e-6);
                }
            }
        }
        let odd = DistortionParams::for_frame([-0.2, 0.0, 0.0], 33, 33);
        let f = intra_frame_flow(&odd, 33, 33).unwrap();
        assert_eq!(f.get(16, 16), Some((0.0, 0.0)));
    }

    #[test]
    fn monotone_on_sample_grid() {
        let p = DistortionParams::for_frame([-0.3, 0.04, -0.008], 256, 256);
        let r_valid = valid_radius(&p);
        let mut prev = p.radial_map(0.0);
        let mut r = MONOTONICITY_STEP;
        while r <= r_valid {
            let g = p.radial_map(r);
            assert!(g > prev);
            prev = g;
            r += MONOTONICITY_STEP;
        }
    }

    proptest! {
        #[test]
        fn round_trip_distort_undistort(
            k1 in -0.33f64..-0.05,
            k2 in -0.05f64..0.05,
            k3 in -0.01f64..0.01,
            x in 0.0f64..255.0,
            y in 0.0f64..255.0,
        ) {
            let p = DistortionParams::for_frame([k1, k2, k3], 256, 256);
            prop_assume!(p.passes_guard());
            let pd = PixelCoord::new(x, y);
            let pu = undistorted_of(pd, &p);
            let back = distorted_of(pu, &p).unwrap();
            prop_assert!((back - pd).norm() <= 1e-6);
            // opposite order, from a point inside the invertible range
            if let Ok(pd2) = distorted_of(pd, &p) {
                prop_assert!((undistorted_of(pd2, &p) - pd).norm() <= 1e-6);
            }
        }
    }
}
