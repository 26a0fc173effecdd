//! Procedural planar source sequences.
//!
//! Benchmarks need textured video with known motion. A texture canvas is
//! built once from blurred seeded noise and frames are cropped from it at
//! sub-pixel offsets.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::flow::gaussian_kernel;
use crate::raster::Frame;

/// Band-limited noise texture stored in floating point.
#[derive(Debug, Clone)]
pub struct TextureCanvas {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl TextureCanvas {
    /// Two octaves of blurred white noise (`sigma` and `3 sigma`), scaled to
    /// mean 128 and standard deviation 40.
    pub fn new(width: usize, height: usize, sigma: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let fine = blur(&noise(width, height, &mut rng), width, height, sigma);
        let coarse = blur(&noise(width, height, &mut rng), width, height, 3.0 * sigma);
        let fs = std_dev(&fine);
        let cs = std_dev(&coarse);
        let mut data: Vec<f64> = fine
            .iter()
            .zip(&coarse)
            .map(|(f, c)| f / fs + 0.7 * c / cs)
            .collect();
        let s = std_dev(&data);
        let m = data.iter().sum::<f64>() / data.len() as f64;
        data.iter_mut().for_each(|v| *v = 128.0 + 40.0 * (*v - m) / s);
        Self { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Bilinear sample with clamped borders.
    pub fn sample(&self, x: f64, y: f64) -> f64 {
        let x = x.clamp(0.0, (self.width - 1) as f64);
        let y = y.clamp(0.0, (self.height - 1) as f64);
        let x0 = (x.floor() as usize).min(self.width - 2);
        let y0 = (y.floor() as usize).min(self.height - 2);
        let (fx, fy) = (x - x0 as f64, y - y0 as f64);
        let at = |xx: usize, yy: usize| self.data[yy * self.width + xx];
        let top = at(x0, y0) * (1.0 - fx) + at(x0 + 1, y0) * fx;
        let bot = at(x0, y0 + 1) * (1.0 - fx) + at(x0 + 1, y0 + 1) * fx;
        top * (1.0 - fy) + bot * fy
    }

    /// `frame(x, y) = texture(x + ox, y + oy)`.
    pub fn crop(&self, ox: f64, oy: f64, width: usize, height: usize) -> Frame {
        Frame::from_fn_gray(width, height, |x, y| self.sample(x as f64 + ox, y as f64 + oy))
            .expect("crop dimensions are valid")
    }

    /// Crop rotated by `angle` radians about the crop center.
    pub fn crop_rotated(&self, ox: f64, oy: f64, width: usize, height: usize, angle: f64) -> Frame {
        let (cx, cy) = ((width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0);
        let (s, c) = angle.sin_cos();
        Frame::from_fn_gray(width, height, |x, y| {
            let (dx, dy) = (x as f64 - cx, y as f64 - cy);
            let rx = c * dx - s * dy + cx;
            let ry = s * dx + c * dy + cy;
            self.sample(rx + ox, ry + oy)
        })
        .expect("crop dimensions are valid")
    }
}

fn noise(w: usize, h: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..w * h).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

fn blur(data: &[f64], w: usize, h: usize, sigma: f64) -> Vec<f64> {
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let (wi, hi) = (w as isize, h as isize);
    let mut tmp = vec![0.0; w * h];
    for y in 0..hi {
        for x in 0..wi {
            tmp[(y * wi + x) as usize] = k
                .iter()
                .enumerate()
                .map(|(j, kv)| kv * data[(y * wi + (x + j as isize - r).rem_euclid(wi)) as usize])
                .sum();
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..hi {
        for x in 0..wi {
            out[(y * wi + x) as usize] = k
                .iter()
                .enumerate()
                .map(|(j, kv)| kv * tmp[((y + j as isize - r).rem_euclid(hi) * wi + x) as usize])
                .sum();
        }
    }
    out
}

fn std_dev(v: &[f64]) -> f64 {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64).sqrt()
}

/// A panning camera over a procedural texture.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct SceneConfig {
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    /// Pan velocity in pixels per frame.
    pub velocity: [f64; 2],
    /// Texture blur in pixels; larger is smoother.
    pub texture_sigma: f64,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            width: 256,
            height: 256,
            frames: 24,
            velocity: [2.0, 1.0],
            texture_sigma: 2.5,
            seed: 1,
        }
    }
}

/// Frames of a constant-velocity pan, plus the per-frame offsets.
pub fn pan_sequence(cfg: &SceneConfig) -> (Vec<Frame>, Vec<[f64; 2]>) {
    let span_x = (cfg.velocity[0].abs() * cfg.frames as f64).ceil() as usize;
    let span_y = (cfg.velocity[1].abs() * cfg.frames as f64).ceil() as usize;
    let margin = 8;
    let canvas = TextureCanvas::new(
        cfg.width + span_x + 2 * margin,
        cfg.height + span_y + 2 * margin,
        cfg.texture_sigma,
        cfg.seed,
    );
    let start_x = margin as f64 + if cfg.velocity[0] < 0.0 { span_x as f64 } else { 0.0 };
    let start_y = margin as f64 + if cfg.velocity[1] < 0.0 { span_y as f64 } else { 0.0 };
    let offsets: Vec<[f64; 2]> = (0..cfg.frames)
        .map(|t| {
            [
                start_x + cfg.velocity[0] * t as f64,
                start_y + cfg.velocity[1] * t as f64,
            ]
        })
        .collect();
    let frames = offsets
        .iter()
        .map(|o| canvas.crop(o[0], o[1], cfg.width, cfg.height))
        .collect();
    (frames, offsets)
}

/// Deterministic set of `count` pan scenes with varied headings.
pub fn benchmark_scenes(count: usize, frames: usize, width: usize, height: usize, seed: u64) -> Vec<SceneConfig> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let angle: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            let speed: f64 = rng.gen_range(1.5..3.0);
            SceneConfig {
                width,
                height,
                frames,
                velocity: [speed * angle.cos(), speed * angle.sin()],
                texture_sigma: 2.5,
                seed: seed.wrapping_mul(1_000_003).wrapping_add(i as u64),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pan_frames_are_shifted_crops() {
        let cfg = SceneConfig {
            width: 32,
            height: 24,
            frames: 4,
            velocity: [2.0, -1.0],
            ..SceneConfig::default()
        };
        let (frames, offsets) = pan_sequence(&cfg);
        assert_eq!(frames.len(), 4);
        assert_eq!(offsets[1][0] - offsets[0][0], 2.0);
        assert_eq!(offsets[1][1] - offsets[0][1], -1.0);
        // integer velocity: frame t+1 at x equals frame t at x + 2, y - 1
        for y in 1..24 {
            for x in 0..30 {
                assert_eq!(frames[1].get(x, y, 0), frames[0].get(x + 2, y - 1, 0));
            }
        }
    }

    #[test]
    fn canvas_is_deterministic_and_textured() {
        let a = TextureCanvas::new(64, 64, 2.0, 9);
        let b = TextureCanvas::new(64, 64, 2.0, 9);
        assert_eq!(a.data, b.data);
        let f = a.crop(0.0, 0.0, 64, 64);
        let min = *f.data().iter().min().unwrap();
        let max = *f.data().iter().max().unwrap();
        assert!(max - min > 100);
    }
}
