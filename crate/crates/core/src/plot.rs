//! Minimal line charts rendered straight to RGB frames.

use crate::error::{Error, Result};
use crate::raster::Frame;

/// Distinct series colors, cycled.
pub const PALETTE: [[u8; 3]; 6] = [
    [31, 119, 180],
    [214, 39, 40],
    [44, 160, 44],
    [255, 127, 14],
    [148, 103, 189],
    [23, 190, 207],
];

const MARGIN: usize = 24;

/// Plots every series against its sample index on shared axes. Gridlines
/// mark the data range quartiles.
pub fn line_chart(series: &[Vec<f64>], width: usize, height: usize) -> Result<Frame> {
    if width < 2 * MARGIN + 8 || height < 2 * MARGIN + 8 {
        return Err(Error::InvalidInput(format!("plot must be at least {0}x{0}", 2 * MARGIN + 8)));
    }
    let mut img = vec![255u8; width * height * 3];
    let finite = series.iter().flatten().copied().filter(|v| v.is_finite());
    let (mut lo, mut hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        lo = 0.0;
        hi = 1.0;
    }
    if hi - lo < 1e-12 {
        lo -= 0.5;
        hi += 0.5;
    }
    let longest = series.iter().map(Vec::len).max().unwrap_or(0).max(2);
    let (x0, x1) = (MARGIN as f64, (width - MARGIN) as f64);
    let (y0, y1) = ((height - MARGIN) as f64, MARGIN as f64);
    let to_px = |i: usize, v: f64| {
        (
            x0 + (x1 - x0) * i as f64 / (longest - 1) as f64,
            y0 + (y1 - y0) * (v - lo) / (hi - lo),
        )
    };

    for q in 0..=4 {
        let y = (y0 + (y1 - y0) * q as f64 / 4.0).round() as usize;
        let shade = if q == 0 { 0 } else { 220 };
        for x in MARGIN..=width - MARGIN {
            put(&mut img, width, height, x as f64, y as f64, [shade; 3]);
        }
    }
    for y in MARGIN..=height - MARGIN {
        put(&mut img, width, height, x0, y as f64, [0; 3]);
    }

    for (s, values) in series.iter().enumerate() {
        let color = PALETTE[s % PALETTE.len()];
        let mut prev: Option<(f64, f64)> = None;
        for (i, &v) in values.iter().enumerate() {
            if !v.is_finite() {
                prev = None;
                continue;
            }
            let p = to_px(i, v);
            match prev {
                Some(a) => segment(&mut img, width, height, a, p, color),
                None => put(&mut img, width, height, p.0, p.1, color),
            }
            prev = Some(p);
        }
        // legend swatch in the top margin
        let lx = MARGIN + s * 14;
        for dy in 6..12 {
            for dx in 0..10 {
                put(&mut img, width, height, (lx + dx) as f64, dy as f64, color);
            }
        }
    }
    Frame::new(width, height, 3, img)
}

fn put(img: &mut [u8], w: usize, h: usize, x: f64, y: f64, c: [u8; 3]) {
    let (x, y) = (x.round(), y.round());
    if x < 0.0 || y < 0.0 || x >= w as f64 || y >= h as f64 {
        return;
    }
    let i = (y as usize * w + x as usize) * 3;
    img[i..i + 3].copy_from_slice(&c);
}

fn segment(img: &mut [u8], w: usize, h: usize, a: (f64, f64), b: (f64, f64), c: [u8; 3]) {
    let steps = (b.0 - a.0).abs().max((b.1 - a.1).abs()).ceil().max(1.0) as usize;
    for s in 0..=steps {
        let t = s as f64 / steps as f64;
        put(img, w, h, a.0 + t * (b.0 - a.0), a.1 + t * (b.1 - a.1), c);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn draws_series_in_their_colors() {
        let img = line_chart(&[vec![0.0, 1.0, 2.0], vec![2.0, 1.0, 0.0]], 120, 80).unwrap();
        let count = |c: [u8; 3]| img.data().chunks(3).filter(|p| *p == c).count();
        assert!(count(PALETTE[0]) > 60);
        assert!(count(PALETTE[1]) > 60);
        let px = |x: usize, y: usize| [img.get(x, y, 0), img.get(x, y, 1), img.get(x, y, 2)];
        assert_eq!(px(MARGIN, 80 - MARGIN), PALETTE[0]);
        assert_eq!(px(120 - MARGIN, MARGIN), PALETTE[0]);
        assert_eq!(px(MARGIN, MARGIN), PALETTE[1]);
    }

    #[test]
    fn flat_and_empty_series_render() {
        assert!(line_chart(&[vec![3.0; 5]], 100, 100).is_ok());
        assert!(line_chart(&[], 100, 100).is_ok());
        assert!(line_chart(&[vec![f64::NAN, 1.0]], 100, 100).is_ok());
        assert!(line_chart(&[vec![1.0]], 10, 10).is_err());
    }
}
