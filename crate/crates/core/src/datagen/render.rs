use std::f64::consts::TAU;

use rand::Rng;

use super::lexicon::{Glyph, Lexicon, Primitive};
use crate::error::{Error, Result};
use crate::seed::rng_for;
use crate::substrate::Array;

/// Shortest realized sign, whatever the jitter.
pub const MIN_REALIZED: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct VideoSample {
    pub id: String,
    /// `[T, H, W]`, values in `[0, 1]`.
    pub frames: Array,
    pub sentence: Vec<String>,
}

impl VideoSample {
    pub fn num_frames(&self) -> usize {
        self.frames.shape()[0]
    }
}

/// Frame count for one sign after applying `jitter`.
pub fn realized_duration(base: usize, jitter: f64, rng: &mut impl Rng) -> usize {
    if jitter == 0.0 {
        return base.max(MIN_REALIZED);
    }
    let u: f64 = rng.gen_range(-jitter..jitter);
    ((base as f64 * (1.0 + u)).round() as usize).max(MIN_REALIZED)
}

pub fn render_sentence(lexicon: &Lexicon, tokens: &[String], seed: u64, jitter: f64, size: usize) -> Result<VideoSample> {
    if tokens.is_empty() {
        return Err(Error::InvalidArgument("cannot render an empty sentence".into()));
    }
    if !(0.0..0.5).contains(&jitter) {
        return Err(Error::InvalidArgument(format!("jitter {jitter} outside [0, 0.5)")));
    }
    if size < 8 {
        return Err(Error::InvalidArgument(format!("canvas of {size} pixels is too small")));
    }
    let prims: Vec<&Primitive> = tokens.iter().map(|t| lexicon.primitive(t)).collect::<Result<_>>()?;
    let mut rng = rng_for(seed, "render", 0);
    let durations: Vec<usize> = prims.iter().map(|p| realized_duration(p.duration, jitter, &mut rng)).collect();
    let total: usize = durations.iter().sum();
    let plane = size * size;
    let mut data = vec![0.0; total * plane];
    let mut t0 = 0;
    for (p, &dur) in prims.iter().zip(&durations) {
        for f in 0..dur {
            let s = (f as f64 + 0.5) / dur as f64;
            draw_glyph(&mut data[(t0 + f) * plane..(t0 + f + 1) * plane], size, p, s);
        }
        t0 += dur;
    }
    Ok(VideoSample {
        id: format!("render-{seed:016x}"),
        frames: Array::new(vec![total, size, size], data)?,
        sentence: tokens.to_vec(),
    })
}

fn bezier(c: &[[f64; 2]; 3], s: f64) -> [f64; 2] {
    let (a, b, d) = ((1.0 - s) * (1.0 - s), 2.0 * (1.0 - s) * s, s * s);
    [
        a * c[0][0] + b * c[1][0] + d * c[2][0],
        a * c[0][1] + b * c[1][1] + d * c[2][1],
    ]
}

/// Draws the glyph at progress `s` into one frame, anti-aliased over one pixel.
fn draw_glyph(frame: &mut [f64], size: usize, p: &Primitive, s: f64) {
    let n = size as f64;
    let margin = 0.22 * n;
    let pos = bezier(&p.control, s);
    let (cx, cy) = (margin + pos[0] * (n - 2.0 * margin), margin + pos[1] * (n - 2.0 * margin));
    let r = 0.14 * n;
    let (sin, cos) = (TAU * p.spin * s).sin_cos();
    for y in 0..size {
        for x in 0..size {
            let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
            // Glyph-local coordinates.
            let (u, v) = (cos * dx + sin * dy, -sin * dx + cos * dy);
            let sdf = match p.glyph {
                Glyph::Disk => (u * u + v * v).sqrt() - r,
                Glyph::Square => u.abs().max(v.abs()) - 0.8 * r,
                Glyph::Ring => ((u * u + v * v).sqrt() - r).abs() - 0.3 * r,
                Glyph::Bar => (u.abs() - 1.2 * r).max(v.abs() - 0.35 * r),
            };
            let ink = (0.5 - sdf).clamp(0.0, 1.0);
            let px = &mut frame[y * size + x];
            *px = px.max(ink);
        }
    }
}
