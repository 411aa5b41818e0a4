use rand::Rng;

use crate::error::{Error, Result};
use crate::seed::rng_for;
use crate::substrate::Array;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentConfig {
    /// Probability of applying each transform independently.
    pub p: f64,
    pub max_rot_deg: f64,
    pub max_scale: f64,
    /// Fraction of the frame width.
    pub max_shift: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            p: 0.5,
            max_rot_deg: 30.0,
            max_scale: 0.2,
            max_shift: 10.0 / 224.0,
        }
    }
}

/// One concrete affine warp about the frame center.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transform {
    pub rot_deg: f64,
    pub scale: f64,
    /// Pixels, `[x, y]`.
    pub shift: [f64; 2],
}

impl Transform {
    pub const IDENTITY: Transform = Transform {
        rot_deg: 0.0,
        scale: 1.0,
        shift: [0.0, 0.0],
    };

    pub fn sample(cfg: &AugmentConfig, width: usize, rng: &mut impl Rng) -> Transform {
        let mut t = Transform::IDENTITY;
        if rng.gen_bool(cfg.p) && cfg.max_rot_deg > 0.0 {
            t.rot_deg = rng.gen_range(-cfg.max_rot_deg..=cfg.max_rot_deg);
        }
        if rng.gen_bool(cfg.p) && cfg.max_scale > 0.0 {
            t.scale = 1.0 + rng.gen_range(-cfg.max_scale..=cfg.max_scale);
        }
        if rng.gen_bool(cfg.p) && cfg.max_shift > 0.0 {
            let m = cfg.max_shift * width as f64;
            t.shift = [rng.gen_range(-m..=m), rng.gen_range(-m..=m)];
        }
        t
    }
}

/// Random rotation, rescale and shift, shared by all frames of the clip.
pub fn augment(frames: &Array, seed: u64, cfg: &AugmentConfig) -> Result<Array> {
    if !(0.0..=1.0).contains(&cfg.p) {
        return Err(Error::InvalidArgument(format!("augment probability {} outside [0, 1]", cfg.p)));
    }
    let width = check_video(frames)?.2;
    let t = Transform::sample(cfg, width, &mut rng_for(seed, "augment", 0));
    if t == Transform::IDENTITY {
        return Ok(frames.clone());
    }
    augment_with(frames, &t)
}

/// Applies `t` with bilinear resampling; pixels mapped from outside the
/// frame read as background (0).
pub fn augment_with(frames: &Array, t: &Transform) -> Result<Array> {
    let (n, h, w) = check_video(frames)?;
    if t.scale <= 0.0 {
        return Err(Error::InvalidArgument(format!("scale {} must be positive", t.scale)));
    }
    let (sin, cos) = t.rot_deg.to_radians().sin_cos();
    let (cx, cy) = (w as f64 / 2.0, h as f64 / 2.0);
    // Inverse map for each output pixel, shared across frames.
    let mut taps = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let qx = (x as f64 + 0.5 - cx - t.shift[0]) / t.scale;
            let qy = (y as f64 + 0.5 - cy - t.shift[1]) / t.scale;
            let sx = cos * qx + sin * qy + cx - 0.5;
            let sy = -sin * qx + cos * qy + cy - 0.5;
            taps.push((sx, sy));
        }
    }
    let src = frames.data();
    let mut out = vec![0.0; src.len()];
    let plane = h * w;
    for f in 0..n {
        let img = &src[f * plane..(f + 1) * plane];
        for (o, &(sx, sy)) in out[f * plane..(f + 1) * plane].iter_mut().zip(&taps) {
            *o = bilinear(img, h, w, sx, sy).clamp(0.0, 1.0);
        }
    }
    Array::new(frames.shape().to_vec(), out)
}

fn bilinear(img: &[f64], h: usize, w: usize, x: f64, y: f64) -> f64 {
    let (x0, y0) = (x.floor(), y.floor());
    let (fx, fy) = (x - x0, y - y0);
    let at = |yy: f64, xx: f64| -> f64 {
        if xx < 0.0 || yy < 0.0 || xx >= w as f64 || yy >= h as f64 {
            0.0
        } else {
            img[yy as usize * w + xx as usize]
        }
    };
    (1.0 - fy) * ((1.0 - fx) * at(y0, x0) + fx * at(y0, x0 + 1.0))
        + fy * ((1.0 - fx) * at(y0 + 1.0, x0) + fx * at(y0 + 1.0, x0 + 1.0))
}

fn check_video(frames: &Array) -> Result<(usize, usize, usize)> {
    match frames.shape() {
        &[n, h, w] => Ok((n, h, w)),
        s => Err(Error::shape("video", s, &[0, 0, 0])),
    }
}

fn crop(frames: &Array, size: usize, top: usize, left: usize) -> Result<Array> {
    let (n, h, w) = check_video(frames)?;
    if size > h || size > w || top + size > h || left + size > w {
        return Err(Error::InvalidArgument(format!(
            "crop {size}x{size} at ({top}, {left}) exceeds {h}x{w} frame"
        )));
    }
    let mut out = Vec::with_capacity(n * size * size);
    for f in 0..n {
        for y in top..top + size {
            let row = (f * h + y) * w + left;
            out.extend_from_slice(&frames.data()[row..row + size]);
        }
    }
    Array::new(vec![n, size, size], out)
}

pub fn center_crop(frames: &Array, size: usize) -> Result<Array> {
    let (_, h, w) = check_video(frames)?;
    crop(frames, size, h.saturating_sub(size) / 2, w.saturating_sub(size) / 2)
}

pub fn random_crop(frames: &Array, size: usize, rng: &mut impl Rng) -> Result<Array> {
    let (_, h, w) = check_video(frames)?;
    if size > h || size > w {
        return crop(frames, size, 0, 0);
    }
    let top = rng.gen_range(0..=h - size);
    let left = rng.gen_range(0..=w - size);
    crop(frames, size, top, left)
}
