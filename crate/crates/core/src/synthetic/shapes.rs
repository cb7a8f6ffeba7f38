use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{BinaryMask, Image, LabeledPair, MIN_SLICE_FOREGROUND};
use crate::error::{Result, SpeError};
use crate::seed::{self, Stage};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShapeConfig {
    pub canvas: (usize, usize),
    /// Range of the major semi-axis in pixels.
    pub radius: (f64, f64),
    /// Accepted foreground fraction of the canvas.
    pub foreground_fraction: (f64, f64),
    /// Maximum relative amplitude of the boundary wobble.
    pub wobble: f64,
    pub noise_std: f64,
}

impl Default for ShapeConfig {
    fn default() -> Self {
        Self {
            canvas: (128, 128),
            radius: (10.0, 30.0),
            foreground_fraction: (0.005, 0.25),
            wobble: 0.2,
            noise_std: 0.04,
        }
    }
}

struct Blob {
    cy: f64,
    cx: f64,
    semi_major: f64,
    semi_minor: f64,
    angle: f64,
    lobes: f64,
    amplitude: f64,
    phase: f64,
}

impl Blob {
    fn sample(rng: &mut ChaCha8Rng, cfg: &ShapeConfig) -> Self {
        let (h, w) = cfg.canvas;
        let semi_major = rng.random_range(cfg.radius.0..=cfg.radius.1);
        let reach = semi_major * (1.0 + cfg.wobble);
        let span = |len: usize| {
            let lo = reach.min(len as f64 / 2.0);
            let hi = (len as f64 - reach).max(lo + 1e-9);
            (lo, hi)
        };
        let (ylo, yhi) = span(h);
        let (xlo, xhi) = span(w);
        Blob {
            cy: rng.random_range(ylo..yhi),
            cx: rng.random_range(xlo..xhi),
            semi_major,
            semi_minor: semi_major * rng.random_range(0.5..=1.0),
            angle: rng.random_range(0.0..PI),
            lobes: rng.random_range(2..=5) as f64,
            amplitude: rng.random_range(0.0..=cfg.wobble),
            phase: rng.random_range(0.0..2.0 * PI),
        }
    }

    /// Normalized radial coordinate; the boundary sits at 1.
    fn rho(&self, r: usize, c: usize) -> f64 {
        let (dy, dx) = (r as f64 - self.cy, c as f64 - self.cx);
        let (s, co) = self.angle.sin_cos();
        let u = (dx * co + dy * s) / self.semi_major;
        let v = (-dx * s + dy * co) / self.semi_minor;
        let phi = v.atan2(u);
        (u * u + v * v).sqrt() / (1.0 + self.amplitude * (self.lobes * phi + self.phase).sin())
    }
}

/// One blob-shaped pair; the image is a smooth field that brightens inside the blob.
fn generate_one(index: usize, cfg: &ShapeConfig, root: u64) -> Result<LabeledPair> {
    let (h, w) = cfg.canvas;
    let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(root, Stage::Shapes, &[index as u64]));
    let total = (h * w) as f64;
    for _ in 0..1000 {
        let blob = Blob::sample(&mut rng, cfg);
        let mask = BinaryMask::from_fn(h, w, |r, c| blob.rho(r, c) <= 1.0);
        let n = mask.count();
        let frac = n as f64 / total;
        if n < MIN_SLICE_FOREGROUND
            || frac < cfg.foreground_fraction.0
            || frac > cfg.foreground_fraction.1
        {
            continue;
        }
        let tilt = rng.random_range(0.0..2.0 * PI);
        let (ts, tc) = tilt.sin_cos();
        let noise = Normal::new(0.0, cfg.noise_std.max(1e-12)).expect("finite std");
        let mut raw = Vec::with_capacity(h * w);
        for r in 0..h {
            for c in 0..w {
                let edge = 1.0 / (1.0 + ((blob.rho(r, c) - 1.0) * 10.0).exp());
                let gradient = 0.15 * ((r as f64 / h as f64) * ts + (c as f64 / w as f64) * tc);
                raw.push(0.2 + 0.5 * edge + gradient + noise.sample(&mut rng));
            }
        }
        // 8-bit representable values so images survive a PNG round trip unchanged
        let normalized = Image::from_raw(h, w, &raw)?;
        let quantized: Vec<f64> = normalized
            .to_gray8()
            .into_iter()
            .map(|v| f64::from(v) / 255.0)
            .collect();
        let image = Image::new(h, w, quantized)?;
        return LabeledPair::new(format!("shape_{index:04}"), image, mask);
    }
    Err(SpeError::Harness(format!(
        "could not place shape {index} within the configured foreground bounds"
    )))
}

/// `n` blob pairs, deterministic in `seed`.
pub fn generate_shapes(n: usize, config: &ShapeConfig, seed: u64) -> Result<Vec<LabeledPair>> {
    if n == 0 {
        return Err(SpeError::validation("need at least one shape"));
    }
    (0..n)
        .into_par_iter()
        .map(|i| generate_one(i, config, seed))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_per_seed() {
        let cfg = ShapeConfig::default();
        let a = generate_shapes(10, &cfg, 3).unwrap();
        let b = generate_shapes(10, &cfg, 3).unwrap();
        assert_eq!(a, b);
        let c = generate_shapes(10, &cfg, 4).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn every_mask_passes_slice_filter() {
        let shapes = generate_shapes(40, &ShapeConfig::default(), 11).unwrap();
        assert!(shapes.iter().all(|p| p.label.count() >= 20));
        assert!(shapes.iter().all(|p| p.image.shape() == (128, 128)));
    }

    #[test]
    fn foreground_fraction_within_bounds() {
        let cfg = ShapeConfig::default();
        let shapes = generate_shapes(500, &cfg, 5).unwrap();
        let total = 128.0 * 128.0;
        for p in &shapes {
            let mut n = 0usize;
            for r in 0..128 {
                for c in 0..128 {
                    n += p.label.get(r, c) as usize;
                }
            }
            let frac = n as f64 / total;
            assert!(frac >= cfg.foreground_fraction.0 && frac <= cfg.foreground_fraction.1);
        }
    }

    #[test]
    fn image_brighter_inside_mask() {
        for p in generate_shapes(5, &ShapeConfig::default(), 1).unwrap() {
            let (mut inside, mut ni, mut outside, mut no) = (0.0, 0, 0.0, 0);
            for (v, b) in p.image.pixels().iter().zip(p.label.bits()) {
                if *b {
                    inside += v;
                    ni += 1;
                } else {
                    outside += v;
                    no += 1;
                }
            }
            assert!(inside / ni as f64 > outside / no as f64 + 0.2);
        }
    }

    #[test]
    fn zero_shapes_rejected() {
        assert!(generate_shapes(0, &ShapeConfig::default(), 1).is_err());
    }
}
