use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::BinaryMask;
use crate::distance::squared_distance_to_foreground;
use crate::seed::{self, Stage};

/// Size of a spatial operator at level 1.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Extent {
    Pixels(f64),
    /// Multiple of the input's equivalent-disc radius `sqrt(area / pi)`.
    RadiusFraction(f64),
}

impl Extent {
    fn resolve(self, radius: f64) -> f64 {
        match self {
            Extent::Pixels(p) => p,
            Extent::RadiusFraction(f) => f * radius,
        }
    }
}

/// Corruption operators; every parameter is the value reached at level 1
/// and scales linearly with the level.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DegradeOp {
    /// Removes foreground within the given Euclidean distance of the background.
    Erode(Extent),
    /// Adds background within the given Euclidean distance of the foreground.
    Dilate(Extent),
    /// Shifts by the given length along a seeded direction.
    Translate(Extent),
    /// Flips pixels on the 4-connected boundary band with this probability.
    BoundaryNoise(f64),
    /// Drops foreground pixels with this probability.
    Dropout(f64),
}

/// Erosion, translation and boundary noise.
pub fn default_operators() -> Vec<DegradeOp> {
    vec![
        DegradeOp::Erode(Extent::RadiusFraction(0.5)),
        DegradeOp::Translate(Extent::RadiusFraction(1.0)),
        DegradeOp::BoundaryNoise(0.5),
    ]
}

#[derive(Clone, Debug, PartialEq)]
pub struct DegradationSpec {
    pub level: f64,
    pub operators: Vec<DegradeOp>,
    pub seed: u64,
}

impl DegradationSpec {
    pub fn new(level: f64, operators: Vec<DegradeOp>, seed: u64) -> Self {
        Self {
            level: level.clamp(0.0, 1.0),
            operators,
            seed,
        }
    }
}

/// Applies `spec.operators` in order. Level 0 returns the input unchanged.
/// Random draws depend only on the seed and operator position, so the same
/// seed at increasing levels corrupts the same pixels progressively.
pub fn degrade(mask: &BinaryMask, spec: &DegradationSpec) -> BinaryMask {
    let radius = (mask.count() as f64 / std::f64::consts::PI).sqrt();
    let level = spec.level.clamp(0.0, 1.0);
    let mut out = mask.clone();
    for (i, op) in spec.operators.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(spec.seed, Stage::Degrade, &[i as u64]));
        out = match *op {
            DegradeOp::Erode(e) => erode(&out, level * e.resolve(radius)),
            DegradeOp::Dilate(e) => dilate(&out, level * e.resolve(radius)),
            DegradeOp::Translate(e) => {
                let theta = rng.random_range(0.0..std::f64::consts::TAU);
                let len = level * e.resolve(radius);
                let (s, c) = theta.sin_cos();
                out.translated((len * s).round() as i64, (len * c).round() as i64)
            }
            DegradeOp::BoundaryNoise(p) => {
                let band = boundary_band(&out);
                flip_where(&out, &mut rng, level * p, |i| band[i])
            }
            DegradeOp::Dropout(p) => {
                let fg = out.bits().to_vec();
                flip_where(&out, &mut rng, level * p, |i| fg[i])
            }
        };
    }
    out
}

/// Keeps foreground pixels whose squared distance to the background exceeds `radius^2`.
pub fn erode(mask: &BinaryMask, radius: f64) -> BinaryMask {
    let Some(dist) = squared_distance_to_foreground(&mask.complement()) else {
        return mask.clone();
    };
    let r2 = radius * radius;
    let bits = mask
        .bits()
        .iter()
        .zip(&dist)
        .map(|(b, d)| *b && (*d as f64) > r2)
        .collect();
    BinaryMask::new(mask.height(), mask.width(), bits).expect("same shape")
}

/// Adds every pixel within Euclidean distance `radius` of the foreground.
pub fn dilate(mask: &BinaryMask, radius: f64) -> BinaryMask {
    let Some(dist) = squared_distance_to_foreground(mask) else {
        return mask.clone();
    };
    let r2 = radius * radius;
    let bits = dist.iter().map(|d| (*d as f64) <= r2).collect();
    BinaryMask::new(mask.height(), mask.width(), bits).expect("same shape")
}

/// Pixels with at least one 4-neighbor of the opposite value.
fn boundary_band(mask: &BinaryMask) -> Vec<bool> {
    let (h, w) = mask.shape();
    let mut band = vec![false; h * w];
    for r in 0..h {
        for c in 0..w {
            let v = mask.get(r, c);
            let differs = (r > 0 && mask.get(r - 1, c) != v)
                || (r + 1 < h && mask.get(r + 1, c) != v)
                || (c > 0 && mask.get(r, c - 1) != v)
                || (c + 1 < w && mask.get(r, c + 1) != v);
            band[r * w + c] = differs;
        }
    }
    band
}

/// Flips eligible pixels where a per-pixel uniform draw falls below `p`.
/// One draw is made for every pixel regardless of eligibility.
fn flip_where(
    mask: &BinaryMask,
    rng: &mut ChaCha8Rng,
    p: f64,
    eligible: impl Fn(usize) -> bool,
) -> BinaryMask {
    let bits = mask
        .bits()
        .iter()
        .enumerate()
        .map(|(i, b)| {
            let u: f64 = rng.random();
            if eligible(i) && u < p {
                !b
            } else {
                *b
            }
        })
        .collect();
    BinaryMask::new(mask.height(), mask.width(), bits).expect("same shape")
}
