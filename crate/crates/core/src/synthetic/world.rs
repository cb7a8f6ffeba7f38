use std::collections::HashMap;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::curve::QualityCurve;
use super::degrade::{degrade, DegradationSpec, DegradeOp};
use crate::data::{BinaryMask, CohortImage, DatasetSplit, Fnv, Image, LabeledPair};
use crate::error::{Result, SpeError};
use crate::metrics::dice;
use crate::seed::{self, Stage};
use crate::segmenter::{
    CheckpointAdapter, CheckpointRef, CheckpointSeries, ReferenceSegmenter, SupportSet,
};

/// Known relation between support quality and reference output quality:
/// `q_query = clip(a * q_support + b + eps)`, `eps ~ N(0, sigma^2)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CouplingSpec {
    pub a: f64,
    pub b: f64,
    pub sigma: f64,
}

impl CouplingSpec {
    pub fn new(a: f64, b: f64, sigma: f64) -> Result<Self> {
        if !(sigma >= 0.0) || !a.is_finite() || !b.is_finite() {
            return Err(SpeError::validation(format!(
                "invalid coupling a={a} b={b} sigma={sigma}"
            )));
        }
        Ok(Self { a, b, sigma })
    }
}

/// Generated pairs with their hidden ground truth, addressable by image content.
#[derive(Debug)]
pub struct SyntheticWorld {
    pairs: Vec<LabeledPair>,
    index: HashMap<u64, usize>,
}

/// Partition proportions (train, validation, test); extra test takes the rest.
pub const DEFAULT_SPLIT: (f64, f64, f64) = (137.0 / 246.0, 35.0 / 246.0, 49.0 / 246.0);

impl SyntheticWorld {
    pub fn new(pairs: Vec<LabeledPair>) -> Result<Self> {
        let mut index = HashMap::with_capacity(pairs.len());
        for (i, p) in pairs.iter().enumerate() {
            if index.insert(p.image.fingerprint(), i).is_some() {
                return Err(SpeError::Harness(format!("duplicate image content at {}", p.id)));
            }
        }
        Ok(Self { pairs, index })
    }

    pub fn pairs(&self) -> &[LabeledPair] {
        &self.pairs
    }

    pub fn ground_truth(&self, image: &Image) -> Result<&BinaryMask> {
        self.index
            .get(&image.fingerprint())
            .map(|&i| &self.pairs[i].label)
            .ok_or_else(|| SpeError::Harness("query image is not part of the synthetic world".into()))
    }

    /// Contiguous split in generation order; the extra-test cohort keeps its labels.
    pub fn split(&self, proportions: (f64, f64, f64)) -> DatasetSplit {
        let n = self.pairs.len();
        let n_train = (n as f64 * proportions.0).round() as usize;
        let n_val = (n as f64 * proportions.1).round() as usize;
        let n_test = (n as f64 * proportions.2).round() as usize;
        let mut it = self.pairs.iter().cloned();
        let train: Vec<_> = it.by_ref().take(n_train).collect();
        let validation: Vec<_> = it.by_ref().take(n_val).collect();
        let test: Vec<_> = it.by_ref().take(n_test).collect();
        let extra_test = it.map(CohortImage::from).collect();
        DatasetSplit {
            train,
            validation,
            test,
            extra_test,
        }
    }
}

const LOCATOR_PREFIX: &str = "synthetic:level=";

pub fn synthetic_locator(level: f64) -> String {
    format!("{LOCATOR_PREFIX}{level:.9}")
}

pub fn parse_synthetic_locator(locator: &str) -> Result<f64> {
    locator
        .strip_prefix(LOCATOR_PREFIX)
        .and_then(|s| s.parse::<f64>().ok())
        .filter(|l| (0.0..=1.0).contains(l))
        .ok_or_else(|| SpeError::Plugin {
            locator: locator.to_string(),
            reason: "not a synthetic checkpoint locator".into(),
        })
}

/// Model under test whose checkpoint at level `l` predicts `degrade(gt, l)`.
/// Each image keeps the same degradation seed across checkpoints.
pub struct SyntheticAdapter {
    world: Arc<SyntheticWorld>,
    operators: Vec<DegradeOp>,
    seed: u64,
}

impl SyntheticAdapter {
    pub fn new(world: Arc<SyntheticWorld>, operators: Vec<DegradeOp>, seed: u64) -> Self {
        Self {
            world,
            operators,
            seed,
        }
    }
}

impl CheckpointAdapter for SyntheticAdapter {
    fn predict(&self, checkpoint: &CheckpointRef, images: &[Image]) -> Result<Vec<BinaryMask>> {
        let level = parse_synthetic_locator(&checkpoint.locator)?;
        images
            .par_iter()
            .map(|img| {
                let gt = self.world.ground_truth(img)?;
                let seed = seed::derive(self.seed, Stage::Degrade, &[img.fingerprint(), 1]);
                Ok(degrade(gt, &DegradationSpec::new(level, self.operators.clone(), seed)))
            })
            .collect()
    }
}

/// Target qualities evenly spaced over `quality_range`, mapped to levels by
/// the curve. Epochs are 5, 10, ... so quality rises with epoch.
pub fn synthetic_series(
    n_levels: usize,
    curve: &QualityCurve,
    quality_range: (f64, f64),
) -> Result<CheckpointSeries> {
    if n_levels < 2 {
        return Err(SpeError::validation(format!(
            "synthetic series needs at least 2 levels, got {n_levels}"
        )));
    }
    let (lo, hi) = quality_range;
    let checkpoints = (0..n_levels)
        .map(|i| {
            let q = lo + (hi - lo) * i as f64 / (n_levels - 1) as f64;
            let epoch = 5 * (i as u32 + 1);
            CheckpointRef::new("synthetic", epoch, synthetic_locator(curve.invert(q)))
        })
        .collect();
    CheckpointSeries::new(checkpoints)
}

/// Reference segmenter with a known coupling to support quality.
///
/// Support quality is the mean dice of support labels against the hidden
/// ground truth, summed in content order so it does not depend on support
/// order. Noise is seeded by the ordered support contents, and each query's
/// degradation seed depends only on the query.
pub struct SyntheticReference {
    world: Arc<SyntheticWorld>,
    curve: Arc<QualityCurve>,
    coupling: CouplingSpec,
    seed: u64,
}

pub fn synthetic_reference(
    coupling: CouplingSpec,
    curve: Arc<QualityCurve>,
    world: Arc<SyntheticWorld>,
    seed: u64,
) -> SyntheticReference {
    SyntheticReference {
        world,
        curve,
        coupling,
        seed,
    }
}

impl SyntheticReference {
    pub fn support_quality(&self, support: &SupportSet) -> Result<f64> {
        let mut scored = support
            .pairs()
            .iter()
            .map(|p| {
                let gt = self.world.ground_truth(&p.image)?;
                Ok((p.image.fingerprint(), dice(&p.label, gt)?.value))
            })
            .collect::<Result<Vec<_>>>()?;
        scored.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
        Ok(scored.iter().map(|s| s.1).sum::<f64>() / scored.len() as f64)
    }

    /// Quality the queries are degraded to for this support set.
    pub fn target_quality(&self, support: &SupportSet) -> Result<f64> {
        let q_support = self.support_quality(support)?;
        let mut h = Fnv::new();
        for p in support.pairs() {
            h.write_u64(p.image.fingerprint());
            h.write_u64(p.label.fingerprint());
        }
        let eps = if self.coupling.sigma > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(self.seed, Stage::Coupling, &[h.finish()]));
            Normal::new(0.0, self.coupling.sigma)
                .expect("sigma checked")
                .sample(&mut rng)
        } else {
            0.0
        };
        Ok((self.coupling.a * q_support + self.coupling.b + eps).clamp(0.0, 1.0))
    }
}

impl ReferenceSegmenter for SyntheticReference {
    fn infer(&self, support: &SupportSet, queries: &[Image]) -> Result<Vec<BinaryMask>> {
        let level = self.curve.invert(self.target_quality(support)?);
        let operators = self.curve.operators().to_vec();
        queries
            .par_iter()
            .map(|q| {
                let gt = self.world.ground_truth(q)?;
                let seed = seed::derive(self.seed, Stage::Degrade, &[q.fingerprint(), 2]);
                Ok(degrade(gt, &DegradationSpec::new(level, operators.clone(), seed)))
            })
            .collect()
    }
}
