//! The full pipeline on a generated world: calibrate on a synthetic series,
//! then estimate unseen quality levels on the extra-test cohort.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::curve::{build_quality_curve, uniform_levels, QualityCurve};
use super::degrade::{default_operators, DegradeOp};
use super::shapes::{generate_shapes, ShapeConfig};
use super::world::{
    synthetic_locator, synthetic_reference, synthetic_series, CouplingSpec, SyntheticAdapter,
    SyntheticReference, SyntheticWorld, DEFAULT_SPLIT,
};
use crate::calibration::{collect_pair_sets, CalibrationArtifact, CollectOptions, Family, Protocol};
use crate::data::{BinaryMask, DatasetSplit, Image};
use crate::error::{Result, SpeError};
use crate::estimator::{estimate_unlabeled_many, EstimateOptions, EstimationResult};
use crate::meta_eval::{Cohort, HoldoutPoint, MetaScore};
use crate::metrics::{evaluate_set, MetricId};
use crate::seed::{self, Stage};
use crate::segmenter::{CheckpointRef, CheckpointSeries};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticParams {
    pub n_shapes: usize,
    pub n_checkpoints: usize,
    pub coupling: CouplingSpec,
    /// Real dice of the first and last checkpoint.
    pub quality_range: (f64, f64),
    pub curve_levels: usize,
    pub shapes: ShapeConfig,
    pub operators: Vec<DegradeOp>,
}

impl Default for SyntheticParams {
    fn default() -> Self {
        Self {
            n_shapes: 200,
            n_checkpoints: 20,
            coupling: CouplingSpec {
                a: 0.9,
                b: 0.05,
                sigma: 0.01,
            },
            quality_range: (0.3, 0.95),
            curve_levels: 41,
            shapes: ShapeConfig::default(),
            operators: default_operators(),
        }
    }
}

/// Everything derived from `(params, seed)`.
pub struct SyntheticSetup {
    pub world: Arc<SyntheticWorld>,
    pub split: DatasetSplit,
    pub curve: Arc<QualityCurve>,
    pub adapter: SyntheticAdapter,
    pub reference: SyntheticReference,
    pub series: CheckpointSeries,
}

pub fn build_synthetic(params: &SyntheticParams, seed: u64) -> Result<SyntheticSetup> {
    let (lo, hi) = params.quality_range;
    if !(0.0 < lo && lo < hi && hi <= 1.0) {
        return Err(SpeError::validation(format!(
            "quality range must satisfy 0 < lo < hi <= 1, got ({lo}, {hi})"
        )));
    }
    let pairs = generate_shapes(params.n_shapes, &params.shapes, seed::derive(seed, Stage::Shapes, &[]))?;
    let world = Arc::new(SyntheticWorld::new(pairs)?);
    let split = world.split(DEFAULT_SPLIT);
    if split.train.is_empty() || split.test.is_empty() || split.extra_test.is_empty() {
        return Err(SpeError::Harness(format!(
            "{} shapes are too few to fill train, test and extra-test",
            params.n_shapes
        )));
    }
    let probes: Vec<BinaryMask> = world.pairs().iter().map(|p| p.label.clone()).collect();
    let curve = Arc::new(build_quality_curve(
        &uniform_levels(params.curve_levels),
        &probes,
        &params.operators,
        seed::derive(seed, Stage::Curve, &[]),
    )?);
    let (q_min, q_max) = curve.quality_range();
    if lo < q_min || hi > q_max {
        return Err(SpeError::Harness(format!(
            "quality range ({lo}, {hi}) is not reachable; the curve spans ({q_min:.4}, {q_max:.4})"
        )));
    }
    let series = synthetic_series(params.n_checkpoints, &curve, params.quality_range)?;
    let adapter = SyntheticAdapter::new(
        world.clone(),
        params.operators.clone(),
        seed::derive(seed, Stage::Degrade, &[]),
    );
    let reference = synthetic_reference(
        params.coupling,
        curve.clone(),
        world.clone(),
        seed::derive(seed, Stage::Coupling, &[]),
    );
    Ok(SyntheticSetup {
        world,
        split,
        curve,
        adapter,
        reference,
        series,
    })
}

/// `n` target qualities strictly between calibration checkpoints:
/// `lo + (2j + 1) / (2n) * (hi - lo)`.
pub fn holdout_qualities(n: usize, range: (f64, f64)) -> Vec<f64> {
    let (lo, hi) = range;
    (0..n)
        .map(|j| lo + (2 * j + 1) as f64 / (2 * n) as f64 * (hi - lo))
        .collect()
}

/// Calibrates every metric on the setup's series.
pub fn calibrate_synthetic(
    setup: &SyntheticSetup,
    metrics: &[MetricId],
    options: &CollectOptions,
    family: Option<Family>,
    created_at: u64,
    run_config: &serde_json::Value,
) -> Result<Vec<CalibrationArtifact>> {
    let collected = collect_pair_sets(
        &setup.series,
        &setup.split,
        &setup.adapter,
        &setup.reference,
        metrics,
        options,
    )?;
    collected
        .pair_sets
        .into_iter()
        .map(|psi| {
            let protocol = Protocol::from_options(options, collected.checkpoint_hashes.clone());
            CalibrationArtifact::build(psi, family, protocol, created_at, run_config.clone())
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct HoldoutEstimate {
    pub checkpoint: CheckpointRef,
    pub target_quality: f64,
    /// One per artifact, in artifact order.
    pub estimates: Vec<EstimationResult>,
    pub real: Vec<f64>,
}

/// Estimates each holdout quality level on the extra-test cohort and scores
/// it against the cohort's hidden labels.
pub fn estimate_holdout(
    setup: &SyntheticSetup,
    artifacts: &[CalibrationArtifact],
    qualities: &[f64],
    seed: u64,
) -> Result<Vec<HoldoutEstimate>> {
    let images: Vec<Image> = setup.split.extra_test.iter().map(|c| c.image.clone()).collect();
    let labels = setup
        .split
        .extra_test
        .iter()
        .map(|c| {
            c.label
                .clone()
                .ok_or_else(|| SpeError::Harness(format!("extra-test image {} has no hidden label", c.id)))
        })
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&CalibrationArtifact> = artifacts.iter().collect();
    qualities
        .iter()
        .enumerate()
        .map(|(j, &q)| {
            let checkpoint = CheckpointRef::new("synthetic-holdout", j as u32 + 1, synthetic_locator(setup.curve.invert(q)));
            let options = EstimateOptions {
                seed: seed::derive(seed, Stage::Estimate, &[j as u64]),
                ..Default::default()
            };
            let estimates = estimate_unlabeled_many(
                &checkpoint,
                &images,
                &setup.split.train,
                &setup.adapter,
                &setup.reference,
                &refs,
                &options,
            )?;
            let preds = crate::segmenter::predict_under_test(&setup.adapter, &checkpoint, &images)?;
            let real = artifacts
                .iter()
                .map(|a| {
                    evaluate_set(a.metric, &preds, &labels)?.mean.ok_or(SpeError::UndefinedScore {
                        epoch: checkpoint.epoch,
                        metric: a.metric,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(HoldoutEstimate {
                checkpoint,
                target_quality: q,
                estimates,
                real,
            })
        })
        .collect()
}

/// Holdout points for artifact `index`.
pub fn holdout_points(holdout: &[HoldoutEstimate], index: usize) -> Vec<HoldoutPoint> {
    holdout
        .iter()
        .map(|h| HoldoutPoint {
            epoch: h.checkpoint.epoch,
            phi_pseudo: h.estimates[index].phi_pseudo,
            phi_real: h.real[index],
        })
        .collect()
}

/// Holdout MAE and correlation for artifact `index`.
pub fn holdout_score(holdout: &[HoldoutEstimate], index: usize, metric: MetricId) -> Result<MetaScore> {
    let real: Vec<f64> = holdout.iter().map(|h| h.real[index]).collect();
    let est: Vec<f64> = holdout.iter().map(|h| h.estimates[index].phi_estimated).collect();
    MetaScore::compute(metric, Cohort::Holdout, &real, &est)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn holdout_levels_sit_between_checkpoints() {
        let q = holdout_qualities(5, (0.3, 0.95));
        assert_eq!(q.len(), 5);
        assert!((q[0] - (0.3 + 0.065)).abs() < 1e-12);
        let grid: Vec<f64> = (0..20).map(|i| 0.3 + 0.65 * i as f64 / 19.0).collect();
        for v in q {
            assert!(grid.iter().all(|g| (g - v).abs() > 1e-3));
        }
    }
}
