//! Performance estimation for a deployed checkpoint on an unlabeled cohort.

use serde::{Deserialize, Serialize};

use crate::calibration::{mean, pseudo_scores, CalibrationArtifact, MappingFunction};
use crate::data::{Image, LabeledPair};
use crate::error::{Result, SpeError};
use crate::metrics::MetricId;
use crate::seed::{self, Stage};
use crate::segmenter::{predict_under_test, CheckpointAdapter, CheckpointRef, ReferenceSegmenter};

pub fn apply_mapping(g: &MappingFunction, x: f64) -> Result<f64> {
    g.apply(x)
}

/// Clamps `value` into the metric's range; returns whether it moved.
pub fn clamp_to_range(metric: MetricId, value: f64) -> (f64, bool) {
    let (lo, hi) = metric.range();
    let c = value.clamp(lo, hi);
    (c, c != value)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EstimationProtocol {
    pub support_size: usize,
    pub n_repeats: usize,
    pub train_cap: Option<usize>,
    pub seed: u64,
    /// Support size or repeats differ from the artifact.
    pub overridden: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimationResult {
    pub metric: MetricId,
    pub epoch: u32,
    pub phi_pseudo: f64,
    pub pseudo_repeat_values: Vec<f64>,
    /// `G(phi_pseudo)` before clamping.
    pub phi_mapped: f64,
    pub phi_estimated: f64,
    pub clamped: bool,
    pub extrapolated: bool,
    pub n_unlabeled: usize,
    pub reference_digest: String,
    pub protocol: EstimationProtocol,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct EstimateOptions {
    pub seed: u64,
    /// Replaces the artifact's support size.
    pub support_size: Option<usize>,
    /// Replaces the artifact's repeat count.
    pub n_repeats: Option<usize>,
    /// Permits either replacement above.
    pub allow_protocol_override: bool,
}

/// Maps a measured pseudo value through a calibration artifact.
pub fn estimate_from_pseudo(
    artifact: &CalibrationArtifact,
    phi_pseudo: f64,
) -> Result<(f64, f64, bool, bool)> {
    let mapped = artifact.mapping.apply(phi_pseudo)?;
    let (estimated, clamped) = clamp_to_range(artifact.metric, mapped);
    let (lo, hi) = artifact.pseudo_range();
    Ok((mapped, estimated, clamped, phi_pseudo < lo || phi_pseudo > hi))
}

fn resolve_protocol(
    artifacts: &[&CalibrationArtifact],
    options: &EstimateOptions,
) -> Result<EstimationProtocol> {
    let first = &artifacts[0].protocol;
    for a in &artifacts[1..] {
        let p = &a.protocol;
        if (p.support_size, p.n_repeats, p.train_cap) != (first.support_size, first.n_repeats, first.train_cap) {
            return Err(SpeError::ArtifactMismatch(
                "artifacts were calibrated under different protocols".into(),
            ));
        }
    }
    let support_size = options.support_size.unwrap_or(first.support_size);
    let n_repeats = options.n_repeats.unwrap_or(first.n_repeats);
    let overridden = support_size != first.support_size || n_repeats != first.n_repeats;
    if overridden && !options.allow_protocol_override {
        return Err(SpeError::ArtifactMismatch(format!(
            "artifact protocol is support_size={} n_repeats={}; requested {support_size}/{n_repeats} without override",
            first.support_size, first.n_repeats
        )));
    }
    Ok(EstimationProtocol {
        support_size,
        n_repeats,
        train_cap: first.train_cap,
        seed: options.seed,
        overridden,
    })
}

/// Estimates every artifact's metric from one shared set of reference runs.
pub fn estimate_unlabeled_many(
    deployed: &CheckpointRef,
    unlabeled: &[Image],
    train_pairs: &[LabeledPair],
    adapter: &dyn CheckpointAdapter,
    plugin: &dyn ReferenceSegmenter,
    artifacts: &[&CalibrationArtifact],
    options: &EstimateOptions,
) -> Result<Vec<EstimationResult>> {
    if artifacts.is_empty() {
        return Err(SpeError::validation("no calibration artifacts given"));
    }
    if unlabeled.is_empty() {
        return Err(SpeError::validation("unlabeled cohort is empty"));
    }
    if train_pairs.is_empty() {
        return Err(SpeError::validation("no labeled training pairs"));
    }
    let protocol = resolve_protocol(artifacts, options)?;
    let reference = match protocol.train_cap {
        Some(cap) => &train_pairs[..cap.min(train_pairs.len())],
        None => train_pairs,
    };
    let metrics: Vec<MetricId> = artifacts.iter().map(|a| a.metric).collect();
    let preds = predict_under_test(adapter, deployed, unlabeled)?;
    let run = pseudo_scores(
        plugin,
        unlabeled,
        &preds,
        reference,
        &metrics,
        protocol.support_size,
        protocol.n_repeats,
        |r| seed::derive(options.seed, Stage::Estimate, &[r as u64]),
        |metric| SpeError::UndefinedScore {
            epoch: deployed.epoch,
            metric,
        },
    )?;
    artifacts
        .iter()
        .zip(run.values)
        .map(|(artifact, repeats)| {
            let phi_pseudo = mean(&repeats);
            let (phi_mapped, phi_estimated, clamped, extrapolated) =
                estimate_from_pseudo(artifact, phi_pseudo)?;
            Ok(EstimationResult {
                metric: artifact.metric,
                epoch: deployed.epoch,
                phi_pseudo,
                pseudo_repeat_values: repeats,
                phi_mapped,
                phi_estimated,
                clamped,
                extrapolated,
                n_unlabeled: unlabeled.len(),
                reference_digest: run.digest.clone(),
                protocol: protocol.clone(),
            })
        })
        .collect()
}

/// Single-metric estimation. `metric` must match the artifact.
#[allow(clippy::too_many_arguments)]
pub fn estimate_unlabeled(
    deployed: &CheckpointRef,
    unlabeled: &[Image],
    train_pairs: &[LabeledPair],
    adapter: &dyn CheckpointAdapter,
    plugin: &dyn ReferenceSegmenter,
    artifact: &CalibrationArtifact,
    metric: MetricId,
    options: &EstimateOptions,
) -> Result<EstimationResult> {
    if artifact.metric != metric {
        return Err(SpeError::ArtifactMismatch(format!(
            "artifact was calibrated for {}, requested {metric}",
            artifact.metric
        )));
    }
    let mut out = estimate_unlabeled_many(
        deployed,
        unlabeled,
        train_pairs,
        adapter,
        plugin,
        &[artifact],
        options,
    )?;
    Ok(out.remove(0))
}
