//! Pair collection across a checkpoint series, least-squares mapping fits,
//! and the persisted calibration artifact.

use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{BinaryMask, DatasetSplit, Image, LabeledPair};
use crate::error::{Result, SpeError};
use crate::metrics::{evaluate_set, MetricId};
use crate::seed::{self, Stage};
use crate::segmenter::{
    masks_digest, predict_under_test, reference_infer, CheckpointAdapter, CheckpointSeries,
    ReferenceSegmenter, SupportSet, MAX_SUPPORT,
};

pub const SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_SUPPORT_SIZE: usize = MAX_SUPPORT;
pub const DEFAULT_REPEATS: usize = 6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerformancePair {
    pub epoch: u32,
    pub phi_real: f64,
    pub phi_pseudo: f64,
    pub pseudo_repeat_values: Vec<f64>,
    /// SHA-256 over the reference outputs of every repeat, in repeat order.
    pub reference_digest: String,
}

/// The (pseudo, real) observations for one metric, one per checkpoint.
#[derive(Clone, Debug, PartialEq)]
pub struct PairSet {
    pub metric: MetricId,
    pub pairs: Vec<PerformancePair>,
}

impl PairSet {
    pub fn new(metric: MetricId, pairs: Vec<PerformancePair>) -> Result<Self> {
        if pairs.len() < 2 {
            return Err(SpeError::validation(format!(
                "pair set needs at least 2 pairs, got {}",
                pairs.len()
            )));
        }
        let mut epochs: Vec<u32> = pairs.iter().map(|p| p.epoch).collect();
        epochs.sort_unstable();
        if epochs.windows(2).any(|w| w[0] == w[1]) {
            return Err(SpeError::validation("pair set epochs must be unique"));
        }
        Ok(Self { metric, pairs })
    }

    /// Builds a pair set straight from `(pseudo, real)` values, epochs 1..=K.
    pub fn from_values(metric: MetricId, pseudo: &[f64], real: &[f64]) -> Result<Self> {
        if pseudo.len() != real.len() {
            return Err(SpeError::validation("pseudo and real lengths differ"));
        }
        let pairs = pseudo
            .iter()
            .zip(real)
            .enumerate()
            .map(|(i, (&p, &r))| PerformancePair {
                epoch: i as u32 + 1,
                phi_real: r,
                phi_pseudo: p,
                pseudo_repeat_values: vec![p],
                reference_digest: String::new(),
            })
            .collect();
        Self::new(metric, pairs)
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn pseudo(&self) -> Vec<f64> {
        self.pairs.iter().map(|p| p.phi_pseudo).collect()
    }

    pub fn real(&self) -> Vec<f64> {
        self.pairs.iter().map(|p| p.phi_real).collect()
    }

    /// Observed `(min, max)` of the pseudo-metric.
    pub fn pseudo_range(&self) -> (f64, f64) {
        self.pairs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
            (lo.min(p.phi_pseudo), hi.max(p.phi_pseudo))
        })
    }
}

/// Parameters of the pseudo-metric protocol.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CollectOptions {
    pub support_size: usize,
    pub n_repeats: usize,
    pub seed: u64,
    /// Score only the first `n` training pairs.
    pub train_cap: Option<usize>,
}

impl CollectOptions {
    pub fn new(seed: u64) -> Self {
        Self {
            support_size: DEFAULT_SUPPORT_SIZE,
            n_repeats: DEFAULT_REPEATS,
            seed,
            train_cap: None,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.support_size == 0 || self.support_size > MAX_SUPPORT {
            return Err(SpeError::validation(format!(
                "support size must be in 1..={MAX_SUPPORT}, got {}",
                self.support_size
            )));
        }
        if self.n_repeats == 0 {
            return Err(SpeError::validation("need at least one repeat"));
        }
        if self.train_cap == Some(0) {
            return Err(SpeError::validation("train cap must be positive"));
        }
        Ok(())
    }
}

/// Per-repeat reference scores for several metrics.
pub(crate) struct PseudoRun {
    /// `values[m][r]`: metric `m`, repeat `r`.
    pub values: Vec<Vec<f64>>,
    pub digest: String,
}

/// Draws `min(support_size, pool)` distinct indices in random order.
pub fn sample_support_indices(pool: usize, support_size: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx: Vec<usize> = (0..pool).collect();
    let k = support_size.min(pool);
    let (chosen, _) = idx.partial_shuffle(&mut rng, k);
    chosen.to_vec()
}

/// Conditions the reference segmenter on `(images, predictions)` and scores
/// its output on the labeled reference pairs, once per repeat.
/// `undefined` reports a metric whose set score is undefined.
#[allow(clippy::too_many_arguments)]
pub(crate) fn pseudo_scores(
    plugin: &dyn ReferenceSegmenter,
    images: &[Image],
    predictions: &[BinaryMask],
    reference: &[LabeledPair],
    metrics: &[MetricId],
    support_size: usize,
    n_repeats: usize,
    repeat_seed: impl Fn(usize) -> u64,
    undefined: impl Fn(MetricId) -> SpeError,
) -> Result<PseudoRun> {
    let queries: Vec<Image> = reference.iter().map(|p| p.image.clone()).collect();
    let labels: Vec<BinaryMask> = reference.iter().map(|p| p.label.clone()).collect();
    let mut values = vec![Vec::with_capacity(n_repeats); metrics.len()];
    let mut outputs = Vec::new();
    for repeat in 0..n_repeats {
        let chosen = sample_support_indices(images.len(), support_size, repeat_seed(repeat));
        let pairs = chosen
            .iter()
            .map(|&i| LabeledPair::new(format!("s{i:04}"), images[i].clone(), predictions[i].clone()))
            .collect::<Result<Vec<_>>>()?;
        let support = SupportSet::new(pairs)?;
        let out = reference_infer(plugin, &support, &queries)?;
        for (m, metric) in metrics.iter().enumerate() {
            let score = evaluate_set(*metric, &out, &labels)?;
            values[m].push(score.mean.ok_or_else(|| undefined(*metric))?);
        }
        outputs.extend(out);
    }
    Ok(PseudoRun {
        values,
        digest: masks_digest(&outputs),
    })
}

/// Result of a multi-metric collection.
#[derive(Clone, Debug, PartialEq)]
pub struct Collected {
    pub pair_sets: Vec<PairSet>,
    /// SHA-256 of each checkpoint's test-set predictions, in series order.
    pub checkpoint_hashes: Vec<String>,
}

/// Collects one pair set per metric. Reference inference runs once per
/// checkpoint and repeat and is scored for every metric.
pub fn collect_pair_sets(
    series: &CheckpointSeries,
    split: &DatasetSplit,
    adapter: &dyn CheckpointAdapter,
    plugin: &dyn ReferenceSegmenter,
    metrics: &[MetricId],
    options: &CollectOptions,
) -> Result<Collected> {
    options.validate()?;
    if metrics.is_empty() {
        return Err(SpeError::validation("no metrics requested"));
    }
    if split.test.is_empty() || split.train.is_empty() {
        return Err(SpeError::validation(
            "calibration needs labeled train and test partitions",
        ));
    }
    let test_images: Vec<Image> = split.test.iter().map(|p| p.image.clone()).collect();
    let test_labels: Vec<BinaryMask> = split.test.iter().map(|p| p.label.clone()).collect();
    let reference = match options.train_cap {
        Some(cap) => &split.train[..cap.min(split.train.len())],
        None => &split.train[..],
    };

    let per_checkpoint = series
        .checkpoints()
        .par_iter()
        .map(|ckpt| -> Result<(Vec<PerformancePair>, String)> {
            let preds = predict_under_test(adapter, ckpt, &test_images)?;
            let undefined = |metric| SpeError::UndefinedScore {
                epoch: ckpt.epoch,
                metric,
            };
            let real = metrics
                .iter()
                .map(|m| evaluate_set(*m, &preds, &test_labels)?.mean.ok_or_else(|| undefined(*m)))
                .collect::<Result<Vec<f64>>>()?;
            let run = pseudo_scores(
                plugin,
                &test_images,
                &preds,
                reference,
                metrics,
                options.support_size,
                options.n_repeats,
                |r| seed::derive(options.seed, Stage::Support, &[ckpt.epoch as u64, r as u64]),
                undefined,
            )?;
            let pairs = metrics
                .iter()
                .enumerate()
                .map(|(m, _)| {
                    let repeats = run.values[m].clone();
                    PerformancePair {
                        epoch: ckpt.epoch,
                        phi_real: real[m],
                        phi_pseudo: mean(&repeats),
                        pseudo_repeat_values: repeats,
                        reference_digest: run.digest.clone(),
                    }
                })
                .collect();
            Ok((pairs, masks_digest(&preds)))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut checkpoint_hashes = Vec::with_capacity(per_checkpoint.len());
    let mut by_metric: Vec<Vec<PerformancePair>> = vec![Vec::new(); metrics.len()];
    for (pairs, hash) in per_checkpoint {
        checkpoint_hashes.push(hash);
        for (m, p) in pairs.into_iter().enumerate() {
            by_metric[m].push(p);
        }
    }
    let pair_sets = metrics
        .iter()
        .zip(by_metric)
        .map(|(m, pairs)| PairSet::new(*m, pairs))
        .collect::<Result<_>>()?;
    Ok(Collected {
        pair_sets,
        checkpoint_hashes,
    })
}

pub fn collect_pairs(
    series: &CheckpointSeries,
    split: &DatasetSplit,
    adapter: &dyn CheckpointAdapter,
    plugin: &dyn ReferenceSegmenter,
    metric: MetricId,
    options: &CollectOptions,
) -> Result<PairSet> {
    let mut c = collect_pair_sets(series, split, adapter, plugin, &[metric], options)?;
    Ok(c.pair_sets.remove(0))
}

pub(crate) fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Linear,
    LogLinear,
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(match self {
            Family::Linear => "linear",
            Family::LogLinear => "log_linear",
        })
    }
}

impl std::str::FromStr for Family {
    type Err = SpeError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(Family::Linear),
            "log_linear" => Ok(Family::LogLinear),
            other => Err(SpeError::Parse {
                what: "fit family".into(),
                reason: format!("unknown family {other:?}"),
            }),
        }
    }
}

/// `G(x) = a*x + b` or `G(x) = a*ln(x) + b`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MappingFunction {
    pub family: Family,
    pub a: f64,
    pub b: f64,
    pub residual_sse: f64,
}

impl MappingFunction {
    pub fn apply(&self, x: f64) -> Result<f64> {
        match self.family {
            Family::Linear => Ok(self.a * x + self.b),
            Family::LogLinear if x > 0.0 => Ok(self.a * x.ln() + self.b),
            Family::LogLinear => Err(SpeError::Domain(format!(
                "log-linear mapping needs x > 0, got {x}"
            ))),
        }
    }
}

/// Ordinary least squares of `y` on `x` through centered sums.
pub fn fit_xy(x: &[f64], y: &[f64], family: Family) -> Result<MappingFunction> {
    if x.len() != y.len() {
        return Err(SpeError::Fit("x and y lengths differ".into()));
    }
    if x.len() < 2 {
        return Err(SpeError::Fit(format!("need at least 2 points, got {}", x.len())));
    }
    let predictor: Vec<f64> = match family {
        Family::Linear => x.to_vec(),
        Family::LogLinear => {
            let bad: Vec<usize> = (0..x.len()).filter(|&i| !(x[i] > 0.0)).collect();
            if !bad.is_empty() {
                return Err(SpeError::Fit(format!(
                    "log-linear fit needs positive predictors; offending indices {bad:?}"
                )));
            }
            x.iter().map(|v| v.ln()).collect()
        }
    };
    if predictor.iter().all(|v| *v == predictor[0]) {
        return Err(SpeError::Fit("predictor has zero variance".into()));
    }
    let n = predictor.len() as f64;
    let mx = predictor.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (sxx, sxy) = predictor
        .iter()
        .zip(y)
        .fold((0.0, 0.0), |(sxx, sxy), (xi, yi)| {
            (sxx + (xi - mx) * (xi - mx), sxy + (xi - mx) * (yi - my))
        });
    let a = sxy / sxx;
    let b = my - a * mx;
    let residual_sse = predictor
        .iter()
        .zip(y)
        .map(|(xi, yi)| (yi - (a * xi + b)).powi(2))
        .sum();
    Ok(MappingFunction {
        family,
        a,
        b,
        residual_sse,
    })
}

/// Least-squares fit of real on pseudo performance.
pub fn fit_mapping(psi: &PairSet, family: Family) -> Result<MappingFunction> {
    if family == Family::LogLinear {
        let bad: Vec<u32> = psi
            .pairs
            .iter()
            .filter(|p| !(p.phi_pseudo > 0.0))
            .map(|p| p.epoch)
            .collect();
        if !bad.is_empty() {
            return Err(SpeError::Fit(format!(
                "log-linear fit needs positive pseudo values; offending epochs {bad:?}"
            )));
        }
    }
    fit_xy(&psi.pseudo(), &psi.real(), family)
}

/// Which families were tried and how they fit.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FamilySelection {
    pub chosen: Family,
    pub linear_sse: f64,
    pub log_linear_sse: Option<f64>,
}

/// Linear unless log-linear is considered, feasible, and strictly better.
pub fn select_family_with(psi: &PairSet, consider_log: bool) -> Result<FamilySelection> {
    let linear = fit_mapping(psi, Family::Linear)?;
    let log = if consider_log {
        fit_mapping(psi, Family::LogLinear).ok()
    } else {
        None
    };
    let chosen = match log {
        Some(l) if l.residual_sse < linear.residual_sse => Family::LogLinear,
        _ => Family::Linear,
    };
    Ok(FamilySelection {
        chosen,
        linear_sse: linear.residual_sse,
        log_linear_sse: log.map(|l| l.residual_sse),
    })
}

/// Log-linear is considered for hd95 only.
pub fn select_family(psi: &PairSet) -> Result<FamilySelection> {
    select_family_with(psi, psi.metric == MetricId::Hd95)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Protocol {
    pub support_size: usize,
    pub n_repeats: usize,
    pub seed: u64,
    pub train_cap: Option<usize>,
    pub checkpoint_hashes: Vec<String>,
}

impl Protocol {
    pub fn from_options(options: &CollectOptions, checkpoint_hashes: Vec<String>) -> Self {
        Self {
            support_size: options.support_size,
            n_repeats: options.n_repeats,
            seed: options.seed,
            train_cap: options.train_cap,
            checkpoint_hashes,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CalibrationArtifact {
    pub metric: MetricId,
    pub mapping: MappingFunction,
    pub selection: FamilySelection,
    pub pair_set: PairSet,
    pub protocol: Protocol,
    /// Unix seconds.
    pub created_at: u64,
    pub toolkit_version: String,
    /// Caller configuration echoed verbatim.
    pub run_config: serde_json::Value,
}

impl CalibrationArtifact {
    /// Fits the mapping (family chosen by `family` or automatic selection).
    pub fn build(
        pair_set: PairSet,
        family: Option<Family>,
        protocol: Protocol,
        created_at: u64,
        run_config: serde_json::Value,
    ) -> Result<Self> {
        let selection = match family {
            Some(f) => {
                let chosen = fit_mapping(&pair_set, f)?;
                let linear = fit_mapping(&pair_set, Family::Linear)?;
                let log = fit_mapping(&pair_set, Family::LogLinear).ok();
                FamilySelection {
                    chosen: chosen.family,
                    linear_sse: linear.residual_sse,
                    log_linear_sse: log.map(|l| l.residual_sse),
                }
            }
            None => select_family(&pair_set)?,
        };
        let mapping = fit_mapping(&pair_set, selection.chosen)?;
        Ok(Self {
            metric: pair_set.metric,
            mapping,
            selection,
            pair_set,
            protocol,
            created_at,
            toolkit_version: crate::VERSION.to_string(),
            run_config,
        })
    }

    pub fn pseudo_range(&self) -> (f64, f64) {
        self.pair_set.pseudo_range()
    }

    /// Canonical JSON: sorted keys, shortest round-trip floats, trailing newline.
    pub fn to_canonical_json(&self) -> String {
        let doc = ArtifactDoc::from(self);
        let value = serde_json::to_value(&doc).expect("artifact serializes");
        serde_json::to_string_pretty(&value).expect("value serializes") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let parse_err = |reason: String| SpeError::Parse {
            what: "calibration artifact".into(),
            reason,
        };
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| parse_err(e.to_string()))?;
        match value.get("schema_version").and_then(|v| v.as_u64()) {
            Some(v) if v == SCHEMA_VERSION as u64 => {}
            Some(v) => {
                return Err(SpeError::ArtifactMismatch(format!(
                    "schema_version {v} is not supported (expected {SCHEMA_VERSION})"
                )))
            }
            None => return Err(parse_err("missing schema_version".into())),
        }
        let doc: ArtifactDoc = serde_json::from_value(value).map_err(|e| parse_err(e.to_string()))?;
        doc.try_into()
    }
}

pub fn save_artifact(artifact: &CalibrationArtifact, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, artifact.to_canonical_json())?;
    Ok(())
}

pub fn load_artifact(path: &Path) -> Result<CalibrationArtifact> {
    let text = std::fs::read_to_string(path).map_err(|e| SpeError::ingestion(path, e))?;
    CalibrationArtifact::from_json(&text)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ArtifactDoc {
    schema_version: u32,
    toolkit_version: String,
    metric: MetricId,
    family: Family,
    a: f64,
    b: f64,
    residual_sse: f64,
    candidates: Candidates,
    pseudo_range: [f64; 2],
    protocol: Protocol,
    pairs: Vec<PerformancePair>,
    created_at: u64,
    run_config: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Candidates {
    linear_sse: f64,
    log_linear_sse: Option<f64>,
}

impl From<&CalibrationArtifact> for ArtifactDoc {
    fn from(a: &CalibrationArtifact) -> Self {
        let (lo, hi) = a.pseudo_range();
        ArtifactDoc {
            schema_version: SCHEMA_VERSION,
            toolkit_version: a.toolkit_version.clone(),
            metric: a.metric,
            family: a.mapping.family,
            a: a.mapping.a,
            b: a.mapping.b,
            residual_sse: a.mapping.residual_sse,
            candidates: Candidates {
                linear_sse: a.selection.linear_sse,
                log_linear_sse: a.selection.log_linear_sse,
            },
            pseudo_range: [lo, hi],
            protocol: a.protocol.clone(),
            pairs: a.pair_set.pairs.clone(),
            created_at: a.created_at,
            run_config: a.run_config.clone(),
        }
    }
}

impl TryFrom<ArtifactDoc> for CalibrationArtifact {
    type Error = SpeError;

    fn try_from(d: ArtifactDoc) -> Result<Self> {
        if d.residual_sse < 0.0 {
            return Err(SpeError::Parse {
                what: "calibration artifact".into(),
                reason: "negative residual_sse".into(),
            });
        }
        Ok(CalibrationArtifact {
            metric: d.metric,
            mapping: MappingFunction {
                family: d.family,
                a: d.a,
                b: d.b,
                residual_sse: d.residual_sse,
            },
            selection: FamilySelection {
                chosen: d.family,
                linear_sse: d.candidates.linear_sse,
                log_linear_sse: d.candidates.log_linear_sse,
            },
            pair_set: PairSet::new(d.metric, d.pairs)?,
            protocol: d.protocol,
            created_at: d.created_at,
            toolkit_version: d.toolkit_version,
            run_config: d.run_config,
        })
    }
}
