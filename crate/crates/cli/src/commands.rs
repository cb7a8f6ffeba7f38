use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::Serialize;
use spe_core::calibration::{
    collect_pair_sets, load_artifact, save_artifact, select_family_with, CalibrationArtifact,
    CollectOptions, PairSet, Protocol,
};
use spe_core::data::{io, load_dataset, write_dataset, BinaryMask, DatasetLayout, DatasetSplit, GrayConversion, Image};
use spe_core::estimator::{estimate_unlabeled_many, EstimateOptions, EstimationResult};
use spe_core::meta_eval::{emit_report, write_pairs_csv, HoldoutPoint, MetaScore};
use spe_core::metrics::{evaluate_set, SetScore};
use spe_core::segmenter::{
    AdapterRegistry, CheckpointAdapter, CheckpointRef, CheckpointSeries, CommandAdapter,
    ExternalPlugin, ReferenceSegmenter,
};
use spe_core::synthetic::{
    build_synthetic, estimate_holdout, holdout_points, holdout_qualities, holdout_score,
    synthetic_locator, SyntheticSetup,
};
use spe_core::{MetricId, Result, SpeError};

use crate::config::{created_at, RunConfig};
use crate::output::{format_table, mean_std, write_json, write_run_config, write_with_config};

/// Column order of the demo table.
const DEMO_METRICS: [MetricId; 6] = [
    MetricId::Dice,
    MetricId::Hd95,
    MetricId::Precision,
    MetricId::Recall,
    MetricId::Jaccard,
    MetricId::Pearson,
];

fn png_files(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| SpeError::Ingestion {
        path: dir.to_path_buf(),
        reason: e.to_string(),
    })?;
    let mut files = BTreeMap::new();
    for entry in entries {
        let path = entry?.path();
        let is_png = path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("png"));
        if is_png {
            let name = path.file_name().unwrap().to_string_lossy().into_owned();
            files.insert(name, path);
        }
    }
    Ok(files)
}

#[derive(Serialize)]
struct MetricSummary {
    metric: MetricId,
    mean: Option<f64>,
    n_defined: usize,
    n: usize,
}

pub fn metrics(pred_dir: &Path, gt_dir: &Path, metrics: &[MetricId], out: Option<&Path>) -> Result<()> {
    let preds = png_files(pred_dir)?;
    let gts = png_files(gt_dir)?;
    let only_pred: Vec<&String> = preds.keys().filter(|k| !gts.contains_key(*k)).collect();
    let only_gt: Vec<&String> = gts.keys().filter(|k| !preds.contains_key(*k)).collect();
    if !only_pred.is_empty() || !only_gt.is_empty() {
        return Err(SpeError::Validation(format!(
            "unmatched files; only in {}: {only_pred:?}; only in {}: {only_gt:?}",
            pred_dir.display(),
            gt_dir.display()
        )));
    }
    if preds.is_empty() {
        return Err(SpeError::Validation(format!("no PNG files in {}", pred_dir.display())));
    }
    let names: Vec<&String> = preds.keys().collect();
    let p: Vec<BinaryMask> = preds.values().map(|f| io::read_mask(f)).collect::<Result<_>>()?;
    let g: Vec<BinaryMask> = gts.values().map(|f| io::read_mask(f)).collect::<Result<_>>()?;
    let metrics = if metrics.is_empty() { MetricId::ALL.to_vec() } else { metrics.to_vec() };
    let scores: Vec<SetScore> = metrics
        .iter()
        .map(|m| evaluate_set(*m, &p, &g))
        .collect::<Result<_>>()?;

    if let Some(out) = out {
        std::fs::create_dir_all(out)?;
        for s in &scores {
            let mut text = format!("id,{}\n", s.metric);
            for (name, v) in names.iter().zip(&s.per_image) {
                let id = name.trim_end_matches(".png").trim_end_matches(".PNG");
                match v.get() {
                    Some(x) => text.push_str(&format!("{id},{x:.6}\n")),
                    None => text.push_str(&format!("{id},\n")),
                }
            }
            std::fs::write(out.join(format!("{}.csv", s.metric)), text)?;
        }
        let summary: Vec<MetricSummary> = scores
            .iter()
            .map(|s| MetricSummary { metric: s.metric, mean: s.mean, n_defined: s.n_defined, n: s.per_image.len() })
            .collect();
        write_json(&out.join("summary.json"), &serde_json::json!({
            "toolkit_version": spe_core::VERSION,
            "pred_dir": pred_dir,
            "gt_dir": gt_dir,
            "metrics": summary,
        }))?;
    }
    for s in &scores {
        match s.mean {
            Some(m) => println!("{:<10} {m:.6}  ({}/{} defined)", s.metric, s.n_defined, s.per_image.len()),
            None => println!("{:<10} undefined  (0/{} defined)", s.metric, s.per_image.len()),
        }
    }
    if let Some(s) = scores.iter().find(|s| !s.is_defined()) {
        return Err(SpeError::Undefined(format!(
            "{} set score is undefined: no image has a defined value",
            s.metric
        )));
    }
    Ok(())
}

fn timeout(cfg: &RunConfig) -> Duration {
    Duration::from_secs(cfg.plugin_timeout_secs)
}

fn external_plugin(cfg: &RunConfig) -> Result<ExternalPlugin> {
    let cmd = cfg.plugin_cmd.clone().ok_or_else(|| {
        SpeError::Validation("a reference plugin command is required (--plugin-cmd or plugin_cmd)".into())
    })?;
    ExternalPlugin::new(cmd, timeout(cfg))
}

enum ModelAdapter {
    Command(CommandAdapter),
    Builtin(AdapterRegistry, String),
}

/// Labeled data plus the model and reference segmenter for a run.
enum World {
    Synthetic(Box<SyntheticSetup>),
    Real {
        split: DatasetSplit,
        gray: GrayConversion,
        adapter: ModelAdapter,
        plugin: ExternalPlugin,
        series: Option<CheckpointSeries>,
    },
}

impl World {
    fn open(cfg: &RunConfig) -> Result<Self> {
        if let Some(params) = &cfg.synthetic {
            return Ok(World::Synthetic(Box::new(build_synthetic(params, cfg.seed)?)));
        }
        let dataset = cfg.dataset.as_ref().ok_or_else(|| {
            SpeError::Validation("configure either [dataset] or [synthetic]".into())
        })?;
        let root = dataset.manifest.parent().unwrap_or(Path::new("")).to_path_buf();
        let layout = DatasetLayout {
            manifest: dataset.manifest.file_name().map(PathBuf::from).unwrap_or_default(),
            gray: dataset.gray,
        };
        let split = load_dataset(&root, &layout)?;
        let model = cfg.model.clone().unwrap_or(crate::config::ModelConfig {
            adapter: "threshold".into(),
            command: None,
            checkpoints: Vec::new(),
        });
        let adapter = match model.command {
            Some(cmd) => ModelAdapter::Command(CommandAdapter::new(cmd, timeout(cfg))?),
            None => {
                let registry = AdapterRegistry::with_builtins();
                registry.get(&model.adapter)?;
                ModelAdapter::Builtin(registry, model.adapter)
            }
        };
        let series = if model.checkpoints.is_empty() {
            None
        } else {
            Some(CheckpointSeries::new(model.checkpoints)?)
        };
        Ok(World::Real {
            split,
            gray: dataset.gray,
            adapter,
            plugin: external_plugin(cfg)?,
            series,
        })
    }

    fn split(&self) -> &DatasetSplit {
        match self {
            World::Synthetic(s) => &s.split,
            World::Real { split, .. } => split,
        }
    }

    fn adapter(&self) -> &dyn CheckpointAdapter {
        match self {
            World::Synthetic(s) => &s.adapter,
            World::Real { adapter: ModelAdapter::Command(c), .. } => c,
            World::Real { adapter: ModelAdapter::Builtin(registry, name), .. } => {
                registry.get(name).expect("adapter name checked at open")
            }
        }
    }

    fn plugin(&self) -> &dyn ReferenceSegmenter {
        match self {
            World::Synthetic(s) => &s.reference,
            World::Real { plugin, .. } => plugin,
        }
    }

    fn series(&self) -> Result<&CheckpointSeries> {
        match self {
            World::Synthetic(s) => Ok(&s.series),
            World::Real { series, .. } => series
                .as_ref()
                .ok_or_else(|| SpeError::Validation("no checkpoints configured under [model]".into())),
        }
    }

    fn gray(&self) -> GrayConversion {
        match self {
            World::Synthetic(_) => GrayConversion::default(),
            World::Real { gray, .. } => *gray,
        }
    }
}

fn build_artifacts(cfg: &RunConfig, pair_sets: Vec<PairSet>, hashes: Vec<String>, options: &CollectOptions) -> Result<Vec<CalibrationArtifact>> {
    pair_sets
        .into_iter()
        .map(|psi| {
            let family = match cfg.family {
                Some(f) => Some(f),
                None if cfg.log_linear_all => Some(select_family_with(&psi, true)?.chosen),
                None => None,
            };
            CalibrationArtifact::build(psi, family, Protocol::from_options(options, hashes.clone()), created_at(), cfg.to_json())
        })
        .collect()
}

fn collect_options(cfg: &RunConfig, seed: u64) -> CollectOptions {
    CollectOptions {
        support_size: cfg.support_size,
        n_repeats: cfg.n_repeats,
        seed,
        train_cap: cfg.train_cap,
    }
}

fn write_calibration(out: &Path, artifact: &CalibrationArtifact, holdout: &[HoldoutPoint], cfg: &RunConfig) -> Result<Vec<MetaScore>> {
    let dir = out.join(artifact.metric.name());
    save_artifact(artifact, &dir.join("artifact.json"))?;
    write_pairs_csv(&artifact.pair_set, &dir.join("pairs.csv"))?;
    Ok(emit_report(&artifact.pair_set, &artifact.mapping, holdout, &dir, &cfg.to_json())?.scores)
}

fn print_mapping(a: &CalibrationArtifact) {
    let (lo, hi) = a.pseudo_range();
    println!(
        "{:<10} {} a={:.6} b={:.6} sse={:.3e} pseudo range [{lo:.4}, {hi:.4}] K={}",
        a.metric,
        a.mapping.family,
        a.mapping.a,
        a.mapping.b,
        a.mapping.residual_sse,
        a.pair_set.len()
    );
}

pub fn calibrate(cfg: &RunConfig, out: &Path) -> Result<()> {
    let world = World::open(cfg)?;
    let metrics = cfg.metrics_or(&[MetricId::Dice]);
    let options = collect_options(cfg, cfg.seed);
    let collected = collect_pair_sets(world.series()?, world.split(), world.adapter(), world.plugin(), &metrics, &options)?;
    let artifacts = build_artifacts(cfg, collected.pair_sets, collected.checkpoint_hashes, &options)?;
    std::fs::create_dir_all(out)?;
    write_run_config(out, cfg)?;
    if let World::Synthetic(s) = &world {
        write_dataset(&out.join("dataset"), &s.split)?;
    }
    for a in &artifacts {
        write_calibration(out, a, &[], cfg)?;
        print_mapping(a);
    }
    Ok(())
}

#[derive(Serialize)]
struct EstimateFile<'a> {
    deployed: &'a CheckpointRef,
    results: &'a [EstimationResult],
}

pub fn estimate(cfg: &RunConfig, out: &Path) -> Result<()> {
    if cfg.estimate.artifacts.is_empty() {
        return Err(SpeError::Validation("no calibration artifact given (--artifact)".into()));
    }
    let artifacts = cfg
        .estimate
        .artifacts
        .iter()
        .map(|p| load_artifact(p))
        .collect::<Result<Vec<_>>>()?;
    let calibrated: Vec<MetricId> = artifacts.iter().map(|a| a.metric).collect();
    for m in &cfg.metrics {
        if !calibrated.contains(m) {
            return Err(SpeError::ArtifactMismatch(format!(
                "requested metric {m} but the artifacts cover {calibrated:?}"
            )));
        }
    }
    let selected: Vec<&CalibrationArtifact> = artifacts
        .iter()
        .filter(|a| cfg.metrics.is_empty() || cfg.metrics.contains(&a.metric))
        .collect();

    let world = World::open(cfg)?;
    let deployed = match (&cfg.estimate.deployed, cfg.estimate.deployed_quality, &world) {
        (Some(d), _, _) => d.clone(),
        (None, Some(q), World::Synthetic(s)) => CheckpointRef::new("deployed", 0, synthetic_locator(s.curve.invert(q))),
        _ => {
            return Err(SpeError::Validation(
                "no deployed checkpoint (--checkpoint-locator, or --deployed-quality for synthetic runs)".into(),
            ))
        }
    };
    let dir = cfg
        .estimate
        .unlabeled_dir
        .as_ref()
        .ok_or_else(|| SpeError::Validation("no unlabeled image directory (--unlabeled)".into()))?;
    let images: Vec<Image> = png_files(dir)?
        .values()
        .map(|p| io::read_image(p, world.gray()))
        .collect::<Result<_>>()?;
    if images.is_empty() {
        return Err(SpeError::Validation(format!("no PNG images in {}", dir.display())));
    }
    let options = EstimateOptions {
        seed: cfg.seed,
        support_size: Some(cfg.support_size).filter(|s| *s != selected[0].protocol.support_size && cfg.estimate.allow_protocol_override),
        n_repeats: Some(cfg.n_repeats).filter(|r| *r != selected[0].protocol.n_repeats && cfg.estimate.allow_protocol_override),
        allow_protocol_override: cfg.estimate.allow_protocol_override,
    };
    let results = estimate_unlabeled_many(
        &deployed,
        &images,
        &world.split().train,
        world.adapter(),
        world.plugin(),
        &selected,
        &options,
    )?;
    write_with_config(&out.join("estimate.json"), cfg, EstimateFile { deployed: &deployed, results: &results })?;
    for r in &results {
        let mut flags = Vec::new();
        if r.extrapolated {
            flags.push("extrapolated");
        }
        if r.clamped {
            flags.push("clamped");
        }
        println!(
            "{:<10} pseudo {:.6} -> estimated {:.6}  (n={}){}",
            r.metric,
            r.phi_pseudo,
            r.phi_estimated,
            r.n_unlabeled,
            if flags.is_empty() { String::new() } else { format!(" [{}]", flags.join(", ")) }
        );
    }
    Ok(())
}

#[derive(Serialize)]
struct SeedResult {
    seed: u64,
    scores: Vec<MetaScore>,
}

#[derive(Serialize)]
struct Aggregate {
    metric: MetricId,
    mae_mean: Option<f64>,
    mae_std: Option<f64>,
    corr_mean: Option<f64>,
    corr_std: Option<f64>,
}

#[derive(Serialize)]
struct DemoSummary {
    seeds: Vec<SeedResult>,
    aggregate: Vec<Aggregate>,
}

pub fn synth_demo(cfg: &RunConfig, out: &Path) -> Result<()> {
    let mut cfg = cfg.clone();
    cfg.synthetic.get_or_insert_with(Default::default);
    let params = cfg.synthetic.clone().unwrap();
    let metrics = cfg.metrics_or(&DEMO_METRICS);
    std::fs::create_dir_all(out)?;
    write_run_config(out, &cfg)?;
    let qualities = holdout_qualities(cfg.holdout_levels, params.quality_range);
    let mut rows = Vec::new();
    for k in 0..cfg.n_seeds as u64 {
        let seed = cfg.seed + k;
        let setup = build_synthetic(&params, seed)?;
        let options = collect_options(&cfg, seed);
        let collected = collect_pair_sets(&setup.series, &setup.split, &setup.adapter, &setup.reference, &metrics, &options)?;
        let artifacts = build_artifacts(&cfg, collected.pair_sets, collected.checkpoint_hashes, &options)?;
        let holdout = if qualities.is_empty() { Vec::new() } else { estimate_holdout(&setup, &artifacts, &qualities, seed)? };
        let seed_dir = out.join(format!("seed_{seed}"));
        write_dataset(&seed_dir.join("dataset"), &setup.split)?;
        let mut scores = Vec::new();
        for (i, a) in artifacts.iter().enumerate() {
            let points = if holdout.is_empty() { Vec::new() } else { holdout_points(&holdout, i) };
            let report = write_calibration(&seed_dir, a, &points, &cfg)?;
            scores.push(if holdout.is_empty() {
                report[0].clone()
            } else {
                holdout_score(&holdout, i, a.metric)?
            });
        }
        rows.push((seed, scores));
    }
    let table = format_table(&metrics, &rows);
    print!("{table}");
    std::fs::write(out.join("table.txt"), &table)?;
    let aggregate = metrics
        .iter()
        .enumerate()
        .map(|(i, m)| {
            let maes: Vec<f64> = rows.iter().map(|r| r.1[i].mae).collect();
            let corrs: Vec<f64> = rows.iter().filter_map(|r| r.1[i].correlation).collect();
            let (mae_mean, mae_std) = mean_std(&maes);
            let (corr_mean, corr_std) = mean_std(&corrs);
            Aggregate { metric: *m, mae_mean, mae_std, corr_mean, corr_std }
        })
        .collect();
    let seeds = rows.into_iter().map(|(seed, scores)| SeedResult { seed, scores }).collect();
    write_with_config(&out.join("demo_summary.json"), &cfg, DemoSummary { seeds, aggregate })
}

/// Writes, for every query, the pixelwise majority of the support labels.
pub fn echo_plugin(workdir: &Path) -> Result<()> {
    let labels: Vec<BinaryMask> = png_files(&workdir.join("support/labels"))?
        .values()
        .map(|p| io::read_mask(p))
        .collect::<Result<_>>()?;
    let queries = png_files(&workdir.join("query/images"))?;
    let first = labels
        .first()
        .ok_or_else(|| SpeError::Validation("support set is empty".into()))?;
    let (h, w) = first.shape();
    let mut votes = vec![0usize; h * w];
    for m in &labels {
        for (v, b) in votes.iter_mut().zip(m.bits()) {
            *v += usize::from(*b);
        }
    }
    let vote = BinaryMask::new(h, w, votes.iter().map(|v| 2 * v >= labels.len()).collect())?;
    for name in queries.keys() {
        io::write_mask(&workdir.join("out/predictions").join(name), &vote)?;
    }
    Ok(())
}
