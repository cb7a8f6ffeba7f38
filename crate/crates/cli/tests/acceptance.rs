//! Acceptance criteria. Prints one `PASS` / `FAIL` line per criterion and
//! exits nonzero if any fails.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spe_core::calibration::{fit_mapping, select_family, CollectOptions, Family, MappingFunction, PairSet};
use spe_core::data::{io, resize_pair, slice_volume, BinaryMask, GrayConversion, Image, LabeledPair, Volume};
use spe_core::meta_eval::{correlation, emit_report, mae, read_report_csv, scores_from_rows, HoldoutPoint};
use spe_core::metrics::{dice, jaccard};
use spe_core::segmenter::{reference_infer, ExternalPlugin, SupportSet};
use spe_core::synthetic::{
    build_synthetic, calibrate_synthetic, estimate_holdout, holdout_qualities, holdout_score, SyntheticParams,
};
use spe_core::{MetricId, SpeError};

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn spe_bin() -> &'static str {
    env!("CARGO_BIN_EXE_spe")
}

// ---------------------------------------------------------------- oracles

fn random_mask(rng: &mut ChaCha8Rng, h: usize, w: usize) -> BinaryMask {
    let density: f64 = rng.random_range(0.0..1.0);
    BinaryMask::from_fn(h, w, |_, _| rng.random_bool(density))
}

fn single_pixel(h: usize, w: usize, r: usize, c: usize) -> BinaryMask {
    BinaryMask::from_fn(h, w, |y, x| y == r && x == c)
}

struct Counts {
    tp: f64,
    fp: f64,
    fneg: f64,
    tn: f64,
}

fn counts(p: &BinaryMask, g: &BinaryMask) -> Counts {
    let mut c = Counts { tp: 0.0, fp: 0.0, fneg: 0.0, tn: 0.0 };
    for r in 0..p.height() {
        for col in 0..p.width() {
            match (p.get(r, col), g.get(r, col)) {
                (true, true) => c.tp += 1.0,
                (true, false) => c.fp += 1.0,
                (false, true) => c.fneg += 1.0,
                (false, false) => c.tn += 1.0,
            }
        }
    }
    c
}

fn oracle(metric: MetricId, p: &BinaryMask, g: &BinaryMask) -> Option<f64> {
    let c = counts(p, g);
    match metric {
        MetricId::Dice => Some(if c.tp + c.fp + c.fneg == 0.0 { 1.0 } else { 2.0 * c.tp / (2.0 * c.tp + c.fp + c.fneg) }),
        MetricId::Jaccard => Some(if c.tp + c.fp + c.fneg == 0.0 { 1.0 } else { c.tp / (c.tp + c.fp + c.fneg) }),
        MetricId::Recall => (c.tp + c.fneg > 0.0).then(|| c.tp / (c.tp + c.fneg)),
        MetricId::Precision => (c.tp + c.fp > 0.0).then(|| c.tp / (c.tp + c.fp)),
        MetricId::Pearson => {
            let xs: Vec<f64> = p.bits().iter().map(|b| f64::from(u8::from(*b))).collect();
            let ys: Vec<f64> = g.bits().iter().map(|b| f64::from(u8::from(*b))).collect();
            let n = xs.len() as f64;
            let mx = xs.iter().sum::<f64>() / n;
            let my = ys.iter().sum::<f64>() / n;
            let cov: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
            let vx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
            let vy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
            (vx > 0.0 && vy > 0.0).then(|| cov / (vx.sqrt() * vy.sqrt()))
        }
        MetricId::Hd95 => hd95_oracle(p, g),
    }
}

fn directed_all_pairs(from: &[(usize, usize)], to: &[(usize, usize)]) -> f64 {
    let mut d: Vec<f64> = from
        .iter()
        .map(|&(r, c)| {
            to.iter()
                .map(|&(r2, c2)| {
                    let dy = r as f64 - r2 as f64;
                    let dx = c as f64 - c2 as f64;
                    (dy * dy + dx * dx).sqrt()
                })
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    d.sort_by(f64::total_cmp);
    // smallest rank k with k / n >= 0.95
    let n = d.len();
    let k = (1..=n).find(|k| 100 * k >= 95 * n).unwrap();
    d[k - 1]
}

fn hd95_oracle(p: &BinaryMask, g: &BinaryMask) -> Option<f64> {
    let a = p.foreground();
    let b = g.foreground();
    if a.is_empty() || b.is_empty() {
        return None;
    }
    Some(directed_all_pairs(&a, &b).max(directed_all_pairs(&b, &a)))
}

fn metric_corpus() -> Vec<(BinaryMask, BinaryMask)> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut pairs: Vec<(BinaryMask, BinaryMask)> =
        (0..1000).map(|_| (random_mask(&mut rng, 16, 16), random_mask(&mut rng, 16, 16))).collect();
    let empty = BinaryMask::empty(16, 16);
    let full = BinaryMask::full(16, 16);
    pairs.push((empty.clone(), empty.clone()));
    pairs.push((empty.clone(), full.clone()));
    pairs.push((full.clone(), empty.clone()));
    pairs.push((single_pixel(16, 16, 3, 4), single_pixel(16, 16, 3, 4)));
    pairs.push((single_pixel(16, 16, 0, 0), single_pixel(16, 16, 15, 15)));
    pairs.push((single_pixel(16, 16, 7, 7), full));
    pairs
}

// ------------------------------------------------------------- criteria

fn metric_oracle() -> Outcome {
    let corpus = metric_corpus();
    let start = Instant::now();
    let mut checked = 0usize;
    for (i, (p, g)) in corpus.iter().enumerate() {
        for metric in [
            MetricId::Dice,
            MetricId::Jaccard,
            MetricId::Recall,
            MetricId::Precision,
            MetricId::Pearson,
            MetricId::Hd95,
        ] {
            let got = metric.evaluate(p, g).map_err(|e| e.to_string())?.get();
            let want = oracle(metric, p, g);
            let tol = if metric == MetricId::Hd95 { 1e-9 } else { 1e-12 };
            let ok = match (got, want) {
                (Some(x), Some(y)) => (x - y).abs() <= tol,
                (None, None) => true,
                _ => false,
            };
            check(ok, || format!("pair {i} {metric}: got {got:?}, oracle {want:?}"))?;
            checked += 1;
        }
    }
    let elapsed = start.elapsed();
    check(elapsed < Duration::from_secs(30), || format!("took {elapsed:?}"))?;
    Ok(format!("{checked} values on {} pairs in {:.2?}", corpus.len(), elapsed))
}

fn dice_jaccard_identity() -> Outcome {
    let corpus = metric_corpus();
    let mut worst = 0.0f64;
    for (i, (p, g)) in corpus.iter().enumerate() {
        let d = dice(p, g).map_err(|e| e.to_string())?.value;
        let j = jaccard(p, g).map_err(|e| e.to_string())?.value;
        let err = (d - 2.0 * j / (1.0 + j)).abs();
        check(err <= 1e-12, || format!("pair {i}: dice {d}, jaccard {j}"))?;
        worst = worst.max(err);
    }
    Ok(format!("{} pairs, max deviation {worst:.1e}", corpus.len()))
}

fn sse(x: &[f64], y: &[f64], a: f64, b: f64) -> f64 {
    x.iter().zip(y).map(|(xi, yi)| (yi - (a * xi + b)).powi(2)).sum()
}

fn least_squares() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for set in 0..100 {
        let k = rng.random_range(2..=30);
        let slope: f64 = rng.random_range(-2.0..2.0);
        let icpt: f64 = rng.random_range(-1.0..1.0);
        let x: Vec<f64> = (0..k).map(|_| rng.random_range(0.0..1.0)).collect();
        let y: Vec<f64> = x.iter().map(|xi| slope * xi + icpt + rng.random_range(-0.05..0.05)).collect();
        let psi = PairSet::from_values(MetricId::Dice, &x, &y).map_err(|e| e.to_string())?;
        let m = fit_mapping(&psi, Family::Linear).map_err(|e| e.to_string())?;

        // normal equations on raw sums, solved by Cramer's rule
        let n = k as f64;
        let sx: f64 = x.iter().sum();
        let sy: f64 = y.iter().sum();
        let sxx: f64 = x.iter().map(|v| v * v).sum();
        let sxy: f64 = x.iter().zip(&y).map(|(a, b)| a * b).sum();
        let det = sxx * n - sx * sx;
        let a = (sxy * n - sx * sy) / det;
        let b = (sxx * sy - sx * sxy) / det;
        check((m.a - a).abs() <= 1e-9 * a.abs().max(1.0) && (m.b - b).abs() <= 1e-9 * b.abs().max(1.0), || {
            format!("set {set}: fit ({}, {}) vs normal equations ({a}, {b})", m.a, m.b)
        })?;
        let base = sse(&x, &y, m.a, m.b);
        check((base - m.residual_sse).abs() <= 1e-12 * base.max(1.0), || format!("set {set}: sse mismatch"))?;
        for (da, db) in [(1e-3, 0.0), (-1e-3, 0.0), (0.0, 1e-3), (0.0, -1e-3), (1e-3, 1e-3), (-1e-3, -1e-3), (1e-3, -1e-3), (-1e-3, 1e-3)] {
            let moved = sse(&x, &y, m.a + da, m.b + db);
            check(moved >= base - 1e-15, || format!("set {set}: perturbation ({da}, {db}) lowers sse"))?;
        }
    }
    Ok("100 sets match the normal equations, no perturbation lowers sse".into())
}

fn synthetic_end_to_end() -> Outcome {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().map_err(|e| e.to_string())?;
    let start = Instant::now();
    let seed = 1;
    let score = pool.install(|| -> Result<(f64, Option<f64>), SpeError> {
        let params = SyntheticParams::default();
        let setup = build_synthetic(&params, seed)?;
        let options = CollectOptions {
            support_size: 32,
            n_repeats: 6,
            seed,
            train_cap: None,
        };
        let artifacts = calibrate_synthetic(&setup, &[MetricId::Dice], &options, None, 0, &serde_json::Value::Null)?;
        let qualities = holdout_qualities(5, params.quality_range);
        let holdout = estimate_holdout(&setup, &artifacts, &qualities, seed)?;
        let s = holdout_score(&holdout, 0, MetricId::Dice)?;
        Ok((s.mae, s.correlation))
    });
    let (m, c) = score.map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let corr = c.map_or("undefined".to_string(), |c| format!("{c:.4}"));
    let detail = format!("dice MAE {m:.4}, Corr {corr}, {elapsed:.1?} on one worker");
    check(m <= 0.02, || format!("MAE too high: {detail}"))?;
    check(c.is_some_and(|c| c >= 0.95), || format!("correlation too low: {detail}"))?;
    check(elapsed < Duration::from_secs(300), || format!("too slow: {detail}"))?;
    Ok(detail)
}

fn family_selection() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for set in 0..20 {
        let k = rng.random_range(5..=20);
        let x: Vec<f64> = (0..k).map(|_| rng.random_range(1.0..40.0)).collect();
        let a: f64 = rng.random_range(0.5..3.0);
        let b: f64 = rng.random_range(-1.0..1.0);

        let log_y: Vec<f64> = x.iter().map(|v| a * v.ln() + b).collect();
        let psi = PairSet::from_values(MetricId::Hd95, &x, &log_y).map_err(|e| e.to_string())?;
        let sel = select_family(&psi).map_err(|e| e.to_string())?;
        let log_sse = sel.log_linear_sse.ok_or("log-linear not considered for hd95")?;
        check(sel.chosen == Family::LogLinear && log_sse < sel.linear_sse, || {
            format!("set {set}: log relation chose {} ({log_sse} vs {})", sel.chosen, sel.linear_sse)
        })?;

        let lin_y: Vec<f64> = x.iter().map(|v| a * v + b).collect();
        let psi = PairSet::from_values(MetricId::Hd95, &x, &lin_y).map_err(|e| e.to_string())?;
        let sel = select_family(&psi).map_err(|e| e.to_string())?;
        check(sel.chosen == Family::Linear, || format!("set {set}: linear relation chose {}", sel.chosen))?;
    }
    Ok("20 log-related sets chose log_linear, 20 linear sets chose linear".into())
}

const SMALL_RUN: &str = r#"
seed = 17
metrics = ["dice", "hd95"]
support_size = 16
n_repeats = 2
holdout_levels = 3

[synthetic]
n_shapes = 120
n_checkpoints = 6
curve_levels = 21
"#;

fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                out.insert(path.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&path).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

fn run_spe(args: &[&str], workers: &str) -> Result<(), String> {
    let out = Command::new(spe_bin())
        .args(args)
        .env("SPE_WORKERS", workers)
        .env_remove("SOURCE_DATE_EPOCH")
        .output()
        .map_err(|e| e.to_string())?;
    check(out.status.success(), || {
        format!("spe {args:?} failed: {}", String::from_utf8_lossy(&out.stderr))
    })
}

fn compare_trees(a: &Path, b: &Path, label: &str) -> Result<usize, String> {
    let ta = tree(a);
    let tb = tree(b);
    check(ta.keys().eq(tb.keys()), || format!("{label}: file sets differ"))?;
    for (path, bytes) in &ta {
        check(tb[path] == *bytes, || format!("{label}: {} differs", path.display()))?;
    }
    Ok(ta.len())
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, SMALL_RUN).map_err(|e| e.to_string())?;
    let cfg = cfg.to_str().unwrap();
    let mut files = 0;
    for cmd in ["calibrate", "synth-demo"] {
        let runs = [("a", "1"), ("b", "1"), ("c", "4")];
        for (name, workers) in runs {
            let out = dir.path().join(format!("{cmd}-{name}"));
            run_spe(&[cmd, "--config", cfg, "--out", out.to_str().unwrap()], workers)?;
        }
        let base = dir.path().join(format!("{cmd}-a"));
        let n = compare_trees(&base, &dir.path().join(format!("{cmd}-b")), &format!("{cmd} rerun"))?;
        compare_trees(&base, &dir.path().join(format!("{cmd}-c")), &format!("{cmd} 1 vs 4 workers"))?;
        let has = |suffix: &str| tree(&base).keys().any(|p| p.to_string_lossy().ends_with(suffix));
        check(has("artifact.json") && has(".csv"), || format!("{cmd}: no artifacts or CSVs written"))?;
        files += n;
    }
    Ok(format!("{files} files byte-identical across reruns and 1 vs 4 workers"))
}

fn plugin_protocol() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let labels: Vec<BinaryMask> = (0..3).map(|_| random_mask(&mut rng, 12, 12)).collect();
    let pairs = labels
        .iter()
        .enumerate()
        .map(|(i, l)| {
            let img = Image::from_fn(12, 12, |r, c| ((r * 12 + c + i) % 7) as f64 / 6.0).unwrap();
            LabeledPair::new(format!("s{i}"), img, l.clone()).unwrap()
        })
        .collect();
    let support = SupportSet::new(pairs).map_err(|e| e.to_string())?;
    let queries: Vec<Image> = (0..4).map(|i| Image::from_fn(12, 12, |r, c| (r + c + i) as f64 / 30.0).unwrap()).collect();

    let echo = ExternalPlugin::new(vec![spe_bin().into(), "echo-plugin".into()], Duration::from_secs(60))
        .map_err(|e| e.to_string())?;
    let out = reference_infer(&echo, &support, &queries).map_err(|e| e.to_string())?;
    let vote = BinaryMask::from_fn(12, 12, |r, c| 2 * labels.iter().filter(|l| l.get(r, c)).count() >= labels.len());
    check(out.len() == queries.len() && out.iter().all(|m| *m == vote), || {
        "echo plugin output differs from the majority vote".into()
    })?;

    let sh = |body: &str| vec!["sh".to_string(), "-c".to_string(), body.to_string(), "plugin".to_string()];
    let silent = ExternalPlugin::new(sh("exit 0"), Duration::from_secs(30)).map_err(|e| e.to_string())?;
    match reference_infer(&silent, &support, &queries) {
        Err(SpeError::Reference { .. }) => {}
        other => return Err(format!("missing output: expected reference error, got {other:?}")),
    }
    let failing =
        ExternalPlugin::new(sh("echo plugin-broke >&2; exit 3"), Duration::from_secs(30)).map_err(|e| e.to_string())?;
    match reference_infer(&failing, &support, &queries) {
        Err(SpeError::Reference { stderr, .. }) if stderr.contains("plugin-broke") => {}
        other => return Err(format!("nonzero exit: expected reference error with stderr, got {other:?}")),
    }
    Ok("echo plugin round trip, missing output and nonzero exit reported".into())
}

fn preprocessing() -> Outcome {
    let (h, w) = (8, 8);
    let counts = [0usize, 19, 20, 64];
    let mut labels = Vec::new();
    let mut voxels = Vec::new();
    for (z, &n) in counts.iter().enumerate() {
        for i in 0..h * w {
            labels.push(if i < n { 1.0 } else { 0.0 });
            voxels.push((z * 31 + i) as f64);
        }
    }
    let vol = Volume::new([counts.len(), h, w], voxels).map_err(|e| e.to_string())?;
    let lab = Volume::new([counts.len(), h, w], labels).map_err(|e| e.to_string())?;
    let kept = slice_volume(&vol, &lab, 0, 20, "v").map_err(|e| e.to_string())?;
    let kept_counts: Vec<usize> = kept.iter().map(|p| p.label.count()).collect();
    check(kept_counts == vec![20, 64], || format!("kept slices with counts {kept_counts:?}"))?;

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for i in 0..10 {
        let (sh, sw) = (rng.random_range(20..300), rng.random_range(20..300));
        let img = Image::from_fn(sh, sw, |r, c| ((r * 7 + c * 3) % 255) as f64 / 254.0).unwrap();
        let pair = LabeledPair::new("p", img, random_mask(&mut rng, sh, sw)).map_err(|e| e.to_string())?;
        let resized = resize_pair(&pair, (128, 128)).map_err(|e| e.to_string())?;
        check(resized.image.shape() == (128, 128) && resized.label.shape() == (128, 128), || "wrong canvas".into())?;
        let path = dir.path().join(format!("{i}.png"));
        io::write_mask(&path, &resized.label).map_err(|e| e.to_string())?;
        let (_, _, raw) = io::read_gray_raw(&path, GrayConversion::default()).map_err(|e| e.to_string())?;
        check(raw.iter().all(|v| *v == 0.0 || *v == 255.0), || format!("mask {i} is not binary after resize"))?;
        check(raw.iter().filter(|v| **v != 0.0).count() == resized.label.count(), || format!("mask {i} count changed"))?;
    }
    Ok("19-pixel slice rejected, 20 kept, resized masks stay binary".into())
}

fn meta_eval() -> Outcome {
    let m = mae(&[0.8, 0.6, 0.9], &[0.7, 0.65, 0.9]).map_err(|e| e.to_string())?;
    check((m - 0.05).abs() <= 1e-12, || format!("mae fixture gave {m}"))?;
    let c = correlation(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).map_err(|e| e.to_string())?;
    check((c - 1.0).abs() <= 1e-12, || format!("correlation fixture gave {c}"))?;
    let c = correlation(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).map_err(|e| e.to_string())?;
    check((c + 1.0).abs() <= 1e-12, || format!("anti-correlation fixture gave {c}"))?;
    check(matches!(correlation(&[0.5, 0.5, 0.5], &[0.1, 0.2, 0.3]), Err(SpeError::Undefined(_))), || {
        "constant input did not raise an undefined error".into()
    })?;

    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let x: Vec<f64> = (0..20).map(|_| rng.random_range(0.2..0.9)).collect();
    let y: Vec<f64> = x.iter().map(|v| 0.9 * v + 0.05 + rng.random_range(-0.02..0.02)).collect();
    let psi = PairSet::from_values(MetricId::Dice, &x, &y).map_err(|e| e.to_string())?;
    let mapping: MappingFunction = fit_mapping(&psi, Family::Linear).map_err(|e| e.to_string())?;
    let holdout: Vec<HoldoutPoint> = (0..5)
        .map(|j| {
            let p = 0.25 + 0.12 * j as f64;
            HoldoutPoint { epoch: j + 1, phi_pseudo: p, phi_real: 0.9 * p + 0.05 + rng.random_range(-0.02..0.02) }
        })
        .collect();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let summary = emit_report(&psi, &mapping, &holdout, dir.path(), &serde_json::Value::Null).map_err(|e| e.to_string())?;
    let rows = read_report_csv(&dir.path().join("report.csv")).map_err(|e| e.to_string())?;
    let again = scores_from_rows(MetricId::Dice, &rows).map_err(|e| e.to_string())?;
    check(again.len() == summary.scores.len(), || "cohort count differs".into())?;
    for (a, b) in again.iter().zip(&summary.scores) {
        let corr_ok = match (a.correlation, b.correlation) {
            (Some(x), Some(y)) => (x - y).abs() <= 1e-12,
            (None, None) => true,
            _ => false,
        };
        check((a.mae - b.mae).abs() <= 1e-12 && corr_ok && a.n == b.n, || {
            format!("{:?} scores differ after CSV round trip", a.cohort)
        })?;
    }
    Ok(format!("fixtures hold, {} rows reproduce both cohorts", rows.len()))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("metric-oracle", metric_oracle),
        ("dice-jaccard-identity", dice_jaccard_identity),
        ("least-squares-optimality", least_squares),
        ("synthetic-end-to-end", synthetic_end_to_end),
        ("family-selection", family_selection),
        ("determinism", determinism),
        ("plugin-protocol", plugin_protocol),
        ("preprocessing", preprocessing),
        ("meta-evaluation", meta_eval),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, f) in criteria {
        if !filter.is_empty() && !filter.iter().any(|x| name.contains(x.as_str())) {
            continue;
        }
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| Err("panicked".into()));
        match outcome {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL {name}: {why}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
