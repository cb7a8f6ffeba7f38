//! Accuracy of the estimator itself: MAE and correlation between real and
//! estimated performance, plus the report files.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::calibration::{MappingFunction, PairSet};
use crate::error::{Result, SpeError};
use crate::estimator::clamp_to_range;
use crate::metrics::MetricId;

pub const CSV_HEADER: [&str; 6] = ["epoch", "phi_pseudo", "phi_real", "phi_estimated", "abs_error", "cohort"];
pub const CURVE_SAMPLES: usize = 200;

fn check_lengths(real: &[f64], estimated: &[f64], min: usize) -> Result<()> {
    if real.len() != estimated.len() {
        return Err(SpeError::validation(format!(
            "{} real values for {} estimates",
            real.len(),
            estimated.len()
        )));
    }
    if real.len() < min {
        return Err(SpeError::validation(format!(
            "need at least {min} values, got {}",
            real.len()
        )));
    }
    Ok(())
}

pub fn mae(real: &[f64], estimated: &[f64]) -> Result<f64> {
    check_lengths(real, estimated, 1)?;
    let total: f64 = real.iter().zip(estimated).map(|(r, e)| (r - e).abs()).sum();
    Ok(total / real.len() as f64)
}

/// Sample Pearson correlation.
pub fn correlation(real: &[f64], estimated: &[f64]) -> Result<f64> {
    check_lengths(real, estimated, 2)?;
    let n = real.len() as f64;
    let mr = real.iter().sum::<f64>() / n;
    let me = estimated.iter().sum::<f64>() / n;
    let (mut srr, mut see, mut sre) = (0.0, 0.0, 0.0);
    for (r, e) in real.iter().zip(estimated) {
        let (dr, de) = (r - mr, e - me);
        srr += dr * dr;
        see += de * de;
        sre += dr * de;
    }
    if srr == 0.0 || see == 0.0 {
        return Err(SpeError::Undefined("correlation of a constant sequence".into()));
    }
    Ok((sre / (srr.sqrt() * see.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Cohort {
    Calibration,
    Holdout,
}

impl Cohort {
    pub fn name(self) -> &'static str {
        match self {
            Cohort::Calibration => "calibration",
            Cohort::Holdout => "holdout",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetaScore {
    pub metric: MetricId,
    pub cohort: Cohort,
    pub mae: f64,
    /// `None` for fewer than two points or a constant sequence.
    pub correlation: Option<f64>,
    pub n: usize,
}

impl MetaScore {
    pub fn compute(metric: MetricId, cohort: Cohort, real: &[f64], estimated: &[f64]) -> Result<Self> {
        Ok(Self {
            metric,
            cohort,
            mae: mae(real, estimated)?,
            correlation: correlation(real, estimated).ok(),
            n: real.len(),
        })
    }
}

/// A point never used to fit the mapping.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HoldoutPoint {
    pub epoch: u32,
    pub phi_pseudo: f64,
    pub phi_real: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub epoch: u32,
    pub phi_pseudo: f64,
    pub phi_real: f64,
    pub phi_estimated: f64,
    pub abs_error: f64,
    pub cohort: Cohort,
}

/// Rounds to the six decimals written in the CSV.
pub fn round6(x: f64) -> f64 {
    format!("{x:.6}").parse().expect("formatted float parses")
}

fn row(metric: MetricId, mapping: &MappingFunction, epoch: u32, pseudo: f64, real: f64, cohort: Cohort) -> Result<ReportRow> {
    let (estimated, _) = clamp_to_range(metric, mapping.apply(pseudo)?);
    let (phi_pseudo, phi_real, phi_estimated) = (round6(pseudo), round6(real), round6(estimated));
    Ok(ReportRow {
        epoch,
        phi_pseudo,
        phi_real,
        phi_estimated,
        abs_error: round6((phi_real - phi_estimated).abs()),
        cohort,
    })
}

/// Calibration pairs then holdout points, values rounded to six decimals.
pub fn report_rows(psi: &PairSet, mapping: &MappingFunction, holdout: &[HoldoutPoint]) -> Result<Vec<ReportRow>> {
    let calibration = psi
        .pairs
        .iter()
        .map(|p| row(psi.metric, mapping, p.epoch, p.phi_pseudo, p.phi_real, Cohort::Calibration));
    let held = holdout
        .iter()
        .map(|h| row(psi.metric, mapping, h.epoch, h.phi_pseudo, h.phi_real, Cohort::Holdout));
    calibration.chain(held).collect()
}

/// One score per cohort present in `rows`, calibration first.
pub fn scores_from_rows(metric: MetricId, rows: &[ReportRow]) -> Result<Vec<MetaScore>> {
    [Cohort::Calibration, Cohort::Holdout]
        .into_iter()
        .filter_map(|cohort| {
            let (real, est): (Vec<f64>, Vec<f64>) = rows
                .iter()
                .filter(|r| r.cohort == cohort)
                .map(|r| (r.phi_real, r.phi_estimated))
                .unzip();
            (!real.is_empty()).then(|| MetaScore::compute(metric, cohort, &real, &est))
        })
        .collect()
}

pub fn write_report_csv(rows: &[ReportRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_io)?;
    w.write_record(CSV_HEADER).map_err(csv_io)?;
    for r in rows {
        w.write_record([
            r.epoch.to_string(),
            format!("{:.6}", r.phi_pseudo),
            format!("{:.6}", r.phi_real),
            format!("{:.6}", r.phi_estimated),
            format!("{:.6}", r.abs_error),
            r.cohort.name().to_string(),
        ])
        .map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_report_csv(path: &Path) -> Result<Vec<ReportRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| SpeError::ingestion(path, e))?;
    let header: Vec<String> = r
        .headers()
        .map_err(|e| SpeError::ingestion(path, e))?
        .iter()
        .map(str::to_string)
        .collect();
    if header != CSV_HEADER {
        return Err(SpeError::Parse {
            what: path.display().to_string(),
            reason: format!("unexpected header {header:?}"),
        });
    }
    r.deserialize()
        .map(|row| {
            row.map_err(|e| SpeError::Parse {
                what: path.display().to_string(),
                reason: e.to_string(),
            })
        })
        .collect()
}

/// One row per pair: epoch, pseudo, real, then every repeat value.
pub fn write_pairs_csv(psi: &PairSet, path: &Path) -> Result<()> {
    let repeats = psi.pairs.iter().map(|p| p.pseudo_repeat_values.len()).max().unwrap_or(0);
    let mut w = csv::Writer::from_path(path).map_err(csv_io)?;
    let mut header = vec!["epoch".to_string(), "phi_pseudo".into(), "phi_real".into()];
    header.extend((1..=repeats).map(|r| format!("repeat_{r}")));
    w.write_record(&header).map_err(csv_io)?;
    for p in &psi.pairs {
        let mut rec = vec![p.epoch.to_string(), format!("{:.6}", p.phi_pseudo), format!("{:.6}", p.phi_real)];
        rec.extend(p.pseudo_repeat_values.iter().map(|v| format!("{v:.6}")));
        rec.resize(header.len(), String::new());
        w.write_record(&rec).map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_io(e: csv::Error) -> SpeError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => SpeError::Io(io),
        other => SpeError::Io(std::io::Error::other(format!("{other:?}"))),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReportSummary {
    pub toolkit_version: String,
    pub metric: MetricId,
    pub mapping: MappingFunction,
    pub pseudo_range: [f64; 2],
    pub scores: Vec<MetaScore>,
    pub run_config: serde_json::Value,
}

/// Writes `report.csv`, `calibration.svg` and `summary.json` into `out_dir`.
pub fn emit_report(
    psi: &PairSet,
    mapping: &MappingFunction,
    holdout: &[HoldoutPoint],
    out_dir: &Path,
    run_config: &serde_json::Value,
) -> Result<ReportSummary> {
    std::fs::create_dir_all(out_dir)?;
    let rows = report_rows(psi, mapping, holdout)?;
    write_report_csv(&rows, &out_dir.join("report.csv"))?;
    let (lo, hi) = psi.pseudo_range();
    let summary = ReportSummary {
        toolkit_version: crate::VERSION.to_string(),
        metric: psi.metric,
        mapping: *mapping,
        pseudo_range: [lo, hi],
        scores: scores_from_rows(psi.metric, &rows)?,
        run_config: run_config.clone(),
    };
    std::fs::write(out_dir.join("calibration.svg"), render_svg(psi, mapping, holdout, run_config)?)?;
    std::fs::write(out_dir.join("summary.json"), canonical_json(&summary))?;
    Ok(summary)
}

/// Pretty JSON with sorted keys and a trailing newline.
pub fn canonical_json<T: Serialize>(value: &T) -> String {
    let v = serde_json::to_value(value).expect("serializable");
    serde_json::to_string_pretty(&v).expect("value serializes") + "\n"
}

/// `n` points of the fitted curve, evenly spaced over the observed pseudo range.
pub fn curve_samples(psi: &PairSet, mapping: &MappingFunction, n: usize) -> Result<Vec<(f64, f64)>> {
    let (lo, hi) = psi.pseudo_range();
    (0..n)
        .map(|i| {
            let x = if n == 1 { lo } else { lo + (hi - lo) * i as f64 / (n - 1) as f64 };
            Ok((x, mapping.apply(x)?))
        })
        .collect()
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn render_svg(
    psi: &PairSet,
    mapping: &MappingFunction,
    holdout: &[HoldoutPoint],
    run_config: &serde_json::Value,
) -> Result<String> {
    const W: f64 = 480.0;
    const H: f64 = 360.0;
    const M: f64 = 48.0;
    let curve = curve_samples(psi, mapping, CURVE_SAMPLES)?;
    let points = psi
        .pairs
        .iter()
        .map(|p| (p.phi_pseudo, p.phi_real))
        .chain(holdout.iter().map(|h| (h.phi_pseudo, h.phi_real)));
    let all: Vec<(f64, f64)> = points.chain(curve.iter().copied()).filter(|p| p.0.is_finite() && p.1.is_finite()).collect();
    let bounds = |f: fn(&(f64, f64)) -> f64| {
        let (lo, hi) = all.iter().map(f).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
        if hi > lo { (lo, hi) } else { (lo - 0.5, lo + 0.5) }
    };
    let (x0, x1) = bounds(|p| p.0);
    let (y0, y1) = bounds(|p| p.1);
    let sx = |x: f64| M + (x - x0) / (x1 - x0) * (W - 2.0 * M);
    let sy = |y: f64| H - M - (y - y0) / (y1 - y0) * (H - 2.0 * M);

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#);
    let _ = writeln!(
        s,
        "<metadata>{}</metadata>",
        xml_escape(&serde_json::json!({"toolkit_version": crate::VERSION, "run_config": run_config}).to_string())
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<path d="M{M} {M} V{} H{}" fill="none" stroke="black"/>"#,
        H - M,
        W - M
    );
    let _ = writeln!(s, r#"<text x="{}" y="{}" font-size="12" text-anchor="middle">pseudo {}</text>"#, W / 2.0, H - 12.0, psi.metric);
    let _ = writeln!(s, r#"<text x="14" y="{}" font-size="12" transform="rotate(-90 14 {})" text-anchor="middle">real {}</text>"#, H / 2.0, H / 2.0, psi.metric);
    for (x, anchor) in [(x0, "start"), (x1, "end")] {
        let _ = writeln!(s, r#"<text x="{:.2}" y="{}" font-size="10" text-anchor="{anchor}">{x:.3}</text>"#, sx(x), H - M + 14.0);
    }
    for y in [y0, y1] {
        let _ = writeln!(s, r#"<text x="{}" y="{:.2}" font-size="10" text-anchor="end">{y:.3}</text>"#, M - 4.0, sy(y) + 3.0);
    }
    let path: Vec<String> = curve.iter().map(|(x, y)| format!("{:.2},{:.2}", sx(*x), sy(*y))).collect();
    let _ = writeln!(s, r##"<polyline points="{}" fill="none" stroke="#d62728" stroke-width="1.5"/>"##, path.join(" "));
    for p in &psi.pairs {
        let _ = writeln!(s, r##"<circle cx="{:.2}" cy="{:.2}" r="3" fill="#1f77b4"/>"##, sx(p.phi_pseudo), sy(p.phi_real));
    }
    for h in holdout {
        let _ = writeln!(
            s,
            r##"<rect x="{:.2}" y="{:.2}" width="7" height="7" fill="#2ca02c"/>"##,
            sx(h.phi_pseudo) - 3.5,
            sy(h.phi_real) - 3.5
        );
    }
    let _ = writeln!(s, r#"<text x="{}" y="20" font-size="12">{} a={:.4} b={:.4}</text>"#, M, mapping.family, mapping.a, mapping.b);
    s.push_str("</svg>\n");
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calibration::{fit_mapping, Family};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn mae_fixtures() {
        assert!((mae(&[0.8, 0.9], &[0.7, 1.0]).unwrap() - 0.1).abs() < 1e-12);
        assert_eq!(mae(&[0.3, 0.4], &[0.3, 0.4]).unwrap(), 0.0);
        assert!(mae(&[], &[]).is_err());
        assert!(mae(&[0.1], &[0.1, 0.2]).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let r: Vec<f64> = (0..100).map(|_| rng.random()).collect();
        let e: Vec<f64> = (0..100).map(|_| rng.random()).collect();
        let mut naive = 0.0;
        for i in 0..100 {
            naive += (r[i] - e[i]).abs();
        }
        assert!((mae(&r, &e).unwrap() - naive / 100.0).abs() < 1e-12);
    }

    #[test]
    fn correlation_fixtures() {
        let r = [0.2, 0.5, 0.4, 0.9];
        let neg: Vec<f64> = r.iter().map(|v| -v).collect();
        let aff: Vec<f64> = r.iter().map(|v| 2.0 * v + 3.0).collect();
        assert!((correlation(&r, &r).unwrap() - 1.0).abs() < 1e-12);
        assert!((correlation(&r, &neg).unwrap() + 1.0).abs() < 1e-12);
        assert!((correlation(&r, &aff).unwrap() - 1.0).abs() < 1e-12);
        assert!(matches!(correlation(&r, &[0.5; 4]), Err(SpeError::Undefined(_))));
        assert!(correlation(&[0.1], &[0.2]).is_err());
    }

    fn fixture(k: usize) -> (PairSet, MappingFunction) {
        let x: Vec<f64> = (0..k).map(|i| 0.3 + 0.6 * i as f64 / (k - 1) as f64).collect();
        let y: Vec<f64> = x.iter().enumerate().map(|(i, v)| 0.9 * v + 0.05 + 0.004 * (i % 3) as f64).collect();
        let psi = PairSet::from_values(MetricId::Dice, &x, &y).unwrap();
        let g = fit_mapping(&psi, Family::Linear).unwrap();
        (psi, g)
    }

    #[test]
    fn report_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let (psi, g) = fixture(20);
        let holdout: Vec<HoldoutPoint> = (0..5)
            .map(|j| HoldoutPoint { epoch: 200 + j, phi_pseudo: 0.35 + 0.1 * j as f64, phi_real: 0.37 + 0.09 * j as f64 })
            .collect();
        let summary = emit_report(&psi, &g, &holdout, dir.path(), &serde_json::json!({"seed": 1})).unwrap();
        let rows = read_report_csv(&dir.path().join("report.csv")).unwrap();
        assert_eq!(rows.len(), 25);
        assert_eq!(rows.iter().filter(|r| r.cohort == Cohort::Holdout).count(), 5);
        let again = scores_from_rows(MetricId::Dice, &rows).unwrap();
        assert_eq!(again.len(), 2);
        for (a, b) in again.iter().zip(&summary.scores) {
            assert!((a.mae - b.mae).abs() <= 1e-12);
            assert!((a.correlation.unwrap() - b.correlation.unwrap()).abs() <= 1e-12);
        }
        let text = std::fs::read_to_string(dir.path().join("report.csv")).unwrap();
        assert!(text.starts_with("epoch,phi_pseudo,phi_real,phi_estimated,abs_error,cohort\n"));
        let svg = std::fs::read_to_string(dir.path().join("calibration.svg")).unwrap();
        let poly = svg.lines().find(|l| l.starts_with("<polyline")).unwrap();
        assert_eq!(poly.matches(',').count(), CURVE_SAMPLES);
    }

    #[test]
    fn calibration_only_report() {
        let dir = tempfile::tempdir().unwrap();
        let (psi, g) = fixture(6);
        let summary = emit_report(&psi, &g, &[], dir.path(), &serde_json::Value::Null).unwrap();
        assert_eq!(summary.scores.len(), 1);
        assert_eq!(summary.scores[0].cohort, Cohort::Calibration);
        assert_eq!(read_report_csv(&dir.path().join("report.csv")).unwrap().len(), 6);
    }

    proptest::proptest! {
        #[test]
        fn mae_zero_iff_equal(v in proptest::collection::vec(-1.0f64..1.0, 1..30), i in 0usize..30, d in 1e-6f64..1.0) {
            proptest::prop_assert_eq!(mae(&v, &v).unwrap(), 0.0);
            let mut w = v.clone();
            let k = i % w.len();
            w[k] += d;
            proptest::prop_assert!(mae(&v, &w).unwrap() > 0.0);
        }

        #[test]
        fn correlation_affine_invariant(
            v in proptest::collection::vec((0.0f64..1.0, 0.0f64..1.0), 3..30),
            alpha in 0.1f64..10.0, beta in -5.0f64..5.0,
        ) {
            let r: Vec<f64> = v.iter().map(|p| p.0).collect();
            let e: Vec<f64> = v.iter().map(|p| p.1).collect();
            if let Ok(c) = correlation(&r, &e) {
                let e2: Vec<f64> = e.iter().map(|x| alpha * x + beta).collect();
                let r2: Vec<f64> = r.iter().map(|x| alpha * x + beta).collect();
                proptest::prop_assert!((correlation(&r, &e2).unwrap() - c).abs() < 1e-9);
                proptest::prop_assert!((correlation(&r2, &e).unwrap() - c).abs() < 1e-9);
            }
        }
    }
}
