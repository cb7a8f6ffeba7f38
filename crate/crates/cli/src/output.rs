use std::path::Path;

use serde::Serialize;
use spe_core::meta_eval::{canonical_json, MetaScore};
use spe_core::{MetricId, Result};

use crate::config::RunConfig;

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, canonical_json(value))?;
    Ok(())
}

#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    toolkit_version: &'static str,
    run_config: &'a RunConfig,
    #[serde(flatten)]
    body: T,
}

/// Writes `body` with the toolkit version and run configuration alongside.
pub fn write_with_config<T: Serialize>(path: &Path, cfg: &RunConfig, body: T) -> Result<()> {
    write_json(
        path,
        &Envelope {
            toolkit_version: spe_core::VERSION,
            run_config: cfg,
            body,
        },
    )
}

pub fn write_run_config(out: &Path, cfg: &RunConfig) -> Result<()> {
    write_with_config(&out.join("run_config.json"), cfg, serde_json::Map::new())
}

/// Sample mean and standard deviation (n - 1 denominator).
pub fn mean_std(values: &[f64]) -> (Option<f64>, Option<f64>) {
    if values.is_empty() {
        return (None, None);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = (values.len() > 1)
        .then(|| (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt());
    (Some(mean), std)
}

fn cell(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x:>8.4}"),
        None => format!("{:>8}", "n/a"),
    }
}

pub fn metric_label(m: MetricId) -> &'static str {
    match m {
        MetricId::Dice => "Dice",
        MetricId::Hd95 => "HD95",
        MetricId::Jaccard => "Jaccard",
        MetricId::Pearson => "Pearson",
        MetricId::Recall => "Recall",
        MetricId::Precision => "Precision",
    }
}

/// MAE / Corr per metric, one row per seed, then Mean and STD rows.
pub fn format_table(metrics: &[MetricId], rows: &[(u64, Vec<MetaScore>)]) -> String {
    let mut out = format!("{:<10}", "Seed");
    for m in metrics {
        out.push_str(&format!(" | {:^17}", metric_label(*m)));
    }
    out.push('\n');
    out.push_str(&format!("{:<10}", ""));
    for _ in metrics {
        out.push_str(&format!(" | {:>8} {:>8}", "MAE", "Corr"));
    }
    out.push('\n');
    let rule = "-".repeat(out.lines().next().map_or(0, str::len));
    out.push_str(&rule);
    out.push('\n');
    for (seed, scores) in rows {
        out.push_str(&format!("{seed:<10}"));
        for s in scores {
            out.push_str(&format!(" | {} {}", cell(Some(s.mae)), cell(s.correlation)));
        }
        out.push('\n');
    }
    if rows.len() > 1 {
        out.push_str(&rule);
        out.push('\n');
        let stats: Vec<((Option<f64>, Option<f64>), (Option<f64>, Option<f64>))> = (0..metrics.len())
            .map(|i| {
                let maes: Vec<f64> = rows.iter().map(|r| r.1[i].mae).collect();
                let corrs: Vec<f64> = rows.iter().filter_map(|r| r.1[i].correlation).collect();
                (mean_std(&maes), mean_std(&corrs))
            })
            .collect();
        out.push_str(&format!("{:<10}", "Mean"));
        for ((m, _), (c, _)) in &stats {
            out.push_str(&format!(" | {} {}", cell(*m), cell(*c)));
        }
        out.push('\n');
        out.push_str(&format!("{:<10}", "STD"));
        for ((_, m), (_, c)) in &stats {
            out.push_str(&format!(" | {} {}", cell(*m), cell(*c)));
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use spe_core::meta_eval::Cohort;

    #[test]
    fn mean_std_matches_hand_values() {
        let (m, s) = mean_std(&[0.013, 0.059, 0.025, 0.031, 0.013, 0.007]);
        assert!((m.unwrap() - 0.024_666_666_666_666_667).abs() < 1e-12);
        assert!((s.unwrap() - 0.019).abs() < 5e-4);
        assert_eq!(mean_std(&[1.0]).1, None);
    }

    #[test]
    fn table_has_mean_and_std_rows() {
        let score = |mae| MetaScore { metric: MetricId::Dice, cohort: Cohort::Holdout, mae, correlation: Some(0.9), n: 5 };
        let t = format_table(&[MetricId::Dice], &[(0, vec![score(0.01)]), (1, vec![score(0.03)])]);
        assert!(t.contains("MAE") && t.contains("Corr"));
        let mean = t.lines().find(|l| l.starts_with("Mean")).unwrap();
        assert!(mean.contains("0.0200"));
        assert!(t.lines().any(|l| l.starts_with("STD")));
    }
}
