use rayon::prelude::*;

use super::degrade::{degrade, DegradationSpec, DegradeOp};
use crate::data::BinaryMask;
use crate::error::{Result, SpeError};
use crate::metrics::dice;
use crate::seed::{self, Stage};

/// Largest rise in mean dice between consecutive levels still treated as monotone.
pub const MONOTONE_SLACK: f64 = 0.005;

/// Mean dice of degraded probes as a function of degradation level.
#[derive(Clone, Debug, PartialEq)]
pub struct QualityCurve {
    levels: Vec<f64>,
    quality: Vec<f64>,
    /// Running minimum of `quality`, used for inversion.
    envelope: Vec<f64>,
    monotone: bool,
    operators: Vec<DegradeOp>,
    inversion_tolerance: Option<f64>,
}

/// Mean dice over `probes` at `level`; probe `k` uses seed `(seed, k)` at every level.
pub fn population_dice(probes: &[BinaryMask], operators: &[DegradeOp], level: f64, seed: u64) -> f64 {
    let sum: f64 = probes
        .par_iter()
        .enumerate()
        .map(|(k, m)| {
            let spec = DegradationSpec::new(
                level,
                operators.to_vec(),
                seed::derive(seed, Stage::Curve, &[k as u64]),
            );
            dice(&degrade(m, &spec), m).expect("same shape").value
        })
        .collect::<Vec<_>>()
        .iter()
        .sum();
    sum / probes.len() as f64
}

pub fn build_quality_curve(
    levels: &[f64],
    probes: &[BinaryMask],
    operators: &[DegradeOp],
    seed: u64,
) -> Result<QualityCurve> {
    if levels.len() < 5 {
        return Err(SpeError::Harness(format!(
            "quality curve needs at least 5 levels, got {}",
            levels.len()
        )));
    }
    if levels.windows(2).any(|w| w[1] <= w[0]) || levels[0] < 0.0 || levels[levels.len() - 1] > 1.0 {
        return Err(SpeError::Harness(
            "levels must be strictly increasing within [0, 1]".into(),
        ));
    }
    if probes.is_empty() {
        return Err(SpeError::Harness("no probe masks".into()));
    }
    let quality: Vec<f64> = levels
        .iter()
        .map(|&l| population_dice(probes, operators, l, seed))
        .collect();
    let worst_rise = quality
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(f64::NEG_INFINITY, f64::max);
    if worst_rise > MONOTONE_SLACK {
        return Err(SpeError::Harness(format!(
            "quality rises by {worst_rise:.4} between levels; operators are misconfigured"
        )));
    }
    let mut envelope = quality.clone();
    for i in 1..envelope.len() {
        envelope[i] = envelope[i].min(envelope[i - 1]);
    }
    Ok(QualityCurve {
        levels: levels.to_vec(),
        monotone: worst_rise <= 0.0,
        quality,
        envelope,
        operators: operators.to_vec(),
        inversion_tolerance: None,
    })
}

/// `n` evenly spaced levels over `[0, 1]`.
pub fn uniform_levels(n: usize) -> Vec<f64> {
    (0..n).map(|i| i as f64 / (n - 1) as f64).collect()
}

impl QualityCurve {
    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn quality(&self) -> &[f64] {
        &self.quality
    }

    /// True when the sampled curve never rises.
    pub fn is_monotone(&self) -> bool {
        self.monotone
    }

    pub fn operators(&self) -> &[DegradeOp] {
        &self.operators
    }

    /// Highest and lowest reachable mean dice.
    pub fn quality_range(&self) -> (f64, f64) {
        (self.envelope[self.envelope.len() - 1], self.envelope[0])
    }

    /// Piecewise-linear forward evaluation of the monotone envelope.
    pub fn evaluate(&self, level: f64) -> f64 {
        let l = level.clamp(self.levels[0], self.levels[self.levels.len() - 1]);
        let j = self.levels.partition_point(|x| *x <= l).clamp(1, self.levels.len() - 1);
        let (l0, l1) = (self.levels[j - 1], self.levels[j]);
        let (q0, q1) = (self.envelope[j - 1], self.envelope[j]);
        q0 + (q1 - q0) * (l - l0) / (l1 - l0)
    }

    /// Level whose interpolated quality equals `target`, clamped to the
    /// sampled range. On flat stretches the lowest such level is returned.
    pub fn invert(&self, target: f64) -> f64 {
        let n = self.levels.len();
        if target >= self.envelope[0] {
            return self.levels[0];
        }
        if target <= self.envelope[n - 1] {
            // first level that reaches the floor
            let floor = self.envelope[n - 1];
            let j = self.envelope.iter().position(|q| *q <= floor).unwrap();
            return self.levels[j];
        }
        // envelope[j-1] > target >= envelope[j]
        let j = self.envelope.partition_point(|q| *q > target);
        let (q0, q1) = (self.envelope[j - 1], self.envelope[j]);
        let (l0, l1) = (self.levels[j - 1], self.levels[j]);
        l0 + (l1 - l0) * (q0 - target) / (q0 - q1)
    }

    /// Measures `max |target - achieved|` over `targets`, where `achieved` is a
    /// fresh Monte-Carlo evaluation (seed `validation_seed`) at the inverted level.
    /// Targets outside the reachable range are skipped.
    pub fn validate_inversion(
        &mut self,
        targets: &[f64],
        probes: &[BinaryMask],
        validation_seed: u64,
    ) -> f64 {
        let (lo, hi) = self.quality_range();
        let worst = targets
            .iter()
            .filter(|t| **t >= lo && **t <= hi)
            .map(|&t| {
                let achieved = population_dice(probes, &self.operators, self.invert(t), validation_seed);
                (t - achieved).abs()
            })
            .fold(0.0, f64::max);
        self.inversion_tolerance = Some(worst);
        worst
    }

    /// Result of the last [`validate_inversion`](Self::validate_inversion) call.
    pub fn inversion_tolerance(&self) -> Option<f64> {
        self.inversion_tolerance
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::{default_operators, generate_shapes, ShapeConfig};

    fn probes(n: usize) -> Vec<BinaryMask> {
        generate_shapes(n, &ShapeConfig::default(), 77)
            .unwrap()
            .into_iter()
            .map(|p| p.label)
            .collect()
    }

    #[test]
    fn starts_at_perfect_quality() {
        let curve = build_quality_curve(&uniform_levels(5), &probes(20), &default_operators(), 1).unwrap();
        assert_eq!(curve.quality()[0], 1.0);
        assert!(curve.quality()[4] < 0.5);
    }

    #[test]
    fn default_operators_give_monotone_curve() {
        let curve = build_quality_curve(&uniform_levels(41), &probes(120), &default_operators(), 2).unwrap();
        assert!(curve.is_monotone(), "{:?}", curve.quality());
    }

    #[test]
    fn inversion_forward_check() {
        let p = probes(150);
        let mut curve = build_quality_curve(&uniform_levels(41), &p, &default_operators(), 3).unwrap();
        let level = curve.invert(0.7);
        let achieved = population_dice(&p, &default_operators(), level, 999);
        assert!((achieved - 0.7).abs() <= 0.02, "achieved {achieved}");
        let targets: Vec<f64> = (0..=39).map(|i| 0.2 + 0.02 * i as f64).collect();
        let tol = curve.validate_inversion(&targets, &p, 4242);
        assert!(tol <= 0.02, "inversion tolerance {tol}");
    }

    #[test]
    fn invert_and_evaluate_are_consistent() {
        let curve = build_quality_curve(&uniform_levels(11), &probes(30), &default_operators(), 5).unwrap();
        for t in [0.3, 0.5, 0.8, 0.95] {
            let (lo, hi) = curve.quality_range();
            if t > lo && t < hi {
                assert!((curve.evaluate(curve.invert(t)) - t).abs() < 1e-12);
            }
        }
        assert_eq!(curve.invert(1.5), 0.0);
    }

    #[test]
    fn rejects_short_grid_and_rising_curve() {
        assert!(build_quality_curve(&[0.0, 0.5, 1.0], &probes(3), &default_operators(), 1).is_err());
        let flat = [DegradeOp::Dropout(0.0)];
        let curve = build_quality_curve(&uniform_levels(5), &probes(3), &flat, 1).unwrap();
        assert!(curve.is_monotone());
        assert_eq!(curve.quality_range(), (1.0, 1.0));
    }
}
