//! Segmentation metrics and set-level aggregation.
//!
//! Empty-mask conventions:
//! - dice / jaccard: both empty scores 1.0, exactly one empty scores 0.0;
//! - recall is undefined for an empty ground truth, precision for an empty prediction;
//! - pearson is undefined when either grid is constant;
//! - hd95 is undefined when either mask is empty.
//!
//! Undefined per-image values are excluded from set means.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::BinaryMask;
use crate::distance::squared_distance_to_foreground;
use crate::error::{Result, SpeError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricId {
    Dice,
    Hd95,
    Jaccard,
    Pearson,
    Recall,
    Precision,
}

impl MetricId {
    pub const ALL: [MetricId; 6] = [
        MetricId::Dice,
        MetricId::Hd95,
        MetricId::Jaccard,
        MetricId::Pearson,
        MetricId::Recall,
        MetricId::Precision,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MetricId::Dice => "dice",
            MetricId::Hd95 => "hd95",
            MetricId::Jaccard => "jaccard",
            MetricId::Pearson => "pearson",
            MetricId::Recall => "recall",
            MetricId::Precision => "precision",
        }
    }

    pub fn higher_is_better(self) -> bool {
        self != MetricId::Hd95
    }

    /// Closed value range; `hd95` is unbounded above.
    pub fn range(self) -> (f64, f64) {
        match self {
            MetricId::Hd95 => (0.0, f64::INFINITY),
            MetricId::Pearson => (-1.0, 1.0),
            _ => (0.0, 1.0),
        }
    }

    pub fn evaluate(self, pred: &BinaryMask, gt: &BinaryMask) -> Result<MetricValue> {
        match self {
            MetricId::Dice => dice(pred, gt),
            MetricId::Hd95 => hd95(pred, gt),
            MetricId::Jaccard => jaccard(pred, gt),
            MetricId::Pearson => pearson_pixel(pred, gt),
            MetricId::Recall => recall(pred, gt),
            MetricId::Precision => precision(pred, gt),
        }
    }
}

impl fmt::Display for MetricId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.name())
    }
}

impl FromStr for MetricId {
    type Err = SpeError;

    fn from_str(s: &str) -> Result<Self> {
        MetricId::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| SpeError::Parse {
                what: "metric".into(),
                reason: format!("unknown metric {s:?}"),
            })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricValue {
    /// NaN when undefined.
    pub value: f64,
    pub higher_is_better: bool,
    pub defined: bool,
}

impl MetricValue {
    fn of(metric: MetricId, value: f64) -> Self {
        Self {
            value,
            higher_is_better: metric.higher_is_better(),
            defined: true,
        }
    }

    fn undefined(metric: MetricId) -> Self {
        Self {
            value: f64::NAN,
            higher_is_better: metric.higher_is_better(),
            defined: false,
        }
    }

    pub fn get(&self) -> Option<f64> {
        self.defined.then_some(self.value)
    }
}

/// Pixel counts shared by the overlap metrics.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Overlap {
    pub total: usize,
    pub pred: usize,
    pub gt: usize,
    pub intersection: usize,
}

impl Overlap {
    pub fn count(pred: &BinaryMask, gt: &BinaryMask) -> Result<Self> {
        check_shapes(pred, gt)?;
        let mut o = Overlap {
            total: pred.bits().len(),
            pred: 0,
            gt: 0,
            intersection: 0,
        };
        for (&p, &g) in pred.bits().iter().zip(gt.bits()) {
            o.pred += p as usize;
            o.gt += g as usize;
            o.intersection += (p && g) as usize;
        }
        Ok(o)
    }

    pub fn union(&self) -> usize {
        self.pred + self.gt - self.intersection
    }
}

fn check_shapes(pred: &BinaryMask, gt: &BinaryMask) -> Result<()> {
    if pred.shape() != gt.shape() {
        return Err(SpeError::validation(format!(
            "prediction is {:?} but ground truth is {:?}",
            pred.shape(),
            gt.shape()
        )));
    }
    Ok(())
}

pub fn dice(pred: &BinaryMask, gt: &BinaryMask) -> Result<MetricValue> {
    let o = Overlap::count(pred, gt)?;
    let denom = o.pred + o.gt;
    let v = if denom == 0 {
        1.0
    } else {
        2.0 * o.intersection as f64 / denom as f64
    };
    Ok(MetricValue::of(MetricId::Dice, v))
}

pub fn jaccard(pred: &BinaryMask, gt: &BinaryMask) -> Result<MetricValue> {
    let o = Overlap::count(pred, gt)?;
    let union = o.union();
    let v = if union == 0 {
        1.0
    } else {
        o.intersection as f64 / union as f64
    };
    Ok(MetricValue::of(MetricId::Jaccard, v))
}

pub fn recall(pred: &BinaryMask, gt: &BinaryMask) -> Result<MetricValue> {
    let o = Overlap::count(pred, gt)?;
    Ok(if o.gt == 0 {
        MetricValue::undefined(MetricId::Recall)
    } else {
        MetricValue::of(MetricId::Recall, o.intersection as f64 / o.gt as f64)
    })
}

pub fn precision(pred: &BinaryMask, gt: &BinaryMask) -> Result<MetricValue> {
    let o = Overlap::count(pred, gt)?;
    Ok(if o.pred == 0 {
        MetricValue::undefined(MetricId::Precision)
    } else {
        MetricValue::of(MetricId::Precision, o.intersection as f64 / o.pred as f64)
    })
}

/// Pearson correlation of the two flattened 0/1 grids.
pub fn pearson_pixel(pred: &BinaryMask, gt: &BinaryMask) -> Result<MetricValue> {
    let o = Overlap::count(pred, gt)?;
    let n = o.total as f64;
    let (a, b, c) = (o.pred as f64, o.gt as f64, o.intersection as f64);
    let var_pred = a * (n - a);
    let var_gt = b * (n - b);
    if var_pred == 0.0 || var_gt == 0.0 {
        return Ok(MetricValue::undefined(MetricId::Pearson));
    }
    let r = (n * c - a * b) / (var_pred.sqrt() * var_gt.sqrt());
    Ok(MetricValue::of(MetricId::Pearson, r.clamp(-1.0, 1.0)))
}

/// 1-based nearest rank of the `pct` percentile among `n` sorted samples.
pub fn nearest_rank(pct: u64, n: usize) -> usize {
    (((pct * n as u64) + 99) / 100).max(1) as usize
}

/// Percentile (nearest rank) of distances from each `from` foreground pixel to
/// the closest `to` foreground pixel. Both masks must be nonempty.
fn directed_percentile(from: &BinaryMask, to: &BinaryMask, pct: u64) -> f64 {
    let dist = squared_distance_to_foreground(to).expect("nonempty target");
    let mut samples: Vec<u64> = from
        .bits()
        .iter()
        .zip(&dist)
        .filter(|(b, _)| **b)
        .map(|(_, d)| *d)
        .collect();
    let rank = nearest_rank(pct, samples.len());
    let (_, kth, _) = samples.select_nth_unstable(rank - 1);
    (*kth as f64).sqrt()
}

/// 95th-percentile symmetric Hausdorff distance over foreground pixel centers.
pub fn hd95(pred: &BinaryMask, gt: &BinaryMask) -> Result<MetricValue> {
    check_shapes(pred, gt)?;
    if pred.is_empty() || gt.is_empty() {
        return Ok(MetricValue::undefined(MetricId::Hd95));
    }
    let forward = directed_percentile(pred, gt, 95);
    let backward = directed_percentile(gt, pred, 95);
    Ok(MetricValue::of(MetricId::Hd95, forward.max(backward)))
}

#[derive(Clone, Debug, PartialEq)]
pub struct SetScore {
    pub metric: MetricId,
    /// Mean over defined per-image values; `None` when nothing is defined.
    pub mean: Option<f64>,
    pub per_image: Vec<MetricValue>,
    pub n_defined: usize,
}

impl SetScore {
    pub fn is_defined(&self) -> bool {
        self.mean.is_some()
    }
}

/// Per-image scores plus their macro average. Summation runs in input order.
pub fn evaluate_set(metric: MetricId, preds: &[BinaryMask], gts: &[BinaryMask]) -> Result<SetScore> {
    if preds.is_empty() {
        return Err(SpeError::validation("cannot score an empty set"));
    }
    if preds.len() != gts.len() {
        return Err(SpeError::validation(format!(
            "{} predictions for {} ground-truth masks",
            preds.len(),
            gts.len()
        )));
    }
    let per_image = preds
        .par_iter()
        .zip(gts.par_iter())
        .map(|(p, g)| metric.evaluate(p, g))
        .collect::<Result<Vec<_>>>()?;
    let (sum, n_defined) = per_image
        .iter()
        .filter_map(MetricValue::get)
        .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    Ok(SetScore {
        metric,
        mean: (n_defined > 0).then(|| sum / n_defined as f64),
        per_image,
        n_defined,
    })
}
