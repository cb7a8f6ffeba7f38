//! Desk-scale ground truth for the whole pipeline: generated shapes, a
//! level-controlled mask degradation standing in for checkpoints of varying
//! quality, and a reference segmenter with a known quality coupling.

mod curve;
mod degrade;
mod demo;
mod shapes;
mod world;

pub use curve::{build_quality_curve, population_dice, uniform_levels, QualityCurve, MONOTONE_SLACK};
pub use demo::{
    build_synthetic, calibrate_synthetic, estimate_holdout, holdout_points, holdout_qualities,
    holdout_score, HoldoutEstimate, SyntheticParams, SyntheticSetup,
};
pub use degrade::{default_operators, degrade, dilate, erode, DegradationSpec, DegradeOp, Extent};
pub use shapes::{generate_shapes, ShapeConfig};
pub use world::{
    parse_synthetic_locator, synthetic_locator, synthetic_reference, synthetic_series,
    CouplingSpec, SyntheticAdapter, SyntheticReference, SyntheticWorld, DEFAULT_SPLIT,
};
