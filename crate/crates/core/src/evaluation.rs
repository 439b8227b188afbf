//! Open-set scoring of fused observations against labelled ground truth.
//!
//! An observation is accepted when it has enough member detections, its
//! entropy does not exceed the threshold, and its winning label is a known
//! class. Accepted observations are matched to ground truth at IoU >= the
//! matching threshold:
//!
//! * a matched known object with the same label makes it a true positive;
//! * matched known objects that all disagree make it a false positive;
//! * no matched known object (nothing overlaps, or only unknown objects do)
//!   makes it a false positive and an absolute open-set error.
//!
//! A known object is a false negative unless some accepted observation both
//! overlaps it and carries its label; a misclassified object therefore counts
//! once as a false positive and once as a false negative.

use std::ops::{Add, AddAssign};

use rayon::prelude::*;
use serde::{Deserialize, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::fusion::{entropy_test, Observation, Verdict};
use crate::geometry::{iou, BoundingBox};
use crate::partition::DEFAULT_CLUSTER_IOU;

pub const DEFAULT_MATCH_IOU: f64 = 0.5;
pub const DEFAULT_THETA_MIN: f64 = 0.1;
pub const DEFAULT_THETA_MAX: f64 = 2.5;
pub const DEFAULT_THETA_STEPS: usize = 25;

/// Label 0 marks an object of a class the detector was never trained on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthObject {
    pub bbox: BoundingBox,
    pub label: usize,
}

impl GroundTruthObject {
    pub fn is_known(&self) -> bool {
        self.label != 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalConfig {
    pub theta: f64,
    pub match_iou: f64,
    pub min_detections: usize,
    pub cluster_iou: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            theta: f64::INFINITY,
            match_iou: DEFAULT_MATCH_IOU,
            min_detections: 1,
            cluster_iou: DEFAULT_CLUSTER_IOU,
        }
    }
}

impl EvalConfig {
    pub fn with_theta(self, theta: f64) -> Self {
        Self { theta, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if self.theta.is_nan() || self.theta < 0.0 {
            return Err(Error::Config(format!("entropy threshold must be >= 0, got {}", self.theta)));
        }
        if !(self.match_iou > 0.0 && self.match_iou <= 1.0) {
            return Err(Error::Config(format!("match IoU must lie in (0, 1], got {}", self.match_iou)));
        }
        if !(self.cluster_iou > 0.0 && self.cluster_iou <= 1.0) {
            return Err(Error::Config(format!(
                "cluster IoU must lie in (0, 1], got {}",
                self.cluster_iou
            )));
        }
        if self.min_detections == 0 {
            return Err(Error::Config("min detections must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub abs_ose: u64,
}

impl Add for EvalCounts {
    type Output = Self;

    fn add(self, rhs: Self) -> Self {
        Self {
            tp: self.tp + rhs.tp,
            fp: self.fp + rhs.fp,
            fn_: self.fn_ + rhs.fn_,
            abs_ose: self.abs_ose + rhs.abs_ose,
        }
    }
}

impl AddAssign for EvalCounts {
    fn add_assign(&mut self, rhs: Self) {
        *self = *self + rhs;
    }
}

impl std::iter::Sum for EvalCounts {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(Self::default(), Add::add)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub theta: f64,
    pub counts: EvalCounts,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl CurvePoint {
    pub fn from_counts(theta: f64, counts: EvalCounts) -> Self {
        let precision = ratio(counts.tp, counts.tp + counts.fp);
        let recall = ratio(counts.tp, counts.tp + counts.fn_);
        Self {
            theta,
            counts,
            precision,
            recall,
            f1: f1_score(precision, recall),
        }
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Harmonic mean of precision and recall, 0 when both are 0.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall <= 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// The min-detection rule, then the unknown-label rule, then the entropy test.
pub fn accepts(obs: &Observation, config: &EvalConfig) -> bool {
    obs.detection_count >= config.min_detections
        && obs.winning_label != 0
        && entropy_test(obs.entropy, config.theta) == Verdict::Accept
}

pub fn filter_observations<'a>(observations: &'a [Observation], config: &EvalConfig) -> Vec<&'a Observation> {
    observations.iter().filter(|o| accepts(o, config)).collect()
}

/// Counts for one scene. `accepted` must already have passed [`filter_observations`].
pub fn score_scene(accepted: &[&Observation], ground_truth: &[GroundTruthObject], config: &EvalConfig) -> EvalCounts {
    let mut counts = EvalCounts::default();
    let mut covered = vec![false; ground_truth.len()];

    for obs in accepted {
        let mut overlaps_known = false;
        let mut agrees = false;
        for (gt, hit) in ground_truth.iter().zip(covered.iter_mut()) {
            if iou(&obs.fused_box, &gt.bbox) < config.match_iou {
                continue;
            }
            if gt.is_known() {
                overlaps_known = true;
                if gt.label == obs.winning_label {
                    agrees = true;
                    *hit = true;
                }
            }
        }
        if agrees {
            counts.tp += 1;
        } else {
            counts.fp += 1;
            if !overlaps_known {
                counts.abs_ose += 1;
            }
        }
    }

    counts.fn_ = ground_truth
        .iter()
        .zip(&covered)
        .filter(|(gt, hit)| gt.is_known() && !**hit)
        .count() as u64;
    counts
}

/// Micro-average: counts are summed before any ratio is taken.
pub fn aggregate(theta: f64, per_scene: &[EvalCounts]) -> CurvePoint {
    CurvePoint::from_counts(theta, per_scene.iter().copied().sum())
}

/// One image's fused observations with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredScene {
    pub observations: Vec<Observation>,
    pub ground_truth: Vec<GroundTruthObject>,
}

impl ScoredScene {
    pub fn counts(&self, config: &EvalConfig) -> EvalCounts {
        score_scene(&filter_observations(&self.observations, config), &self.ground_truth, config)
    }
}

/// `steps` evenly spaced thresholds from `min` to `max` inclusive.
pub fn theta_grid(min: f64, max: f64, steps: usize) -> Result<Vec<f64>> {
    if steps == 0 || !min.is_finite() || !max.is_finite() || min < 0.0 || max < min {
        return Err(Error::Config(format!(
            "invalid threshold grid: min {min}, max {max}, steps {steps}"
        )));
    }
    if steps == 1 {
        return Ok(vec![min]);
    }
    let step = (max - min) / (steps - 1) as f64;
    Ok((0..steps)
        .map(|i| if i + 1 == steps { max } else { min + i as f64 * step })
        .collect())
}

/// Scores every scene at every threshold of `grid`. The observations are fused
/// once by the caller; only acceptance changes with the threshold.
pub fn sweep(scenes: &[ScoredScene], grid: &[f64], config: &EvalConfig) -> Vec<CurvePoint> {
    let per_scene: Vec<Vec<EvalCounts>> = scenes.iter().map(|s| scene_curve(s, grid, config)).collect();
    reduce(grid, &per_scene)
}

/// As [`sweep`], with scenes scored on the current rayon pool.
pub fn sweep_parallel(scenes: &[ScoredScene], grid: &[f64], config: &EvalConfig) -> Vec<CurvePoint> {
    let per_scene: Vec<Vec<EvalCounts>> = scenes.par_iter().map(|s| scene_curve(s, grid, config)).collect();
    reduce(grid, &per_scene)
}

fn scene_curve(scene: &ScoredScene, grid: &[f64], config: &EvalConfig) -> Vec<EvalCounts> {
    grid.iter().map(|&theta| scene.counts(&config.with_theta(theta))).collect()
}

fn reduce(grid: &[f64], per_scene: &[Vec<EvalCounts>]) -> Vec<CurvePoint> {
    grid.iter()
        .enumerate()
        .map(|(i, &theta)| CurvePoint::from_counts(theta, per_scene.iter().map(|c| c[i]).sum()))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ReferenceLookup {
    Found(CurvePoint),
    Unattainable,
}

impl ReferenceLookup {
    pub fn point(&self) -> Option<&CurvePoint> {
        match self {
            ReferenceLookup::Found(p) => Some(p),
            ReferenceLookup::Unattainable => None,
        }
    }
}

impl Serialize for ReferenceLookup {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            ReferenceLookup::Found(p) => p.serialize(s),
            ReferenceLookup::Unattainable => s.serialize_str("unattainable"),
        }
    }
}

fn best_by<'a>(
    points: impl Iterator<Item = &'a CurvePoint>,
    better: impl Fn(&CurvePoint, &CurvePoint) -> bool,
) -> Option<CurvePoint> {
    // Strict improvement only, so ties keep the earliest (lowest-theta) point.
    points.fold(None, |best, p| match best {
        Some(b) if !better(p, &b) => Some(b),
        _ => Some(*p),
    })
}

/// Highest-F1 point; ties resolve to the lowest threshold.
pub fn max_f1_point(points: &[CurvePoint]) -> Option<CurvePoint> {
    best_by(points.iter(), |p, b| p.f1 > b.f1)
}

/// Highest F1 among points whose open-set error does not exceed `reference_ose`.
pub fn f1_at_reference_ose(points: &[CurvePoint], reference_ose: u64) -> ReferenceLookup {
    best_by(points.iter().filter(|p| p.counts.abs_ose <= reference_ose), |p, b| p.f1 > b.f1)
        .map_or(ReferenceLookup::Unattainable, ReferenceLookup::Found)
}

/// Lowest open-set error among points whose F1 reaches `reference_f1`.
pub fn ose_at_reference_f1(points: &[CurvePoint], reference_f1: f64) -> ReferenceLookup {
    best_by(points.iter().filter(|p| p.f1 >= reference_f1), |p, b| {
        p.counts.abs_ose < b.counts.abs_ose
    })
    .map_or(ReferenceLookup::Unattainable, ReferenceLookup::Found)
}

#[derive(Debug, Clone, Serialize)]
pub struct CurveAnalysis {
    pub max_f1: Option<CurvePoint>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reference_ose: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub f1_at_reference_ose: Option<ReferenceLookup>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reference_f1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ose_at_reference_f1: Option<ReferenceLookup>,
}

pub fn curve_analysis(points: &[CurvePoint], reference_f1: Option<f64>, reference_ose: Option<u64>) -> CurveAnalysis {
    CurveAnalysis {
        max_f1: max_f1_point(points),
        reference_ose,
        f1_at_reference_ose: reference_ose.map(|r| f1_at_reference_ose(points, r)),
        reference_f1,
        ose_at_reference_f1: reference_f1.map(|r| ose_at_reference_f1(points, r)),
    }
}
