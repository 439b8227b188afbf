//! Grouping of per-pass detections into observations.
//!
//! Two detections belong to the same observation when they are connected by a
//! chain of pairs whose boxes overlap with IoU at or above the clustering
//! threshold. Groups are therefore the connected components of the thresholded
//! IoU graph; no all-pairs (clique) condition is enforced inside a group.

mod bruteforce;
mod union_find;

use serde::{Deserialize, Serialize};

pub use bruteforce::BruteForcePartitioner;
pub use union_find::{DisjointSet, UnionFindPartitioner};

use crate::error::{Error, Result};
use crate::geometry::BoundingBox;
use crate::registry::Registry;

pub const DEFAULT_CLUSTER_IOU: f64 = 0.95;

/// Tolerance on the sum of an input score vector.
pub const SIMPLEX_TOLERANCE: f64 = 1e-6;

/// One raw detector output from a single forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    scores: Vec<f64>,
    bbox: BoundingBox,
    pass_index: usize,
}

impl Detection {
    /// `scores[0]` is the unknown/background class, `scores[1..]` the known classes.
    pub fn new(scores: Vec<f64>, bbox: BoundingBox, pass_index: usize) -> Result<Self> {
        validate_scores(&scores)?;
        Ok(Self {
            scores,
            bbox,
            pass_index,
        })
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn bbox(&self) -> &BoundingBox {
        &self.bbox
    }

    pub fn pass_index(&self) -> usize {
        self.pass_index
    }
}

pub(crate) fn validate_scores(scores: &[f64]) -> Result<()> {
    if scores.len() < 2 {
        return Err(Error::InvalidScores(format!(
            "need at least 2 entries (unknown + one known class), got {}",
            scores.len()
        )));
    }
    if let Some((i, s)) = scores
        .iter()
        .enumerate()
        .find(|(_, s)| !s.is_finite() || **s < 0.0 || **s > 1.0)
    {
        return Err(Error::InvalidScores(format!("entry {i} = {s} is outside [0, 1]")));
    }
    let sum: f64 = scores.iter().sum();
    if (sum - 1.0).abs() > SIMPLEX_TOLERANCE {
        return Err(Error::InvalidScores(format!("entries sum to {sum}, expected 1")));
    }
    Ok(())
}

/// Indices (ascending) into an image's detection list forming one observation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObservationGroup {
    pub members: Vec<usize>,
}

impl ObservationGroup {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

/// A strategy for computing the connected components of the IoU graph.
///
/// Implementations must return groups sorted by smallest member, with members
/// ascending, so that every strategy produces identical output.
pub trait Partitioner: Send + Sync {
    fn name(&self) -> &'static str;

    fn partition(&self, boxes: &[BoundingBox], threshold: f64) -> Vec<ObservationGroup>;
}

pub static PARTITIONERS: Registry<dyn Partitioner> = Registry::new(
    "partitioner",
    &[
        ("union-find", || Box::new(UnionFindPartitioner)),
        ("brute-force", || Box::new(BruteForcePartitioner)),
    ],
);

pub const DEFAULT_PARTITIONER: &str = "union-find";

fn boxes_of(detections: &[Detection]) -> Vec<BoundingBox> {
    detections.iter().map(|d| d.bbox).collect()
}

/// Disjoint-set partitioning of `detections` at IoU threshold `threshold`.
pub fn partition_detections(detections: &[Detection], threshold: f64) -> Vec<ObservationGroup> {
    let groups = UnionFindPartitioner.partition(&boxes_of(detections), threshold);
    debug_assert!(is_partition(&groups, detections.len()));
    groups
}

/// Breadth-first search over the explicit pairwise IoU graph. Quadratic; kept
/// as an independent reference for [`partition_detections`].
pub fn connected_components_bruteforce(detections: &[Detection], threshold: f64) -> Vec<ObservationGroup> {
    BruteForcePartitioner.partition(&boxes_of(detections), threshold)
}

/// True when `groups` are non-empty, pairwise disjoint and jointly cover `0..n`.
pub fn is_partition(groups: &[ObservationGroup], n: usize) -> bool {
    let mut seen = vec![false; n];
    for g in groups {
        if g.is_empty() {
            return false;
        }
        for &m in &g.members {
            if m >= n || seen[m] {
                return false;
            }
            seen[m] = true;
        }
    }
    seen.into_iter().all(|s| s)
}
