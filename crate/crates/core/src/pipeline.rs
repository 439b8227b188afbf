//! Observation builders: strategies that turn the per-pass detections of one
//! image into scored observations.
//!
//! * `dropout-sampling` pools every pass, partitions the pooled detections by
//!   IoU and fuses each group.
//! * `single-pass` keeps only the first pass and treats each detection as its
//!   own observation, which reproduces a plain (non-sampling) detector that is
//!   thresholded on the entropy of its own softmax vector.

use crate::error::{Error, Result};
use crate::fusion::Observation;
use crate::partition::{Detection, Partitioner, DEFAULT_CLUSTER_IOU, DEFAULT_PARTITIONER, PARTITIONERS};
use crate::registry::Registry;

pub trait ObservationBuilder: Send + Sync {
    fn name(&self) -> &'static str;

    fn build(
        &self,
        passes: &[Vec<Detection>],
        partitioner: &dyn Partitioner,
        cluster_iou: f64,
    ) -> Result<Vec<Observation>>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct DropoutSampling;

impl ObservationBuilder for DropoutSampling {
    fn name(&self) -> &'static str {
        "dropout-sampling"
    }

    fn build(
        &self,
        passes: &[Vec<Detection>],
        partitioner: &dyn Partitioner,
        cluster_iou: f64,
    ) -> Result<Vec<Observation>> {
        let detections: Vec<Detection> = passes.iter().flatten().cloned().collect();
        let boxes: Vec<_> = detections.iter().map(|d| *d.bbox()).collect();
        partitioner
            .partition(&boxes, cluster_iou)
            .iter()
            .map(|g| Observation::fuse(&detections, g))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SinglePass;

impl ObservationBuilder for SinglePass {
    fn name(&self) -> &'static str {
        "single-pass"
    }

    fn build(&self, passes: &[Vec<Detection>], _: &dyn Partitioner, _: f64) -> Result<Vec<Observation>> {
        Ok(passes
            .first()
            .map(|dets| dets.iter().enumerate().map(|(i, d)| Observation::single(d, i)).collect())
            .unwrap_or_default())
    }
}

pub static BUILDERS: Registry<dyn ObservationBuilder> = Registry::new(
    "pipeline",
    &[
        ("dropout-sampling", || Box::new(DropoutSampling)),
        ("single-pass", || Box::new(SinglePass)),
    ],
);

pub const DEFAULT_PIPELINE: &str = "dropout-sampling";

/// A configured builder + partitioner pair.
pub struct Pipeline {
    builder: Box<dyn ObservationBuilder>,
    partitioner: Box<dyn Partitioner>,
    cluster_iou: f64,
    max_passes: Option<usize>,
}

impl Pipeline {
    pub fn new(builder: &str, partitioner: &str) -> Result<Self> {
        Ok(Self {
            builder: BUILDERS.get(builder)?,
            partitioner: PARTITIONERS.get(partitioner)?,
            cluster_iou: DEFAULT_CLUSTER_IOU,
            max_passes: None,
        })
    }

    pub fn dropout_sampling() -> Self {
        Self::new(DEFAULT_PIPELINE, DEFAULT_PARTITIONER).expect("built-in strategies are registered")
    }

    pub fn single_pass() -> Self {
        Self::new("single-pass", DEFAULT_PARTITIONER).expect("built-in strategies are registered")
    }

    pub fn with_cluster_iou(mut self, threshold: f64) -> Result<Self> {
        if !(threshold > 0.0 && threshold <= 1.0) {
            return Err(Error::Config(format!("cluster IoU must lie in (0, 1], got {threshold}")));
        }
        self.cluster_iou = threshold;
        Ok(self)
    }

    /// Restricts every image to its first `passes` forward passes.
    pub fn with_max_passes(mut self, passes: Option<usize>) -> Result<Self> {
        if passes == Some(0) {
            return Err(Error::Config("pass limit must be at least 1".into()));
        }
        self.max_passes = passes;
        Ok(self)
    }

    pub fn name(&self) -> &'static str {
        self.builder.name()
    }

    pub fn observe(&self, passes: &[Vec<Detection>]) -> Result<Vec<Observation>> {
        let used = match self.max_passes {
            Some(n) => &passes[..n.min(passes.len())],
            None => passes,
        };
        self.builder.build(used, self.partitioner.as_ref(), self.cluster_iou)
    }
}
