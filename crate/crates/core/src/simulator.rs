//! Seeded generative model of a dropout-sampled detector.
//!
//! Every scene draws from its own ChaCha stream `(seed, scene index)`, so a
//! scene is fully determined by the configuration and its index. Within a
//! scene, ground truth is placed first and passes are generated in order: the
//! first `n` passes of a scene are the same whatever the configured pass count.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::{GroundTruthObject, ScoredScene};
use crate::geometry::BoundingBox;
use crate::io::{DetectionFile, GroundTruthFile, GroundTruthImage, ImageDetections};
use crate::partition::Detection;
use crate::pipeline::Pipeline;

const PLACEMENT_ATTEMPTS_PER_OBJECT: usize = 1000;
/// Ground-truth boxes of one scene overlap pairwise below this IoU.
pub const MAX_GROUND_TRUTH_IOU: f64 = 0.3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulatorConfig {
    /// `(width, height)` in pixels.
    pub image_size: (f64, f64),
    /// Inclusive range of object box side lengths in pixels.
    pub object_size: (f64, f64),
    pub num_known_objects: usize,
    pub num_unknown_objects: usize,
    /// Number of known classes `k`; score vectors have `k + 1` entries.
    pub class_count: usize,
    pub passes: usize,
    pub p_det: f64,
    pub box_sigma: f64,
    pub alpha_hi: f64,
    pub alpha_lo: f64,
    pub confusion_size: usize,
    pub clutter_rate: f64,
    pub seed: u64,
}

impl Default for SimulatorConfig {
    fn default() -> Self {
        Self {
            image_size: (960.0, 720.0),
            object_size: (50.0, 300.0),
            num_known_objects: 4,
            num_unknown_objects: 2,
            class_count: 20,
            passes: 42,
            p_det: 0.8,
            box_sigma: 1.5,
            alpha_hi: 20.0,
            alpha_lo: 0.5,
            confusion_size: 3,
            clutter_rate: 0.5,
            seed: 0,
        }
    }
}

impl SimulatorConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        let (w, h) = self.image_size;
        if !(w.is_finite() && h.is_finite() && w > 0.0 && h > 0.0) {
            return fail(format!("image size must be positive, got {w}x{h}"));
        }
        let (lo, hi) = self.object_size;
        if !(lo.is_finite() && hi.is_finite() && lo > 0.0 && lo <= hi && hi <= w.min(h)) {
            return fail(format!("object size range [{lo}, {hi}] must be positive and fit the image"));
        }
        if self.class_count == 0 {
            return fail("class count must be at least 1".into());
        }
        if self.passes == 0 {
            return fail("passes must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.p_det) {
            return fail(format!("p_det must lie in [0, 1], got {}", self.p_det));
        }
        if !(self.box_sigma.is_finite() && self.box_sigma >= 0.0) {
            return fail(format!("box sigma must be >= 0, got {}", self.box_sigma));
        }
        if !(self.alpha_lo > 0.0 && self.alpha_hi > self.alpha_lo && self.alpha_hi.is_finite()) {
            return fail(format!(
                "need alpha_hi > alpha_lo > 0, got {} and {}",
                self.alpha_hi, self.alpha_lo
            ));
        }
        if self.confusion_size < 2 || self.confusion_size > self.class_count {
            return fail(format!(
                "confusion size must lie in [2, {}], got {}",
                self.class_count, self.confusion_size
            ));
        }
        if !(self.clutter_rate.is_finite() && self.clutter_rate >= 0.0) {
            return fail(format!("clutter rate must be >= 0, got {}", self.clutter_rate));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedScene {
    pub ground_truth: Vec<GroundTruthObject>,
    pub passes: Vec<Vec<Detection>>,
}

impl SimulatedScene {
    /// Builds this scene's observations with `pipeline`, ready for scoring.
    pub fn observe(&self, pipeline: &Pipeline) -> Result<ScoredScene> {
        Ok(ScoredScene {
            observations: pipeline.observe(&self.passes)?,
            ground_truth: self.ground_truth.clone(),
        })
    }
}

/// Identifier written for scene `index` in dataset files.
pub fn scene_id(index: usize) -> String {
    format!("scene-{index:05}")
}

/// Detection and ground-truth files describing `scenes`.
pub fn dataset_files(scenes: &[SimulatedScene], class_count: usize) -> (DetectionFile, GroundTruthFile) {
    let detections = DetectionFile {
        class_count,
        class_names: None,
        images: scenes
            .iter()
            .enumerate()
            .map(|(i, s)| ImageDetections {
                image_id: scene_id(i),
                passes: s.passes.clone(),
            })
            .collect(),
    };
    let ground_truth = GroundTruthFile {
        class_count,
        images: scenes
            .iter()
            .enumerate()
            .map(|(i, s)| GroundTruthImage {
                image_id: scene_id(i),
                objects: s.ground_truth.clone(),
            })
            .collect(),
    };
    (detections, ground_truth)
}

/// Per-object state fixed across passes.
struct SceneObject {
    bbox: BoundingBox,
    /// The true label for a known object; the candidate labels for an unknown one.
    targets: Vec<usize>,
}

pub fn scene_rng(seed: u64, stream_id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_id);
    rng
}

pub fn simulate_scene(config: &SimulatorConfig, stream_id: u64) -> Result<SimulatedScene> {
    config.validate()?;
    let mut rng = scene_rng(config.seed, stream_id);
    let k = config.class_count;

    let total = config.num_known_objects + config.num_unknown_objects;
    let boxes = place_objects(config, total, &mut rng)?;
    let mut objects = Vec::with_capacity(total);
    let mut ground_truth = Vec::with_capacity(total);
    for (i, bbox) in boxes.into_iter().enumerate() {
        if i < config.num_known_objects {
            let label = rng.random_range(1..=k);
            ground_truth.push(GroundTruthObject { bbox, label });
            objects.push(SceneObject { bbox, targets: vec![label] });
        } else {
            let confusion = rand::seq::index::sample(&mut rng, k, config.confusion_size)
                .into_iter()
                .map(|c| c + 1)
                .collect();
            ground_truth.push(GroundTruthObject { bbox, label: 0 });
            objects.push(SceneObject { bbox, targets: confusion });
        }
    }

    let jitter = Normal::new(0.0, config.box_sigma).map_err(|e| Error::Config(e.to_string()))?;
    let clutter = (config.clutter_rate > 0.0)
        .then(|| Poisson::new(config.clutter_rate))
        .transpose()
        .map_err(|e| Error::Config(e.to_string()))?;
    let gamma = |shape: f64| Gamma::new(shape, 1.0).map_err(|e| Error::Config(e.to_string()));
    let (hi, lo, flat) = (gamma(config.alpha_hi)?, gamma(config.alpha_lo)?, gamma(1.0)?);

    let mut passes = Vec::with_capacity(config.passes);
    for pass in 0..config.passes {
        let mut detections = Vec::new();
        for obj in &objects {
            if !rng.random_bool(config.p_det) {
                continue;
            }
            let bbox = jittered(&obj.bbox, &jitter, config.image_size, &mut rng);
            let target = obj.targets[rng.random_range(0..obj.targets.len())];
            let scores = dirichlet(k + 1, |c| if c == target { &hi } else { &lo }, &mut rng);
            detections.push(Detection::new(scores, bbox, pass)?);
        }
        let spurious = clutter.as_ref().map_or(0, |p| p.sample(&mut rng) as usize);
        for _ in 0..spurious {
            let bbox = random_box(config, &mut rng);
            let scores = dirichlet(k + 1, |_| &flat, &mut rng);
            detections.push(Detection::new(scores, bbox, pass)?);
        }
        passes.push(detections);
    }

    Ok(SimulatedScene { ground_truth, passes })
}

/// Scene `i` is `simulate_scene(config, i)`; scenes are generated in parallel.
pub fn simulate_dataset(config: &SimulatorConfig, num_scenes: usize) -> Result<Vec<SimulatedScene>> {
    if num_scenes == 0 {
        return Err(Error::Config("number of scenes must be at least 1".into()));
    }
    config.validate()?;
    (0..num_scenes as u64)
        .into_par_iter()
        .map(|i| simulate_scene(config, i))
        .collect()
}

fn random_box(config: &SimulatorConfig, rng: &mut ChaCha8Rng) -> BoundingBox {
    let (w, h) = config.image_size;
    let (lo, hi) = config.object_size;
    let bw = rng.random_range(lo..=hi);
    let bh = rng.random_range(lo..=hi);
    let x1 = rng.random_range(0.0..=w - bw);
    let y1 = rng.random_range(0.0..=h - bh);
    BoundingBox::new(x1, y1, x1 + bw, y1 + bh).expect("sampled box is valid")
}

fn place_objects(config: &SimulatorConfig, count: usize, rng: &mut ChaCha8Rng) -> Result<Vec<BoundingBox>> {
    let budget = PLACEMENT_ATTEMPTS_PER_OBJECT * count.max(1);
    let mut placed: Vec<BoundingBox> = Vec::with_capacity(count);
    let mut attempts = 0;
    while placed.len() < count {
        if attempts == budget {
            return Err(Error::InfeasiblePlacement {
                requested: count,
                attempts,
            });
        }
        attempts += 1;
        let candidate = random_box(config, rng);
        if placed.iter().all(|p| p.iou(&candidate) < MAX_GROUND_TRUTH_IOU) {
            placed.push(candidate);
        }
    }
    Ok(placed)
}

fn jittered(b: &BoundingBox, noise: &Normal<f64>, (w, h): (f64, f64), rng: &mut ChaCha8Rng) -> BoundingBox {
    let [x1, y1, x2, y2] = b.to_array();
    let mut x1 = (x1 + noise.sample(rng)).clamp(0.0, w);
    let mut y1 = (y1 + noise.sample(rng)).clamp(0.0, h);
    let mut x2 = (x2 + noise.sample(rng)).clamp(0.0, w);
    let mut y2 = (y2 + noise.sample(rng)).clamp(0.0, h);
    if x2 < x1 {
        std::mem::swap(&mut x1, &mut x2);
    }
    if y2 < y1 {
        std::mem::swap(&mut y1, &mut y2);
    }
    BoundingBox::new(x1, y1, x2, y2).expect("clamped, ordered corners are valid")
}

/// Dirichlet draw via normalised independent Gamma variates.
fn dirichlet<'a>(len: usize, shape_of: impl Fn(usize) -> &'a Gamma<f64>, rng: &mut ChaCha8Rng) -> Vec<f64> {
    loop {
        let draws: Vec<f64> = (0..len).map(|c| shape_of(c).sample(rng)).collect();
        let total: f64 = draws.iter().sum();
        if total > 0.0 && total.is_finite() {
            return draws.into_iter().map(|g| g / total).collect();
        }
    }
}
