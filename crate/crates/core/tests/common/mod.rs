#![allow(dead_code)]

use osdet::{BoundingBox, Detection};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn simplex(rng: &mut impl Rng, len: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..len).map(|_| rng.random::<f64>().powi(3) + 1e-12).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

/// Boxes in a 100x100 field: clusters of jittered copies around a few anchors
/// plus free-standing boxes, so that every threshold sees both merges and splits.
pub fn random_detections(rng: &mut impl Rng, n: usize, classes: usize) -> Vec<Detection> {
    let anchors: Vec<[f64; 4]> = (0..rng.random_range(1..=8))
        .map(|_| {
            let (x, y) = (rng.random_range(0.0..70.0), rng.random_range(0.0..70.0));
            [x, y, x + rng.random_range(10.0..30.0), y + rng.random_range(10.0..30.0)]
        })
        .collect();
    (0..n)
        .map(|i| {
            let c = if rng.random_bool(0.8) {
                let a = anchors[rng.random_range(0..anchors.len())];
                let s = [0.05, 0.3, 1.0][rng.random_range(0..3)];
                let j: [f64; 4] = std::array::from_fn(|k| a[k] + rng.random_range(-s..=s));
                [j[0].min(j[2]), j[1].min(j[3]), j[0].max(j[2]), j[1].max(j[3])]
            } else {
                let (x, y) = (rng.random_range(0.0..90.0), rng.random_range(0.0..90.0));
                [x, y, x + rng.random_range(0.0..10.0), y + rng.random_range(0.0..10.0)]
            };
            Detection::new(simplex(rng, classes + 1), BoundingBox::from_array(c).unwrap(), i % 7).unwrap()
        })
        .collect()
}
