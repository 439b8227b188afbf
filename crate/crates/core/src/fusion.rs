//! Fusion of an observation's member detections into a label distribution,
//! its entropy, a mean box and the box covariance.
//!
//! Entropy is measured in nats over all `k + 1` entries, including the
//! unknown/background entry at index 0.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BoundingBox;
use crate::partition::{Detection, ObservationGroup};

pub type Covariance = [[f64; 4]; 4];

const RENORMALIZE_ABOVE: f64 = 1e-12;

/// An observation: a group of detections and the statistics fused from them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    /// Indices into the image's flattened detection list.
    pub members: Vec<usize>,
    pub fused_scores: Vec<f64>,
    pub entropy: f64,
    pub fused_box: BoundingBox,
    #[serde(with = "flat_covariance")]
    pub box_covariance: Covariance,
    pub winning_label: usize,
    pub detection_count: usize,
    /// Set when a single member leaves the covariance undefined (reported as zero).
    pub low_support: bool,
}

impl Observation {
    /// Fuses the detections selected by `group`.
    pub fn fuse(detections: &[Detection], group: &ObservationGroup) -> Result<Self> {
        let members: Vec<&Detection> = group.members.iter().map(|&i| &detections[i]).collect();
        let fused_scores = fuse_scores(&members)?;
        Ok(Self {
            members: group.members.clone(),
            entropy: entropy(&fused_scores),
            winning_label: winning_label(&fused_scores),
            fused_box: fuse_box(&members)?,
            box_covariance: box_covariance(&members)?,
            detection_count: members.len(),
            low_support: members.len() < 2,
            fused_scores,
        })
    }

    /// A one-member observation, equivalent to scoring a single detection on its own.
    pub fn single(detection: &Detection, index: usize) -> Self {
        let scores = detection.scores().to_vec();
        Self {
            members: vec![index],
            entropy: entropy(&scores),
            winning_label: winning_label(&scores),
            fused_box: *detection.bbox(),
            box_covariance: [[0.0; 4]; 4],
            detection_count: 1,
            low_support: true,
            fused_scores: scores,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Accept,
    Reject,
}

/// Rejects iff `h > threshold`; equality accepts.
pub fn entropy_test(h: f64, threshold: f64) -> Verdict {
    if h > threshold {
        Verdict::Reject
    } else {
        Verdict::Accept
    }
}

// Members are summed in a canonical order so that every fused quantity is
// bitwise independent of the order the detections arrived in.
fn canonical<'a>(members: &[&'a Detection]) -> Result<Vec<&'a Detection>> {
    let first = members.first().ok_or(Error::EmptyObservation)?;
    let len = first.scores().len();
    if let Some(d) = members.iter().find(|d| d.scores().len() != len) {
        return Err(Error::ScoreLengthMismatch {
            expected: len,
            found: d.scores().len(),
        });
    }
    let mut sorted = members.to_vec();
    sorted.sort_by(|a, b| compare_detections(a, b));
    Ok(sorted)
}

fn compare_detections(a: &Detection, b: &Detection) -> Ordering {
    let lex = |x: &[f64], y: &[f64]| {
        x.iter()
            .zip(y)
            .map(|(p, q)| p.total_cmp(q))
            .find(|o| o.is_ne())
            .unwrap_or(Ordering::Equal)
    };
    lex(&a.bbox().to_array(), &b.bbox().to_array()).then_with(|| lex(a.scores(), b.scores()))
}

/// Elementwise mean of the members' score vectors, renormalised onto the simplex
/// when the inputs' tolerance has drifted the sum away from 1.
pub fn fuse_scores(members: &[&Detection]) -> Result<Vec<f64>> {
    let members = canonical(members)?;
    let mut q = vec![0.0; members[0].scores().len()];
    for d in &members {
        for (acc, s) in q.iter_mut().zip(d.scores()) {
            *acc += s;
        }
    }
    let n = members.len() as f64;
    for v in &mut q {
        *v /= n;
    }
    // Only drift beyond rounding is corrected, so a single member fuses to itself exactly.
    let total: f64 = q.iter().sum();
    if (total - 1.0).abs() > RENORMALIZE_ABOVE {
        for v in &mut q {
            *v /= total;
        }
    }
    Ok(q)
}

/// Shannon entropy in nats, with `0 ln 0 = 0`, clamped to `[0, ln len]`.
pub fn entropy(q: &[f64]) -> f64 {
    let h: f64 = q.iter().filter(|&&p| p > 0.0).map(|&p| -p * p.ln()).sum();
    h.clamp(0.0, (q.len().max(1) as f64).ln())
}

/// Index of the largest entry; ties go to the lowest index.
pub fn winning_label(q: &[f64]) -> usize {
    let mut best = 0;
    for (i, &p) in q.iter().enumerate().skip(1) {
        if p > q[best] {
            best = i;
        }
    }
    best
}

pub fn fuse_box(members: &[&Detection]) -> Result<BoundingBox> {
    let members = canonical(members)?;
    let mean = mean_corners(&members);
    Ok(BoundingBox::from_array(mean).expect("mean of valid boxes is valid"))
}

fn mean_corners(members: &[&Detection]) -> [f64; 4] {
    let mut sum = [0.0; 4];
    for d in members {
        for (acc, c) in sum.iter_mut().zip(d.bbox().to_array()) {
            *acc += c;
        }
    }
    sum.map(|s| s / members.len() as f64)
}

/// Unbiased sample covariance of the `(x1, y1, x2, y2)` corner vectors. A
/// single member yields the zero matrix.
pub fn box_covariance(members: &[&Detection]) -> Result<Covariance> {
    let members = canonical(members)?;
    let n = members.len();
    let mut cov = [[0.0; 4]; 4];
    if n < 2 {
        return Ok(cov);
    }
    let mean = mean_corners(&members);
    for d in &members {
        let c = d.bbox().to_array();
        let dev: [f64; 4] = std::array::from_fn(|i| c[i] - mean[i]);
        for r in 0..4 {
            for col in r..4 {
                cov[r][col] += dev[r] * dev[col];
            }
        }
    }
    let denom = (n - 1) as f64;
    for r in 0..4 {
        for col in r..4 {
            cov[r][col] /= denom;
            cov[col][r] = cov[r][col];
        }
    }
    Ok(cov)
}

mod flat_covariance {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use super::Covariance;

    pub fn serialize<S: Serializer>(cov: &Covariance, s: S) -> Result<S::Ok, S::Error> {
        let flat: Vec<f64> = cov.iter().flatten().copied().collect();
        flat.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Covariance, D::Error> {
        let flat = <[f64; 16]>::deserialize(d)?;
        Ok(std::array::from_fn(|r| std::array::from_fn(|c| flat[4 * r + c])))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn det(scores: &[f64], b: [f64; 4]) -> Detection {
        Detection::new(scores.to_vec(), BoundingBox::from_array(b).unwrap(), 0).unwrap()
    }

    fn unit(scores: &[f64]) -> Detection {
        det(scores, [0.0, 0.0, 10.0, 10.0])
    }

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn fuse_scores_examples() {
        let a = unit(&[0.1, 0.9]);
        assert_eq!(fuse_scores(&[&a]).unwrap(), vec![0.1, 0.9]);

        let (x, y) = (unit(&[1.0, 0.0]), unit(&[0.0, 1.0]));
        assert_eq!(fuse_scores(&[&x, &y]).unwrap(), vec![0.5, 0.5]);

        let m = [unit(&[0.2, 0.8]), unit(&[0.4, 0.6]), unit(&[0.6, 0.4])];
        let refs: Vec<&Detection> = m.iter().collect();
        assert!(close(&fuse_scores(&refs).unwrap(), &[0.4, 0.6], 1e-12));
    }

    #[test]
    fn fuse_scores_errors() {
        assert!(matches!(fuse_scores(&[]), Err(Error::EmptyObservation)));
        let (a, b) = (unit(&[0.5, 0.5]), unit(&[0.2, 0.3, 0.5]));
        assert!(matches!(
            fuse_scores(&[&a, &b]),
            Err(Error::ScoreLengthMismatch { expected: 2, found: 3 })
        ));
    }

    #[test]
    fn fused_scores_absorb_input_drift() {
        let a = unit(&[0.3, 0.7 + 8e-7]);
        let b = unit(&[0.3, 0.7 + 9e-7]);
        let q = fuse_scores(&[&a, &b]).unwrap();
        assert!((q.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn entropy_examples() {
        assert_eq!(entropy(&[0.0, 1.0, 0.0]), 0.0);
        assert!((entropy(&[0.25; 4]) - 4f64.ln()).abs() < 1e-12);
        assert!((entropy(&[0.5, 0.5]) - 0.693_147_180_559_945_3).abs() < 1e-12);
        assert!((entropy(&[0.5, 0.5]) - 0.69315).abs() < 1e-5);
    }

    #[test]
    fn fuse_box_examples() {
        let a = unit(&[0.5, 0.5]);
        assert_eq!(fuse_box(&[&a]).unwrap().to_array(), [0.0, 0.0, 10.0, 10.0]);
        let b = det(&[0.5, 0.5], [2.0, 2.0, 12.0, 12.0]);
        assert_eq!(fuse_box(&[&a, &b]).unwrap().to_array(), [1.0, 1.0, 11.0, 11.0]);
        let same = vec![det(&[0.5, 0.5], [3.5, 1.25, 7.0, 9.5]); 7];
        let refs: Vec<&Detection> = same.iter().collect();
        assert_eq!(fuse_box(&refs).unwrap().to_array(), [3.5, 1.25, 7.0, 9.5]);
        assert!(fuse_box(&[]).is_err());
    }

    #[test]
    fn covariance_examples() {
        let a = unit(&[0.5, 0.5]);
        let b = det(&[0.5, 0.5], [2.0, 2.0, 12.0, 12.0]);
        assert_eq!(box_covariance(&[&a, &b]).unwrap(), [[2.0; 4]; 4]);
        assert_eq!(box_covariance(&[&a]).unwrap(), [[0.0; 4]; 4]);
        assert_eq!(box_covariance(&[&a, &a, &a]).unwrap(), [[0.0; 4]; 4]);
        assert!(box_covariance(&[]).is_err());
    }

    #[test]
    fn single_member_is_flagged() {
        let a = det(&[0.2, 0.8], [1.0, 2.0, 3.0, 4.0]);
        let o = Observation::fuse(std::slice::from_ref(&a), &ObservationGroup { members: vec![0] }).unwrap();
        assert!(o.low_support);
        assert_eq!(o.box_covariance, [[0.0; 4]; 4]);
        assert_eq!(o, Observation::single(&a, 0));
    }

    #[test]
    fn winning_label_examples() {
        assert_eq!(winning_label(&[0.1, 0.2, 0.7]), 2);
        assert_eq!(winning_label(&[0.5, 0.5]), 0);
        assert_eq!(winning_label(&[0.6, 0.4]), 0);
        assert_eq!(winning_label(&[0.2, 0.4, 0.4]), 1);
    }

    #[test]
    fn entropy_test_boundary() {
        assert_eq!(entropy_test(0.5, 0.64), Verdict::Accept);
        assert_eq!(entropy_test(0.7, 0.64), Verdict::Reject);
        assert_eq!(entropy_test(0.64, 0.64), Verdict::Accept);
    }

    #[test]
    fn covariance_serializes_row_major() {
        let a = unit(&[0.5, 0.5]);
        let b = det(&[0.5, 0.5], [2.0, 4.0, 12.0, 14.0]);
        let o = Observation::fuse(&[a, b], &ObservationGroup { members: vec![0, 1] }).unwrap();
        let v = serde_json::to_value(&o).unwrap();
        let flat: Vec<f64> = serde_json::from_value(v["box_covariance"].clone()).unwrap();
        assert_eq!(flat.len(), 16);
        assert_eq!(flat[1], o.box_covariance[0][1]);
        assert_eq!(flat[4], o.box_covariance[1][0]);
        assert_eq!(flat[5], 8.0);
        let back: Observation = serde_json::from_value(v).unwrap();
        assert_eq!(back, o);
    }
}
