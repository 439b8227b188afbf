use std::collections::VecDeque;

use super::{ObservationGroup, Partitioner};
use crate::geometry::{iou, BoundingBox};

/// Breadth-first connected components over an explicit adjacency matrix.
#[derive(Debug, Clone, Copy, Default)]
pub struct BruteForcePartitioner;

impl Partitioner for BruteForcePartitioner {
    fn name(&self) -> &'static str {
        "brute-force"
    }

    fn partition(&self, boxes: &[BoundingBox], threshold: f64) -> Vec<ObservationGroup> {
        let n = boxes.len();
        let adjacent: Vec<Vec<bool>> = (0..n)
            .map(|i| (0..n).map(|j| i != j && iou(&boxes[i], &boxes[j]) >= threshold).collect())
            .collect();

        let mut visited = vec![false; n];
        let mut groups = Vec::new();
        for start in 0..n {
            if visited[start] {
                continue;
            }
            visited[start] = true;
            let mut members = vec![start];
            let mut queue = VecDeque::from([start]);
            while let Some(u) = queue.pop_front() {
                for v in 0..n {
                    if adjacent[u][v] && !visited[v] {
                        visited[v] = true;
                        members.push(v);
                        queue.push_back(v);
                    }
                }
            }
            members.sort_unstable();
            groups.push(ObservationGroup { members });
        }
        groups
    }
}
