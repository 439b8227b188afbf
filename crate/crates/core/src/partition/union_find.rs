use super::{ObservationGroup, Partitioner};
use crate::geometry::BoundingBox;

/// Disjoint-set forest with path compression and union by rank.
#[derive(Debug, Clone)]
pub struct DisjointSet {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl DisjointSet {
    pub fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            rank: vec![0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.parent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parent.is_empty()
    }

    /// Representative of `x`'s set. Panics if `x` is out of bounds.
    pub fn find(&mut self, x: usize) -> usize {
        let mut root = x;
        while self.parent[root] != root {
            root = self.parent[root];
        }
        let mut node = x;
        while self.parent[node] != root {
            let next = self.parent[node];
            self.parent[node] = root;
            node = next;
        }
        root
    }

    /// Merges the sets of `a` and `b`; returns false if they were already joined.
    pub fn union(&mut self, a: usize, b: usize) -> bool {
        let ra = self.find(a);
        let rb = self.find(b);
        if ra == rb {
            return false;
        }
        match self.rank[ra].cmp(&self.rank[rb]) {
            std::cmp::Ordering::Less => self.parent[ra] = rb,
            std::cmp::Ordering::Greater => self.parent[rb] = ra,
            std::cmp::Ordering::Equal => {
                self.parent[rb] = ra;
                self.rank[ra] += 1;
            }
        }
        true
    }

    pub fn same_set(&mut self, a: usize, b: usize) -> bool {
        self.find(a) == self.find(b)
    }

    pub fn rank_of_root(&mut self, x: usize) -> u8 {
        let r = self.find(x);
        self.rank[r]
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct UnionFindPartitioner;

impl Partitioner for UnionFindPartitioner {
    fn name(&self) -> &'static str {
        "union-find"
    }

    fn partition(&self, boxes: &[BoundingBox], threshold: f64) -> Vec<ObservationGroup> {
        let n = boxes.len();
        let mut sets = DisjointSet::new(n);
        for i in 0..n {
            for j in (i + 1)..n {
                if boxes[i].iou(&boxes[j]) >= threshold {
                    sets.union(i, j);
                }
            }
        }

        // Scanning in index order visits each root's smallest member first.
        let mut slot: Vec<Option<usize>> = vec![None; n];
        let mut groups: Vec<ObservationGroup> = Vec::new();
        for i in 0..n {
            let root = sets.find(i);
            let g = *slot[root].get_or_insert_with(|| {
                groups.push(ObservationGroup { members: Vec::new() });
                groups.len() - 1
            });
            groups[g].members.push(i);
        }
        groups
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn union_and_find() {
        let mut s = DisjointSet::new(6);
        assert!(s.union(0, 1));
        assert!(s.union(2, 3));
        assert!(!s.union(1, 0));
        assert!(s.same_set(0, 1));
        assert!(!s.same_set(1, 2));
        s.union(1, 3);
        assert!(s.same_set(0, 2));
        assert!(!s.same_set(4, 5));
    }

    #[test]
    fn find_is_idempotent() {
        let mut s = DisjointSet::new(10);
        for i in 0..9 {
            s.union(i, i + 1);
        }
        let r = s.find(9);
        assert_eq!(s.find(9), r);
        assert_eq!(s.find(r), r);
        assert!((0..10).all(|i| s.find(i) == r));
    }

    #[test]
    fn rank_stays_logarithmic() {
        let n = 1 << 12;
        let mut s = DisjointSet::new(n);
        // Pairwise merges in rounds build the tallest possible union-by-rank tree.
        let mut step = 1;
        while step < n {
            for i in (0..n).step_by(2 * step) {
                s.union(i, i + step);
            }
            step *= 2;
        }
        assert!(s.rank_of_root(0) as usize <= 12);
        assert!((0..n).all(|i| s.same_set(0, i)));
    }
}
