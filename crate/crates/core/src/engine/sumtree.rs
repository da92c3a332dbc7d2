/// Binary tree over non-negative leaf weights. Each internal node is
/// recomputed from its children on update, so the root never drifts away
/// from the sum of the leaves by more than one rounding per level.
#[derive(Debug, Clone)]
pub(crate) struct SumTree {
    leaves: usize,
    nodes: Vec<f64>,
}

impl SumTree {
    pub fn new(len: usize) -> Self {
        let leaves = len.max(1).next_power_of_two();
        SumTree { leaves, nodes: vec![0.0; 2 * leaves] }
    }

    pub fn from_weights(weights: &[f64]) -> Self {
        let mut tree = Self::new(weights.len());
        tree.nodes[tree.leaves..tree.leaves + weights.len()].copy_from_slice(weights);
        for i in (1..tree.leaves).rev() {
            tree.nodes[i] = tree.nodes[2 * i] + tree.nodes[2 * i + 1];
        }
        tree
    }

    #[inline]
    pub fn total(&self) -> f64 {
        self.nodes[1]
    }

    #[inline]
    pub fn get(&self, i: usize) -> f64 {
        self.nodes[self.leaves + i]
    }

    #[inline]
    pub fn set(&mut self, i: usize, value: f64) {
        let mut idx = self.leaves + i;
        if self.nodes[idx] == value {
            return;
        }
        self.nodes[idx] = value;
        while idx > 1 {
            idx /= 2;
            self.nodes[idx] = self.nodes[2 * idx] + self.nodes[2 * idx + 1];
        }
    }

    /// Leaf `i` and offset `r` inside it such that the prefix sum of leaves
    /// before `i` plus `r` equals `u`. Always lands on a positive leaf when the
    /// total is positive.
    pub fn find(&self, u: f64) -> (usize, f64) {
        let mut idx = 1;
        let mut u = u.max(0.0);
        while idx < self.leaves {
            let left = self.nodes[2 * idx];
            if u < left {
                idx *= 2;
            } else {
                u -= left;
                idx = 2 * idx + 1;
            }
        }
        let mut i = idx - self.leaves;
        let w = self.nodes[idx];
        if w <= 0.0 {
            // rounding pushed us onto an empty leaf: fall back to the last
            // positive leaf
            i = (0..self.leaves).rev().find(|&j| self.get(j) > 0.0).unwrap_or(0);
            return (i, self.get(i) * 0.5);
        }
        (i, u.min(w * (1.0 - f64::EPSILON)))
    }
}
