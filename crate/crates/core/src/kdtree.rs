//! k-d tree with best-bin-first search over fixed-length vectors.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

enum Node {
    Leaf(usize),
    Split { dim: usize, value: f64, left: usize, right: usize },
}

pub struct KdTree<'a, const D: usize> {
    points: &'a [[f64; D]],
    nodes: Vec<Node>,
}

/// Min-heap entry keyed on the lower bound of the squared distance to any
/// point in the subtree.
struct Pending {
    bound: f64,
    node: usize,
}

impl PartialEq for Pending {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Pending {}
impl PartialOrd for Pending {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Pending {
    fn cmp(&self, other: &Self) -> Ordering {
        other.bound.total_cmp(&self.bound).then_with(|| other.node.cmp(&self.node))
    }
}

#[inline]
pub fn dist2<const D: usize>(a: &[f64; D], b: &[f64; D]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

impl<'a, const D: usize> KdTree<'a, D> {
    /// Builds the tree; each leaf holds a single point.
    pub fn new(points: &'a [[f64; D]]) -> Self {
        let mut tree = KdTree { points, nodes: Vec::with_capacity(2 * points.len()) };
        if !points.is_empty() {
            let mut idx: Vec<usize> = (0..points.len()).collect();
            tree.build(&mut idx);
        }
        tree
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn build(&mut self, idx: &mut [usize]) -> usize {
        if idx.len() == 1 {
            self.nodes.push(Node::Leaf(idx[0]));
            return self.nodes.len() - 1;
        }
        // split on the widest dimension at the median
        let mut dim = 0;
        let mut widest = -1.0;
        for d in 0..D {
            let (lo, hi) = idx.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &i| {
                let v = self.points[i][d];
                (lo.min(v), hi.max(v))
            });
            if hi - lo > widest {
                widest = hi - lo;
                dim = d;
            }
        }
        let mid = idx.len() / 2;
        let pts = self.points;
        idx.select_nth_unstable_by(mid, |&a, &b| pts[a][dim].total_cmp(&pts[b][dim]).then(a.cmp(&b)));
        let value = pts[idx[mid]][dim];
        let slot = self.nodes.len();
        self.nodes.push(Node::Leaf(usize::MAX));
        let (lo, hi) = idx.split_at_mut(mid);
        let left = self.build(lo);
        let right = self.build(hi);
        self.nodes[slot] = Node::Split { dim, value, left, right };
        slot
    }

    /// Approximate nearest neighbor: visits at most `max_checks` leaves in
    /// order of their distance bound. Returns `(index, squared distance)`.
    ///
    /// With `max_checks >= len()` the result is the exact nearest neighbor,
    /// ties going to the lowest index.
    pub fn nearest(&self, query: &[f64; D], max_checks: usize) -> Option<(usize, f64)> {
        if self.nodes.is_empty() {
            return None;
        }
        let mut best = (usize::MAX, f64::INFINITY);
        let mut heap = BinaryHeap::new();
        heap.push(Pending { bound: 0.0, node: 0 });
        let mut checks = 0;
        while let Some(Pending { bound, node }) = heap.pop() {
            if bound > best.1 || checks >= max_checks.max(1) {
                break;
            }
            let mut cur = node;
            loop {
                match self.nodes[cur] {
                    Node::Leaf(i) => {
                        let d = dist2(query, &self.points[i]);
                        if d < best.1 || (d == best.1 && i < best.0) {
                            best = (i, d);
                        }
                        checks += 1;
                        break;
                    }
                    Node::Split { dim, value, left, right } => {
                        let diff = query[dim] - value;
                        let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                        let far_bound = bound.max(diff * diff);
                        if far_bound <= best.1 {
                            heap.push(Pending { bound: far_bound, node: far });
                        }
                        cur = near;
                    }
                }
            }
        }
        Some(best)
    }
}
