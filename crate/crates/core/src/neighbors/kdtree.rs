//! Static k-d tree for exact k-NN in low dimension.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::points::{sq_distance, Points};

const LEAF_SIZE: usize = 12;

#[derive(Debug, Clone)]
enum Node {
    Leaf { start: usize, end: usize },
    Split { dim: usize, value: f64, left: usize, right: usize },
}

#[derive(Debug, Clone)]
pub(crate) struct KdTree {
    nodes: Vec<Node>,
    order: Vec<usize>,
}

/// A candidate ordered by squared distance, then by index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Candidate {
    pub sq_dist: f64,
    pub id: usize,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.sq_dist.total_cmp(&other.sq_dist).then(self.id.cmp(&other.id))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl KdTree {
    pub fn build(points: &Points) -> Self {
        let mut tree = KdTree { nodes: Vec::new(), order: (0..points.len()).collect() };
        let n = points.len();
        tree.build_node(points, 0, n);
        tree
    }

    fn build_node(&mut self, points: &Points, start: usize, end: usize) -> usize {
        let slot = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, end });
            return slot;
        }
        // Split on the dimension of largest spread.
        let dim = (0..points.dim())
            .max_by(|&a, &b| spread(points, &self.order[start..end], a).total_cmp(&spread(points, &self.order[start..end], b)))
            .unwrap_or(0);
        let mid = start + (end - start) / 2;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            points.row(a)[dim].total_cmp(&points.row(b)[dim]).then(a.cmp(&b))
        });
        let value = points.row(self.order[mid])[dim];
        self.nodes.push(Node::Leaf { start: 0, end: 0 });
        let left = self.build_node(points, start, mid);
        let right = self.build_node(points, mid, end);
        self.nodes[slot] = Node::Split { dim, value, left, right };
        slot
    }

    /// The `k` nearest reference points to `query`, sorted by (distance, index).
    pub fn knn(&self, points: &Points, query: &[f64], k: usize) -> Vec<Candidate> {
        let mut heap = BinaryHeap::with_capacity(k + 1);
        if k > 0 {
            self.search(0, points, query, k, &mut heap);
        }
        heap.into_sorted_vec()
    }

    fn search(&self, node: usize, points: &Points, query: &[f64], k: usize, heap: &mut BinaryHeap<Candidate>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &id in &self.order[start..end] {
                    let c = Candidate { sq_dist: sq_distance(points.row(id), query), id };
                    if heap.len() < k {
                        heap.push(c);
                    } else if c < *heap.peek().expect("heap is full") {
                        heap.pop();
                        heap.push(c);
                    }
                }
            }
            Node::Split { dim, value, left, right } => {
                let diff = query[dim] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.search(near, points, query, k, heap);
                // Equal distance still has to be visited: a tie may carry a smaller index.
                if heap.len() < k || diff * diff <= heap.peek().map_or(f64::INFINITY, |c| c.sq_dist) {
                    self.search(far, points, query, k, heap);
                }
            }
        }
    }
}

fn spread(points: &Points, ids: &[usize], dim: usize) -> f64 {
    let (lo, hi) = ids.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &i| {
        let v = points.row(i)[dim];
        (lo.min(v), hi.max(v))
    });
    hi - lo
}

/// Exhaustive search with partial selection.
pub(crate) fn brute_force_knn(points: &Points, query: &[f64], k: usize) -> Vec<Candidate> {
    let mut all: Vec<Candidate> =
        points.rows().enumerate().map(|(id, r)| Candidate { sq_dist: sq_distance(r, query), id }).collect();
    if k < all.len() {
        all.select_nth_unstable(k);
        all.truncate(k);
    }
    all.sort_unstable();
    all
}
