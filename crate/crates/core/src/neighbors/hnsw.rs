//! Hierarchical navigable small-world graph for approximate k-NN.
//!
//! Layer assignment, greedy descent through the upper layers and the
//! neighbor-selection heuristic follow Malkov & Yashunin. Construction is
//! sequential and seeded, so a given point set always yields the same graph.

use std::collections::{BinaryHeap, HashSet};
use std::cmp::Reverse;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::kdtree::Candidate;
use crate::points::{sq_distance, Points};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct HnswParams {
    /// Maximum out-degree on the upper layers; the base layer allows twice this.
    pub max_degree: usize,
    pub ef_construction: usize,
    pub ef_search: usize,
    pub seed: u64,
}

impl Default for HnswParams {
    fn default() -> Self {
        Self { max_degree: 16, ef_construction: 200, ef_search: 100, seed: 0x5eed }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Hnsw {
    params: HnswParams,
    /// `links[node][level]` lists the neighbors of `node` on `level`.
    links: Vec<Vec<Vec<u32>>>,
    entry: usize,
    top_level: usize,
}

struct Visited {
    marks: Vec<u32>,
    generation: u32,
}

impl Visited {
    fn new(n: usize) -> Self {
        Self { marks: vec![0; n], generation: 0 }
    }

    fn reset(&mut self) {
        self.generation = self.generation.wrapping_add(1);
        if self.generation == 0 {
            self.marks.fill(0);
            self.generation = 1;
        }
    }

    fn insert(&mut self, id: usize) -> bool {
        if self.marks[id] == self.generation {
            false
        } else {
            self.marks[id] = self.generation;
            true
        }
    }
}

trait VisitSet {
    fn first_visit(&mut self, id: usize) -> bool;
}

impl VisitSet for Visited {
    fn first_visit(&mut self, id: usize) -> bool {
        self.insert(id)
    }
}

impl VisitSet for HashSet<usize> {
    fn first_visit(&mut self, id: usize) -> bool {
        self.insert(id)
    }
}

impl Hnsw {
    pub fn build(points: &Points, params: HnswParams) -> Self {
        let n = points.len();
        let m = params.max_degree.max(2);
        let level_mult = 1.0 / (m as f64).ln();
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        let mut graph = Hnsw { params, links: Vec::with_capacity(n), entry: 0, top_level: 0 };
        let mut visited = Visited::new(n);

        for id in 0..n {
            let u: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
            let level = (-u.ln() * level_mult).floor() as usize;
            graph.links.push(vec![Vec::new(); level + 1]);
            if id == 0 {
                graph.top_level = level;
                continue;
            }
            let q = points.row(id);
            let mut ep = Candidate { sq_dist: sq_distance(points.row(graph.entry), q), id: graph.entry };
            for l in (level + 1..=graph.top_level).rev() {
                ep = graph.greedy(points, q, ep, l);
            }
            let mut eps = vec![ep];
            for l in (0..=level.min(graph.top_level)).rev() {
                visited.reset();
                let found = graph.search_layer(points, q, &eps, params.ef_construction, l, &mut visited);
                let cap = graph.capacity(l);
                let chosen = select_neighbors(points, &found, m);
                graph.links[id][l] = chosen.iter().map(|c| c.id as u32).collect();
                for c in &chosen {
                    graph.links[c.id][l].push(id as u32);
                    if graph.links[c.id][l].len() > cap {
                        graph.shrink(points, c.id, l, cap);
                    }
                }
                eps = found;
            }
            if level > graph.top_level {
                graph.top_level = level;
                graph.entry = id;
            }
        }
        graph
    }

    fn capacity(&self, level: usize) -> usize {
        if level == 0 {
            2 * self.params.max_degree
        } else {
            self.params.max_degree
        }
    }

    fn shrink(&mut self, points: &Points, node: usize, level: usize, cap: usize) {
        let base = points.row(node);
        let mut cands: Vec<Candidate> = self.links[node][level]
            .iter()
            .map(|&j| Candidate { sq_dist: sq_distance(points.row(j as usize), base), id: j as usize })
            .collect();
        cands.sort_unstable();
        self.links[node][level] = select_neighbors(points, &cands, cap).iter().map(|c| c.id as u32).collect();
    }

    fn greedy(&self, points: &Points, q: &[f64], mut best: Candidate, level: usize) -> Candidate {
        loop {
            let mut improved = false;
            for &j in &self.links[best.id][level] {
                let c = Candidate { sq_dist: sq_distance(points.row(j as usize), q), id: j as usize };
                if c < best {
                    best = c;
                    improved = true;
                }
            }
            if !improved {
                return best;
            }
        }
    }

    /// Beam search on one layer; returns up to `ef` candidates sorted ascending.
    fn search_layer<V: VisitSet>(
        &self,
        points: &Points,
        q: &[f64],
        entries: &[Candidate],
        ef: usize,
        level: usize,
        visited: &mut V,
    ) -> Vec<Candidate> {
        let mut frontier: BinaryHeap<Reverse<Candidate>> = BinaryHeap::new();
        let mut best: BinaryHeap<Candidate> = BinaryHeap::new();
        for &e in entries {
            if visited.first_visit(e.id) {
                frontier.push(Reverse(e));
                best.push(e);
            }
        }
        while best.len() > ef {
            best.pop();
        }
        while let Some(Reverse(cur)) = frontier.pop() {
            if best.len() >= ef && cur > *best.peek().expect("non-empty") {
                break;
            }
            for &j in &self.links[cur.id][level] {
                let j = j as usize;
                if !visited.first_visit(j) {
                    continue;
                }
                let c = Candidate { sq_dist: sq_distance(points.row(j), q), id: j };
                if best.len() < ef || c < *best.peek().expect("non-empty") {
                    frontier.push(Reverse(c));
                    best.push(c);
                    if best.len() > ef {
                        best.pop();
                    }
                }
            }
        }
        best.into_sorted_vec()
    }

    pub fn knn(&self, points: &Points, q: &[f64], k: usize) -> Vec<Candidate> {
        if points.is_empty() || k == 0 {
            return Vec::new();
        }
        let mut ep = Candidate { sq_dist: sq_distance(points.row(self.entry), q), id: self.entry };
        for l in (1..=self.top_level).rev() {
            ep = self.greedy(points, q, ep, l);
        }
        let mut visited = HashSet::new();
        let mut found = self.search_layer(points, q, &[ep], self.params.ef_search.max(k), 0, &mut visited);
        found.truncate(k);
        found
    }
}

/// Neighbor-selection heuristic: keep a candidate only if it is closer to the
/// base than to every already kept neighbor, then top up with the closest
/// discarded ones.
fn select_neighbors(points: &Points, sorted: &[Candidate], m: usize) -> Vec<Candidate> {
    let mut kept: Vec<Candidate> = Vec::with_capacity(m);
    let mut discarded = Vec::new();
    for &c in sorted {
        if kept.len() >= m {
            break;
        }
        let row = points.row(c.id);
        if kept.iter().all(|k| sq_distance(points.row(k.id), row) > c.sq_dist) {
            kept.push(c);
        } else {
            discarded.push(c);
        }
    }
    for c in discarded {
        if kept.len() >= m {
            break;
        }
        kept.push(c);
    }
    kept
}
