//! Exact and approximate k-nearest-neighbor indexes over training locations.
//!
//! Results are always sorted by distance with ties broken by ascending
//! training index. The exact backend uses a k-d tree for dimension up to 3 and
//! an exhaustive scan otherwise; the approximate backend is an HNSW graph.

mod hnsw;
mod kdtree;

use serde::{Deserialize, Serialize};

pub use hnsw::HnswParams;

use crate::error::{Error, Result};
use crate::points::Points;
use hnsw::Hnsw;
use kdtree::{brute_force_knn, Candidate, KdTree};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Backend {
    #[default]
    Exact,
    Approximate(HnswParams),
}

#[derive(Debug, Clone)]
enum Structure {
    KdTree(KdTree),
    Scan,
    Graph(Hnsw),
}

/// Build-once, query-many neighbor index.
#[derive(Debug, Clone)]
pub struct NeighborIndex {
    points: Points,
    backend: Backend,
    structure: Structure,
}

/// Neighbor ids with their distances, nondecreasing in distance.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Neighbors {
    pub ids: Vec<usize>,
    pub distances: Vec<f64>,
}

impl Neighbors {
    fn from_candidates(cands: impl IntoIterator<Item = Candidate>) -> Self {
        let (ids, distances) = cands.into_iter().map(|c| (c.id, c.sq_dist.sqrt())).unzip();
        Self { ids, distances }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

impl NeighborIndex {
    pub fn build(points: Points, backend: Backend) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::InsufficientData(format!(
                "a neighbor index needs at least 2 points, got {}",
                points.len()
            )));
        }
        let structure = match backend {
            Backend::Exact if points.dim() <= 3 => Structure::KdTree(KdTree::build(&points)),
            Backend::Exact => Structure::Scan,
            Backend::Approximate(params) => {
                if params.max_degree < 2 || params.ef_construction == 0 || params.ef_search == 0 {
                    return Err(Error::Parameter(format!("invalid HNSW parameters {params:?}")));
                }
                Structure::Graph(Hnsw::build(&points, params))
            }
        };
        Ok(Self { points, backend, structure })
    }

    pub fn points(&self) -> &Points {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn backend(&self) -> Backend {
        self.backend
    }

    fn knn(&self, q: &[f64], k: usize) -> Vec<Candidate> {
        match &self.structure {
            Structure::KdTree(t) => t.knn(&self.points, q, k),
            Structure::Scan => brute_force_knn(&self.points, q, k),
            Structure::Graph(g) => g.knn(&self.points, q, k),
        }
    }

    /// The `k` nearest training points to an arbitrary location.
    pub fn query(&self, point: &[f64], k: usize) -> Result<Neighbors> {
        if point.len() != self.points.dim() {
            return Err(Error::Shape(format!(
                "query has dimension {}, index has {}",
                point.len(),
                self.points.dim()
            )));
        }
        if k == 0 || k > self.len() {
            return Err(Error::Parameter(format!("k = {k} must lie in [1, {}]", self.len())));
        }
        Ok(Neighbors::from_candidates(self.knn(point, k)))
    }

    /// The `k` nearest training points to training point `id`, excluding `id`.
    pub fn query_loo(&self, id: usize, k: usize) -> Result<Neighbors> {
        if id >= self.len() {
            return Err(Error::Parameter(format!("training id {id} out of range for {} points", self.len())));
        }
        if k == 0 || k > self.len() - 1 {
            return Err(Error::Parameter(format!(
                "k = {k} must lie in [1, n-1 = {}] for leave-one-out queries",
                self.len() - 1
            )));
        }
        let cands = self.knn(self.points.row(id), k + 1);
        Ok(Neighbors::from_candidates(cands.into_iter().filter(|c| c.id != id).take(k)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_points(n: usize, dim: usize, seed: u64) -> Points {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Points::new(dim, (0..n * dim).map(|_| rng.random::<f64>()).collect()).unwrap()
    }

    // Oracle: full sort of every distance, ties by index.
    fn oracle(points: &Points, q: &[f64], k: usize, skip: Option<usize>) -> Vec<(usize, f64)> {
        let mut all: Vec<(f64, usize)> = points
            .rows()
            .enumerate()
            .filter(|(i, _)| Some(*i) != skip)
            .map(|(i, r)| (r.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum::<f64>(), i))
            .collect();
        all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        all.into_iter().take(k).map(|(d, i)| (i, d.sqrt())).collect()
    }

    fn line() -> NeighborIndex {
        NeighborIndex::build(Points::new(1, vec![0.0, 1.0, 2.0]).unwrap(), Backend::Exact).unwrap()
    }

    #[test]
    fn collinear_points() {
        let idx = line();
        let n = idx.query_loo(1, 2).unwrap();
        assert_eq!(n.ids, vec![0, 2]);
        assert_eq!(n.distances, vec![1.0, 1.0]);
        let n = idx.query_loo(0, 1).unwrap();
        assert_eq!((n.ids, n.distances), (vec![1], vec![1.0]));
        let n = idx.query(&[2.0], 1).unwrap();
        assert_eq!((n.ids, n.distances), (vec![2], vec![0.0]));
        let n = idx.query(&[0.5], 2).unwrap();
        assert_eq!((n.ids, n.distances), (vec![0, 1], vec![0.5, 0.5]));
    }

    #[test]
    fn parameter_errors() {
        let idx = line();
        assert!(matches!(idx.query_loo(0, 3), Err(Error::Parameter(_))));
        assert!(matches!(idx.query(&[0.0], 4), Err(Error::Parameter(_))));
        assert!(matches!(idx.query(&[0.0], 0), Err(Error::Parameter(_))));
        assert!(matches!(idx.query(&[0.0, 1.0], 1), Err(Error::Shape(_))));
        let one = Points::new(2, vec![0.0, 0.0]).unwrap();
        assert!(matches!(NeighborIndex::build(one, Backend::Exact), Err(Error::InsufficientData(_))));
        let two = NeighborIndex::build(Points::new(2, vec![0.0, 0.0, 3.0, 4.0]).unwrap(), Backend::Exact).unwrap();
        assert_eq!(two.query_loo(1, 1).unwrap().distances, vec![5.0]);
    }

    #[test]
    fn exact_matches_brute_force() {
        for &dim in &[1, 2, 3, 5] {
            let pts = random_points(500, dim, 7 + dim as u64);
            let idx = NeighborIndex::build(pts.clone(), Backend::Exact).unwrap();
            for id in (0..500).step_by(37) {
                let got = idx.query_loo(id, 20).unwrap();
                let want = oracle(&pts, pts.row(id), 20, Some(id));
                assert_eq!(got.ids, want.iter().map(|w| w.0).collect::<Vec<_>>());
                assert_eq!(got.distances, want.iter().map(|w| w.1).collect::<Vec<_>>());
            }
            let q = random_points(1, dim, 99);
            let got = idx.query(q.row(0), 50).unwrap();
            let want = oracle(&pts, q.row(0), 50, None);
            assert_eq!(got.ids, want.iter().map(|w| w.0).collect::<Vec<_>>());
        }
    }

    #[test]
    fn ties_break_by_index_on_a_grid() {
        let mut coords = Vec::new();
        for i in 0..10 {
            for j in 0..10 {
                coords.extend([i as f64, j as f64]);
            }
        }
        let pts = Points::new(2, coords).unwrap();
        let idx = NeighborIndex::build(pts.clone(), Backend::Exact).unwrap();
        for id in 0..100 {
            let got = idx.query_loo(id, 8).unwrap();
            let want = oracle(&pts, pts.row(id), 8, Some(id));
            assert_eq!(got.ids, want.iter().map(|w| w.0).collect::<Vec<_>>(), "id {id}");
        }
    }

    #[test]
    fn duplicates_are_excluded_by_id_only() {
        let pts = Points::new(1, vec![0.0, 0.0, 0.0, 5.0]).unwrap();
        let idx = NeighborIndex::build(pts, Backend::Exact).unwrap();
        let n = idx.query_loo(1, 2).unwrap();
        assert_eq!(n.ids, vec![0, 2]);
        assert_eq!(n.distances, vec![0.0, 0.0]);
    }

    #[test]
    fn approximate_recall_at_50() {
        let pts = random_points(10_000, 2, 2024);
        let exact = NeighborIndex::build(pts.clone(), Backend::Exact).unwrap();
        let approx = NeighborIndex::build(pts, Backend::Approximate(HnswParams::default())).unwrap();
        let mut hits = 0usize;
        let queries = 300;
        for q in 0..queries {
            let id = q * 33;
            let truth = exact.query_loo(id, 50).unwrap();
            let got = approx.query_loo(id, 50).unwrap();
            assert!(!got.ids.contains(&id));
            assert!(got.distances.windows(2).all(|w| w[0] <= w[1]));
            hits += got.ids.iter().filter(|i| truth.ids.contains(i)).count();
        }
        let recall = hits as f64 / (queries * 50) as f64;
        assert!(recall >= 0.95, "recall {recall}");
    }

    #[test]
    fn approximate_is_deterministic() {
        let pts = random_points(2_000, 2, 1);
        let a = NeighborIndex::build(pts.clone(), Backend::Approximate(HnswParams::default())).unwrap();
        let b = NeighborIndex::build(pts, Backend::Approximate(HnswParams::default())).unwrap();
        for id in (0..2000).step_by(101) {
            assert_eq!(a.query_loo(id, 10).unwrap(), b.query_loo(id, 10).unwrap());
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(48))]
            #[test]
            fn loo_excludes_self_and_is_sorted(seed in 0u64..1000, n in 2usize..80, kk in 1usize..20) {
                let pts = random_points(n, 2, seed);
                let idx = NeighborIndex::build(pts, Backend::Exact).unwrap();
                let k = kk.min(n - 1);
                for id in 0..n {
                    let nb = idx.query_loo(id, k).unwrap();
                    prop_assert_eq!(nb.len(), k);
                    prop_assert!(!nb.ids.contains(&id));
                    prop_assert!(nb.distances.windows(2).all(|w| w[0] <= w[1]));
                }
            }
        }
    }
}
