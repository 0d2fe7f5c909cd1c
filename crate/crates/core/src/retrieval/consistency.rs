use crate::geometry::Pose;
use crate::graphnet::{FeatureSource, SceneGraph};
use crate::registration::{match_features, ransac_align, Correspondence, RansacParams};

pub const DEFAULT_D_T: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConsistencyParams {
    /// Length disagreement (meters) at which a pair stops contributing.
    pub d_t: f64,
    /// Divide the sum by the number of inliers.
    pub normalize: bool,
    pub features: FeatureSource,
    pub ransac: RansacParams,
}

impl Default for ConsistencyParams {
    fn default() -> Self {
        Self { d_t: DEFAULT_D_T, normalize: false, features: FeatureSource::default(), ransac: RansacParams::default() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConsistencyResult {
    pub score: f64,
    pub inliers: Vec<Correspondence>,
    pub transform: Option<Pose>,
}

impl ConsistencyResult {
    fn zero() -> Self {
        Self { score: 0.0, inliers: Vec::new(), transform: None }
    }
}

/// Sum over unordered pairs of inlier correspondences of
/// `max(1 − (d₁ − d₂)² / d_t², 0)`, where `d₁` and `d₂` are the distances
/// between the paired nodes inside the query and candidate graphs.
pub fn pair_consistency(query: &SceneGraph, candidate: &SceneGraph, inliers: &[Correspondence], d_t: f64) -> f64 {
    let inv = 1.0 / (d_t * d_t);
    let mut sum = 0.0;
    for (a, ca) in inliers.iter().enumerate() {
        for cb in &inliers[a + 1..] {
            let d1 = (query.centroids[ca.query_node] - query.centroids[cb.query_node]).norm();
            let d2 = (candidate.centroids[ca.candidate_node] - candidate.centroids[cb.candidate_node]).norm();
            sum += (1.0 - (d1 - d2).powi(2) * inv).max(0.0);
        }
    }
    sum
}

/// Geometric consistency of two graphs: mutual matches, RANSAC on their
/// centroids, then [`pair_consistency`] over the RANSAC inliers. Zero when
/// no hypothesis can be formed.
pub fn consistency_score(query: &SceneGraph, candidate: &SceneGraph, params: &ConsistencyParams) -> ConsistencyResult {
    if query.is_empty() || candidate.is_empty() {
        return ConsistencyResult::zero();
    }
    let corr = match_features(query.matching_features(params.features), candidate.matching_features(params.features));
    if corr.len() < 3 {
        return ConsistencyResult::zero();
    }
    let Ok(est) = ransac_align(&query.centroids, &candidate.centroids, &corr, &params.ransac) else {
        return ConsistencyResult::zero();
    };
    let mut score = pair_consistency(query, candidate, &est.inliers, params.d_t);
    if params.normalize && !est.inliers.is_empty() {
        score /= est.inliers.len() as f64;
    }
    ConsistencyResult { score, inliers: est.inliers, transform: Some(est.transform) }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Point3;
    use crate::graphnet::build_graph;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn graph(centroids: Vec<Point3>, descriptors: Vec<Vec<f64>>) -> SceneGraph {
        let k = centroids.len();
        build_graph(centroids, vec![0; k], &descriptors, 20.0).unwrap()
    }

    fn corr(pairs: &[(usize, usize)]) -> Vec<Correspondence> {
        pairs.iter().map(|&(i, j)| Correspondence { query_node: i, candidate_node: j, descriptor_distance: 0.0 }).collect()
    }

    #[test]
    fn single_pair_term() {
        let q = graph(vec![Point3::zeros(), Point3::new(1.0, 0.0, 0.0)], vec![vec![0.0], vec![1.0]]);
        let c = graph(vec![Point3::zeros(), Point3::new(0.0, 1.5, 0.0)], vec![vec![0.0], vec![1.0]]);
        let s = pair_consistency(&q, &c, &corr(&[(0, 0), (1, 1)]), 1.0);
        assert!((s - 0.75).abs() < 1e-15);
    }

    #[test]
    fn hinge_clips_large_disagreement() {
        let q = graph(vec![Point3::zeros(), Point3::new(1.0, 0.0, 0.0), Point3::new(0.0, 5.0, 0.0)], vec![vec![0.0]; 3]);
        let c = graph(vec![Point3::zeros(), Point3::new(3.0, 0.0, 0.0), Point3::new(0.0, 9.0, 0.0)], vec![vec![0.0]; 3]);
        assert_eq!(pair_consistency(&q, &c, &corr(&[(0, 0), (1, 1), (2, 2)]), 1.0), 0.0);
    }

    #[test]
    fn rigid_copy_scores_pair_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(101);
        let pts: Vec<Point3> = (0..5).map(|_| Point3::new(rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0), rng.random_range(-1.0..1.0))).collect();
        let desc: Vec<Vec<f64>> = (0..5).map(|i| (0..4).map(|j| if i == j { 1.0 } else { 0.0 }).chain([i as f64]).collect()).collect();
        let pose = Pose::random(&mut rng, 180.0, 30.0);
        let q = graph(pts.clone(), desc.clone());
        let c = graph(pose.transform_slice(&pts), desc);
        let r = consistency_score(&q, &c, &ConsistencyParams::default());
        assert_eq!(r.inliers.len(), 5);
        assert!((r.score - 10.0).abs() < 1e-9);

        let norm = consistency_score(&q, &c, &ConsistencyParams { normalize: true, ..Default::default() });
        assert!((norm.score - 2.0).abs() < 1e-9);
    }

    #[test]
    fn too_few_matches_scores_zero() {
        let q = graph(vec![Point3::zeros(), Point3::new(1.0, 0.0, 0.0)], vec![vec![0.0], vec![1.0]]);
        let r = consistency_score(&q, &q, &ConsistencyParams::default());
        assert_eq!(r.score, 0.0);
        assert!(r.transform.is_none());
    }

    #[test]
    fn removing_inliers_never_increases() {
        let mut rng = ChaCha8Rng::seed_from_u64(102);
        let q = graph((0..8).map(|_| Point3::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), 0.0)).collect(), vec![vec![0.0]; 8]);
        let c = graph(q.centroids.iter().map(|p| p + Point3::new(rng.random_range(-0.4..0.4), rng.random_range(-0.4..0.4), 0.0)).collect(), vec![vec![0.0]; 8]);
        let mut inl = corr(&(0..8).map(|i| (i, i)).collect::<Vec<_>>());
        let mut prev = pair_consistency(&q, &c, &inl, 1.0);
        while !inl.is_empty() {
            inl.remove(rng.random_range(0..inl.len()));
            let now = pair_consistency(&q, &c, &inl, 1.0);
            assert!(now <= prev + 1e-15);
            prev = now;
        }
    }

    #[test]
    fn symmetric_under_swap() {
        let mut rng = ChaCha8Rng::seed_from_u64(103);
        let pts: Vec<Point3> = (0..6).map(|_| Point3::new(rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0), 0.0)).collect();
        let noisy: Vec<Point3> = pts.iter().map(|p| p + Point3::new(rng.random_range(-0.2..0.2), 0.0, 0.0)).collect();
        let desc: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64]).collect();
        let q = graph(pts, desc.clone());
        let c = graph(noisy, desc);
        let inl = corr(&(0..6).map(|i| (i, i)).collect::<Vec<_>>());
        let swapped = corr(&(0..6).map(|i| (i, i)).collect::<Vec<_>>());
        assert_eq!(pair_consistency(&q, &c, &inl, 1.0), pair_consistency(&c, &q, &swapped, 1.0));
    }
}
