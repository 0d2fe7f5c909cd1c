//! Coarse-to-fine alignment of two submaps.
//!
//! Objects are matched by mutual nearest descriptors, RANSAC aligns the
//! matched object centroids, and point-to-point ICP refines the result on
//! the voxels of the RANSAC inlier objects only. All transforms map
//! candidate coordinates into the query frame.

use nalgebra::{DMatrix, Matrix3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{nearest_rotation, rotation_error_deg, translation_error_m, Point3, Pose};
use crate::spatial::HashGrid;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    pub query_node: usize,
    pub candidate_node: usize,
    pub descriptor_distance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Coarse,
    Refined,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransformEstimate {
    pub transform: Pose,
    pub inliers: Vec<Correspondence>,
    pub rmse: f64,
    pub stage: Stage,
    /// Set when refinement could not run and the coarse transform was kept.
    pub degraded: bool,
}

fn row_distance2(a: &DMatrix<f64>, i: usize, b: &DMatrix<f64>, j: usize) -> f64 {
    a.row(i).iter().zip(b.row(j).iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest_row(from: &DMatrix<f64>, i: usize, to: &DMatrix<f64>) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for j in 0..to.nrows() {
        let d = row_distance2(from, i, to, j);
        if best.is_none_or(|(_, bd)| d < bd) {
            best = Some((j, d));
        }
    }
    best
}

/// Mutual nearest neighbours between two sets of node features (one row per
/// node). Ties resolve to the lower index. Output is ordered by query node.
pub fn match_features(query: &DMatrix<f64>, candidate: &DMatrix<f64>) -> Vec<Correspondence> {
    if query.ncols() != candidate.ncols() {
        return Vec::new();
    }
    let back: Vec<Option<usize>> = (0..candidate.nrows()).map(|j| nearest_row(candidate, j, query).map(|(i, _)| i)).collect();
    (0..query.nrows())
        .filter_map(|i| {
            let (j, d2) = nearest_row(query, i, candidate)?;
            (back[j] == Some(i)).then(|| Correspondence { query_node: i, candidate_node: j, descriptor_distance: d2.sqrt() })
        })
        .collect()
}

/// Least-squares rigid transform `T` minimising `Σ ‖dst_i − T src_i‖²`
/// (centroid subtraction, SVD of the cross-covariance, reflection fix).
pub fn rigid_fit(src: &[Point3], dst: &[Point3]) -> Option<Pose> {
    if src.len() != dst.len() || src.is_empty() {
        return None;
    }
    let n = src.len() as f64;
    let cs = src.iter().sum::<Point3>() / n;
    let cd = dst.iter().sum::<Point3>() / n;
    let mut h = Matrix3::zeros();
    for (s, d) in src.iter().zip(dst) {
        h += (d - cd) * (s - cs).transpose();
    }
    let r = nearest_rotation(&h);
    if !r.iter().all(|v| v.is_finite()) {
        return None;
    }
    let t = cd - r * cs;
    Pose::new(r, t).ok()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RansacParams {
    /// Maximum centroid residual of an inlier, meters.
    pub inlier_tol: f64,
    pub max_iters: usize,
    pub confidence: f64,
    pub seed: u64,
}

impl Default for RansacParams {
    fn default() -> Self {
        Self { inlier_tol: 0.5, max_iters: 10_000, confidence: 0.999, seed: 0 }
    }
}

const DEGENERATE_AREA: f64 = 1e-9;

fn collinear(a: &Point3, b: &Point3, c: &Point3) -> bool {
    (b - a).cross(&(c - a)).norm() < DEGENERATE_AREA
}

fn required_iterations(inlier_ratio: f64, confidence: f64, cap: usize) -> usize {
    let good = inlier_ratio.powi(3);
    if good >= 1.0 {
        return 0;
    }
    if good <= 0.0 {
        return cap;
    }
    let n = (1.0 - confidence).ln() / (1.0 - good).ln();
    if n.is_finite() { (n.ceil() as usize).min(cap) } else { cap }
}

fn residual(pose: &Pose, query: &[Point3], candidate: &[Point3], c: &Correspondence) -> f64 {
    (query[c.query_node] - pose.transform_point(&candidate[c.candidate_node])).norm()
}

fn inliers_of(pose: &Pose, query: &[Point3], candidate: &[Point3], corr: &[Correspondence], tol: f64) -> Vec<usize> {
    (0..corr.len()).filter(|&k| residual(pose, query, candidate, &corr[k]) <= tol).collect()
}

fn fit_subset(query: &[Point3], candidate: &[Point3], corr: &[Correspondence], idx: &[usize]) -> Option<Pose> {
    let src: Vec<Point3> = idx.iter().map(|&k| candidate[corr[k].candidate_node]).collect();
    let dst: Vec<Point3> = idx.iter().map(|&k| query[corr[k].query_node]).collect();
    rigid_fit(&src, &dst)
}

fn rmse_of(pose: &Pose, query: &[Point3], candidate: &[Point3], corr: &[Correspondence], idx: &[usize]) -> f64 {
    if idx.is_empty() {
        return 0.0;
    }
    let s: f64 = idx.iter().map(|&k| residual(pose, query, candidate, &corr[k]).powi(2)).sum();
    (s / idx.len() as f64).sqrt()
}

/// Robust rigid alignment of corresponding keypoints.
///
/// Minimal samples of three non-collinear correspondences whose pairwise
/// distances agree within `2 inlier_tol` are fit in closed form and scored
/// by inlier count; the first hypothesis with the highest
/// count wins. The winner is re-fit on its inliers, and the returned inlier
/// set is recomputed under the returned transform so every inlier residual is
/// within `inlier_tol`. The iteration budget shrinks adaptively to reach the
/// requested confidence.
pub fn ransac_align(
    query: &[Point3],
    candidate: &[Point3],
    corr: &[Correspondence],
    params: &RansacParams,
) -> Result<TransformEstimate> {
    if corr.len() < 3 {
        return Err(Error::InsufficientData { needed: 3, got: corr.len() });
    }
    if corr.iter().any(|c| c.query_node >= query.len() || c.candidate_node >= candidate.len()) {
        return Err(Error::InvalidInput("correspondence index out of range".into()));
    }
    let n = corr.len();
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut best: Option<(Pose, Vec<usize>)> = None;
    let mut budget = params.max_iters;
    let mut iter = 0;
    while iter < budget {
        iter += 1;
        let a = rng.random_range(0..n);
        let mut b = rng.random_range(0..n - 1);
        if b >= a {
            b += 1;
        }
        let mut c = rng.random_range(0..n - 2);
        for lo in [a.min(b), a.max(b)] {
            if c >= lo {
                c += 1;
            }
        }
        let sample = [a, b, c];
        let cand = |k: usize| &candidate[corr[k].candidate_node];
        let quer = |k: usize| &query[corr[k].query_node];
        if collinear(cand(a), cand(b), cand(c)) || collinear(quer(a), quer(b), quer(c)) {
            continue;
        }
        // Three mutual inliers keep their pairwise distances within 2 tol.
        let stretched = |i: usize, j: usize| ((quer(i) - quer(j)).norm() - (cand(i) - cand(j)).norm()).abs() > 2.0 * params.inlier_tol;
        if stretched(a, b) || stretched(a, c) || stretched(b, c) {
            continue;
        }
        let Some(pose) = fit_subset(query, candidate, corr, &sample) else { continue };
        let inl = inliers_of(&pose, query, candidate, corr, params.inlier_tol);
        if best.as_ref().is_none_or(|(_, b)| inl.len() > b.len()) {
            budget = required_iterations(inl.len() as f64 / n as f64, params.confidence, params.max_iters);
            best = Some((pose, inl));
        }
    }

    let Some((hypothesis, hyp_inliers)) = best else {
        return Err(Error::InsufficientData { needed: 3, got: 0 });
    };
    if hyp_inliers.len() < 3 {
        return Err(Error::InsufficientData { needed: 3, got: hyp_inliers.len() });
    }

    let mut pose = hypothesis;
    let mut set = hyp_inliers.clone();
    for _ in 0..10 {
        let Some(refit) = fit_subset(query, candidate, corr, &set) else { break };
        let next = inliers_of(&refit, query, candidate, corr, params.inlier_tol);
        if next.len() < 3 {
            break;
        }
        let stable = next == set;
        pose = refit;
        set = next;
        if stable {
            break;
        }
    }
    let mut final_set = inliers_of(&pose, query, candidate, corr, params.inlier_tol);
    if final_set.len() < 3 {
        pose = hypothesis;
        final_set = hyp_inliers;
    }
    Ok(TransformEstimate {
        transform: pose,
        rmse: rmse_of(&pose, query, candidate, corr, &final_set),
        inliers: final_set.iter().map(|&k| corr[k]).collect(),
        stage: Stage::Coarse,
        degraded: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IcpParams {
    /// Association cap, meters.
    pub max_correspondence: f64,
    pub max_iters: usize,
    /// Stop when an update moves the transform by less than this (meters).
    pub tolerance: f64,
}

impl Default for IcpParams {
    fn default() -> Self {
        Self { max_correspondence: 1.0, max_iters: 50, tolerance: 1e-4 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IcpTrace {
    /// RMSE of each association step, before its re-fit.
    pub association_rmse: Vec<f64>,
}

/// Point-to-point ICP from a coarse estimate; see [`icp_refine_traced`].
pub fn icp_refine(
    coarse: &TransformEstimate,
    query_points: &[Point3],
    candidate_points: &[Point3],
    params: &IcpParams,
) -> TransformEstimate {
    icp_refine_traced(coarse, query_points, candidate_points, params).0
}

/// Alternates nearest-neighbour association (within the cap) and closed-form
/// re-fitting until the update is below tolerance or the iteration budget is
/// spent. Without any association the coarse transform is returned, flagged
/// as degraded.
pub fn icp_refine_traced(
    coarse: &TransformEstimate,
    query_points: &[Point3],
    candidate_points: &[Point3],
    params: &IcpParams,
) -> (TransformEstimate, IcpTrace) {
    let mut trace = IcpTrace { association_rmse: Vec::new() };
    let degraded = || TransformEstimate { stage: Stage::Coarse, degraded: true, ..coarse.clone() };
    if query_points.is_empty() || candidate_points.is_empty() {
        return (degraded(), trace);
    }
    // Small cells keep ring searches short on dense surfaces.
    let grid = HashGrid::new(query_points, (0.25 * params.max_correspondence).max(1e-3));
    let mut pose = coarse.transform;
    let mut rmse = f64::NAN;

    for _ in 0..params.max_iters.max(1) {
        let mut src = Vec::new();
        let mut dst = Vec::new();
        let mut sq = 0.0;
        for p in candidate_points {
            let moved = pose.transform_point(p);
            if let Some((j, d2)) = grid.nearest_within(&moved, params.max_correspondence) {
                src.push(*p);
                dst.push(query_points[j]);
                sq += d2;
            }
        }
        if src.len() < 3 {
            if trace.association_rmse.is_empty() {
                return (degraded(), trace);
            }
            break;
        }
        trace.association_rmse.push((sq / src.len() as f64).sqrt());
        let Some(next) = rigid_fit(&src, &dst) else { break };
        rmse = (src.iter().zip(&dst).map(|(s, d)| (d - next.transform_point(s)).norm_squared()).sum::<f64>()
            / src.len() as f64)
            .sqrt();
        let step = translation_error_m(&next, &pose).max(rotation_error_deg(&next, &pose).to_radians());
        pose = next;
        if step < params.tolerance {
            break;
        }
    }

    let estimate = TransformEstimate {
        transform: pose,
        inliers: coarse.inliers.clone(),
        rmse,
        stage: Stage::Refined,
        degraded: false,
    };
    (estimate, trace)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RegistrationEval {
    pub rre_deg: f64,
    pub rte_m: f64,
    pub success: bool,
}

pub const SUCCESS_RRE_DEG: f64 = 5.0;
pub const SUCCESS_RTE_M: f64 = 2.0;

/// Errors of one estimate; success is inclusive at both thresholds.
pub fn eval_registration(est: &Pose, gt: &Pose, rre_max: f64, rte_max: f64) -> RegistrationEval {
    let rre_deg = rotation_error_deg(est, gt);
    let rte_m = translation_error_m(est, gt);
    RegistrationEval { rre_deg, rte_m, success: rre_deg <= rre_max && rte_m <= rte_max }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RegistrationReport {
    pub pairs: usize,
    pub successes: usize,
    pub accuracy: f64,
    /// Means and medians are over successful registrations only.
    pub mean_rre_deg: f64,
    pub mean_rte_m: f64,
    pub median_rre_deg: f64,
    pub median_rte_m: f64,
}

fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(f64::total_cmp);
    let m = values.len() / 2;
    if values.len() % 2 == 1 { values[m] } else { 0.5 * (values[m - 1] + values[m]) }
}

pub fn summarize_registrations(evals: &[RegistrationEval]) -> RegistrationReport {
    let ok: Vec<&RegistrationEval> = evals.iter().filter(|e| e.success).collect();
    let mut rre: Vec<f64> = ok.iter().map(|e| e.rre_deg).collect();
    let mut rte: Vec<f64> = ok.iter().map(|e| e.rte_m).collect();
    let mean = |v: &[f64]| if v.is_empty() { f64::NAN } else { v.iter().sum::<f64>() / v.len() as f64 };
    RegistrationReport {
        pairs: evals.len(),
        successes: ok.len(),
        accuracy: if evals.is_empty() { 0.0 } else { ok.len() as f64 / evals.len() as f64 },
        mean_rre_deg: mean(&rre),
        mean_rte_m: mean(&rte),
        median_rre_deg: median(&mut rre),
        median_rte_m: median(&mut rte),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;

    fn cloud(rng: &mut ChaCha8Rng, n: usize, extent: f64) -> Vec<Point3> {
        (0..n)
            .map(|_| Point3::new(rng.random_range(-extent..extent), rng.random_range(-extent..extent), rng.random_range(-extent / 4.0..extent / 4.0)))
            .collect()
    }

    fn identity_corr(n: usize) -> Vec<Correspondence> {
        (0..n).map(|i| Correspondence { query_node: i, candidate_node: i, descriptor_distance: 0.0 }).collect()
    }

    #[test]
    fn identical_features_match_identically() {
        let mut rng = ChaCha8Rng::seed_from_u64(81);
        let f = DMatrix::from_fn(12, 16, |_, _| rng.random::<f64>());
        let m = match_features(&f, &f);
        assert_eq!(m.len(), 12);
        assert!(m.iter().all(|c| c.query_node == c.candidate_node && c.descriptor_distance == 0.0));
    }

    #[test]
    fn non_mutual_pairs_excluded() {
        // q0 and q1 both prefer c0; c0 prefers q1.
        let q = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        let c = DMatrix::from_row_slice(2, 1, &[0.9, 5.0]);
        let m = match_features(&q, &c);
        assert_eq!(m.len(), 1);
        assert_eq!((m[0].query_node, m[0].candidate_node), (1, 0));
    }

    #[test]
    fn matching_is_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(82);
        let a = DMatrix::from_fn(15, 8, |_, _| rng.random::<f64>());
        let b = DMatrix::from_fn(11, 8, |_, _| rng.random::<f64>());
        let ab: Vec<(usize, usize)> = match_features(&a, &b).iter().map(|c| (c.query_node, c.candidate_node)).collect();
        let mut ba: Vec<(usize, usize)> = match_features(&b, &a).iter().map(|c| (c.candidate_node, c.query_node)).collect();
        ba.sort();
        assert_eq!(ab, ba);
    }

    #[test]
    fn noisy_descriptors_mostly_match() {
        let mut rng = ChaCha8Rng::seed_from_u64(83);
        let normal = rand_distr::Normal::new(0.0, 0.01).unwrap();
        let mut correct = 0;
        let mut total = 0;
        for _ in 0..20 {
            let mut a = DMatrix::from_fn(20, 128, |_, _| rng.random::<f64>());
            for mut row in a.row_iter_mut() {
                let n = row.norm();
                row /= n;
            }
            let b = a.map(|v| v + rng.sample(normal));
            for c in match_features(&a, &b) {
                total += 1;
                correct += (c.query_node == c.candidate_node) as usize;
            }
        }
        assert!(correct as f64 >= 0.9 * 400.0, "{correct}/{total}");
    }

    #[test]
    fn ransac_exact_fit() {
        let mut rng = ChaCha8Rng::seed_from_u64(84);
        let gt = Pose::random(&mut rng, 180.0, 30.0);
        let cand = cloud(&mut rng, 10, 20.0);
        let query = gt.transform_slice(&cand);
        let est = ransac_align(&query, &cand, &identity_corr(10), &RansacParams::default()).unwrap();
        assert!(rotation_error_deg(&est.transform, &gt) < 1e-6);
        assert!(translation_error_m(&est.transform, &gt) < 1e-9);
        assert_eq!(est.inliers.len(), 10);
    }

    #[test]
    fn ransac_rejects_outliers() {
        let mut rng = ChaCha8Rng::seed_from_u64(85);
        let gt = Pose::random(&mut rng, 180.0, 30.0);
        let cand = cloud(&mut rng, 20, 20.0);
        let mut query = gt.transform_slice(&cand);
        for q in query.iter_mut().skip(10) {
            *q = Point3::new(rng.random_range(-40.0..40.0), rng.random_range(-40.0..40.0), rng.random_range(-40.0..40.0));
        }
        let est = ransac_align(&query, &cand, &identity_corr(20), &RansacParams::default()).unwrap();
        assert!(rotation_error_deg(&est.transform, &gt) < 1e-6);
        assert!(translation_error_m(&est.transform, &gt) < 1e-6);
        let mut idx: Vec<usize> = est.inliers.iter().map(|c| c.query_node).collect();
        idx.sort();
        assert_eq!(idx, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn ransac_needs_three() {
        let p = vec![Point3::zeros(), Point3::x()];
        let r = ransac_align(&p, &p, &identity_corr(2), &RansacParams::default());
        assert!(matches!(r, Err(Error::InsufficientData { needed: 3, got: 2 })));
    }

    #[test]
    fn ransac_inliers_within_tolerance() {
        let mut rng = ChaCha8Rng::seed_from_u64(86);
        let normal = rand_distr::Normal::new(0.0, 0.2).unwrap();
        for _ in 0..20 {
            let gt = Pose::random(&mut rng, 180.0, 30.0);
            let cand = cloud(&mut rng, 25, 20.0);
            let query: Vec<Point3> = gt
                .transform_slice(&cand)
                .iter()
                .map(|p| p + Vector3::new(rng.sample(normal), rng.sample(normal), rng.sample(normal)))
                .collect();
            let params = RansacParams { seed: rng.random(), ..RansacParams::default() };
            let est = ransac_align(&query, &cand, &identity_corr(25), &params).unwrap();
            for c in &est.inliers {
                assert!(residual(&est.transform, &query, &cand, c) <= params.inlier_tol);
            }
        }
    }

    #[test]
    fn ransac_is_deterministic_per_seed() {
        let mut rng = ChaCha8Rng::seed_from_u64(87);
        let cand = cloud(&mut rng, 15, 10.0);
        let query = cloud(&mut rng, 15, 10.0);
        let p = RansacParams { max_iters: 200, ..RansacParams::default() };
        let a = ransac_align(&query, &cand, &identity_corr(15), &p);
        let b = ransac_align(&query, &cand, &identity_corr(15), &p);
        assert_eq!(format!("{a:?}"), format!("{b:?}"));
    }

    fn coarse(pose: Pose) -> TransformEstimate {
        TransformEstimate { transform: pose, inliers: vec![], rmse: 0.0, stage: Stage::Coarse, degraded: false }
    }

    #[test]
    fn icp_fixed_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(88);
        let gt = Pose::random(&mut rng, 180.0, 10.0);
        let cand = cloud(&mut rng, 400, 8.0);
        let query = gt.transform_slice(&cand);
        let out = icp_refine(&coarse(gt), &query, &cand, &IcpParams::default());
        assert_eq!(out.stage, Stage::Refined);
        assert!(rotation_error_deg(&out.transform, &gt) < 1e-7);
        assert!(translation_error_m(&out.transform, &gt) < 1e-9);
    }

    #[test]
    fn icp_converges_from_perturbation() {
        let mut rng = ChaCha8Rng::seed_from_u64(89);
        for _ in 0..5 {
            let gt = Pose::random(&mut rng, 180.0, 10.0);
            let cand = cloud(&mut rng, 500, 10.0);
            let query = gt.transform_slice(&cand);
            let axis = crate::geometry::random_unit_vector(&mut rng);
            let dir = crate::geometry::random_unit_vector(&mut rng);
            let perturb = Pose::from_axis_angle(&axis, 2f64.to_radians(), dir * 0.2);
            let start = perturb.compose(&gt);
            let out = icp_refine(&coarse(start), &query, &cand, &IcpParams::default());
            assert!(rotation_error_deg(&out.transform, &gt).to_radians() < 1e-6);
            assert!(translation_error_m(&out.transform, &gt) < 1e-6);
        }
    }

    #[test]
    fn icp_association_rmse_never_increases() {
        let mut rng = ChaCha8Rng::seed_from_u64(90);
        let normal = rand_distr::Normal::new(0.0, 0.03).unwrap();
        let gt = Pose::random(&mut rng, 180.0, 10.0);
        let cand = cloud(&mut rng, 600, 10.0);
        let query: Vec<Point3> = gt
            .transform_slice(&cand)
            .iter()
            .map(|p| p + Vector3::new(rng.sample(normal), rng.sample(normal), rng.sample(normal)))
            .collect();
        let start = Pose::from_axis_angle(&Vector3::z(), 0.03, Vector3::new(0.2, -0.1, 0.05)).compose(&gt);
        let (out, trace) = icp_refine_traced(&coarse(start), &query, &cand, &IcpParams::default());
        assert!(trace.association_rmse.len() >= 2);
        for w in trace.association_rmse.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "{:?}", trace.association_rmse);
        }
        assert!(out.rmse <= trace.association_rmse[0]);
    }

    #[test]
    fn icp_without_associations_is_degraded() {
        let cand = vec![Point3::zeros(); 5];
        let query = vec![Point3::new(100.0, 0.0, 0.0); 5];
        let c = coarse(Pose::identity());
        let out = icp_refine(&c, &query, &cand, &IcpParams::default());
        assert!(out.degraded);
        assert_eq!(out.transform, c.transform);
        assert_eq!(out.stage, Stage::Coarse);
    }

    #[test]
    fn success_thresholds_are_inclusive() {
        let gt = Pose::identity();
        let e = eval_registration(&gt, &gt, 5.0, 2.0);
        assert_eq!((e.rre_deg, e.rte_m, e.success), (0.0, 0.0, true));
        let far = Pose::from_translation(Vector3::new(2.5, 0.0, 0.0));
        assert!(!eval_registration(&far, &gt, 5.0, 2.0).success);
        let edge = Pose::from_translation(Vector3::new(2.0, 0.0, 0.0));
        assert!(eval_registration(&edge, &gt, 5.0, 2.0).success);
        let rot = Pose::from_axis_angle(&Vector3::z(), 5f64.to_radians(), Vector3::zeros());
        let e = eval_registration(&rot, &gt, 5.0, 2.0);
        assert!((e.rre_deg - 5.0).abs() < 1e-9);
        // Constructed at exactly 5°: accept at the boundary up to rounding.
        assert!(eval_registration(&rot, &gt, e.rre_deg, 2.0).success);
    }

    #[test]
    fn summary_over_successes() {
        let evals = [
            RegistrationEval { rre_deg: 1.0, rte_m: 0.1, success: true },
            RegistrationEval { rre_deg: 3.0, rte_m: 0.3, success: true },
            RegistrationEval { rre_deg: 30.0, rte_m: 9.0, success: false },
        ];
        let r = summarize_registrations(&evals);
        assert_eq!(r.successes, 2);
        assert!((r.accuracy - 2.0 / 3.0).abs() < 1e-15);
        assert!((r.mean_rre_deg - 2.0).abs() < 1e-15);
        assert!((r.mean_rte_m - 0.2).abs() < 1e-15);
    }
}
