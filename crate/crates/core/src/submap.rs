//! Fusing consecutive labeled scans into a voxelized semantic submap.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::geometry::{check_finite, relative, Point3, Pose};

pub const DEFAULT_VOXEL_SIZE: f64 = 0.10;
pub const DEFAULT_MAX_SPAN: f64 = 20.0;

const PROB_SUM_TOL: f64 = 1e-4;

/// One segmented LiDAR scan. `class_probs` is row-major `N × num_classes`.
#[derive(Debug, Clone)]
pub struct LabeledScan {
    pub points: Vec<Point3>,
    pub class_probs: Vec<f64>,
    pub num_classes: usize,
    pub timestamp: f64,
    /// Sensor to world.
    pub pose: Pose,
}

impl LabeledScan {
    pub fn new(
        points: Vec<Point3>,
        class_probs: Vec<f64>,
        num_classes: usize,
        timestamp: f64,
        pose: Pose,
    ) -> Result<Self> {
        if num_classes == 0 {
            return Err(Error::InvalidInput("scan needs at least one class".into()));
        }
        if class_probs.len() != points.len() * num_classes {
            return Err(Error::Mismatch { expected: points.len() * num_classes, found: class_probs.len() });
        }
        check_finite(&points)?;
        for (i, row) in class_probs.chunks(num_classes).enumerate() {
            let sum: f64 = row.iter().sum();
            if !sum.is_finite() || (sum - 1.0).abs() > PROB_SUM_TOL || row.iter().any(|&p| p < 0.0) {
                return Err(Error::InvalidInput(format!("probability row {i} sums to {sum}")));
            }
        }
        Ok(Self { points, class_probs, num_classes, timestamp, pose })
    }

    /// Builds one-hot probability rows from hard labels.
    pub fn from_labels(
        points: Vec<Point3>,
        labels: &[u16],
        num_classes: usize,
        timestamp: f64,
        pose: Pose,
    ) -> Result<Self> {
        if labels.len() != points.len() {
            return Err(Error::Mismatch { expected: points.len(), found: labels.len() });
        }
        let mut probs = vec![0.0; points.len() * num_classes];
        for (i, &l) in labels.iter().enumerate() {
            let l = l as usize;
            if l >= num_classes {
                return Err(Error::InvalidInput(format!("label {l} outside {num_classes} classes")));
            }
            probs[i * num_classes + l] = 1.0;
        }
        Self::new(points, probs, num_classes, timestamp, pose)
    }
}

pub type VoxelKey = [i64; 3];

#[derive(Debug, Clone, PartialEq)]
pub struct VoxelCell {
    pub probs: Vec<f64>,
    pub count: u32,
    pub centroid: Point3,
}

impl VoxelCell {
    /// Class with the highest mean probability; ties go to the lower id.
    pub fn class_id(&self) -> u16 {
        let mut best = 0;
        for (c, &p) in self.probs.iter().enumerate() {
            if p > self.probs[best] {
                best = c;
            }
        }
        best as u16
    }
}

/// Cells keyed by `floor(coordinate / voxel_size)`, iterated in key order.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticVoxelGrid {
    pub voxel_size: f64,
    pub num_classes: usize,
    pub cells: BTreeMap<VoxelKey, VoxelCell>,
}

impl SemanticVoxelGrid {
    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }
}

pub fn voxel_key(p: &Point3, voxel_size: f64) -> VoxelKey {
    [
        (p.x / voxel_size).floor() as i64,
        (p.y / voxel_size).floor() as i64,
        (p.z / voxel_size).floor() as i64,
    ]
}

fn member_order(a: (&Point3, &[f64]), b: (&Point3, &[f64])) -> Ordering {
    a.0.iter()
        .zip(b.0.iter())
        .chain(a.1.iter().zip(b.1.iter()))
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

/// Bins points into voxels, averaging class probabilities and positions.
///
/// Members of a cell are summed in a canonical order before dividing, so the
/// result does not depend on the input point order at all.
pub fn voxelize(
    points: &[Point3],
    class_probs: &[f64],
    num_classes: usize,
    voxel_size: f64,
) -> Result<SemanticVoxelGrid> {
    if !(voxel_size > 0.0) || !voxel_size.is_finite() {
        return Err(Error::InvalidInput(format!("voxel size must be positive, got {voxel_size}")));
    }
    if num_classes == 0 || class_probs.len() != points.len() * num_classes {
        return Err(Error::Mismatch { expected: points.len() * num_classes, found: class_probs.len() });
    }
    check_finite(points)?;

    let mut members: BTreeMap<VoxelKey, Vec<usize>> = BTreeMap::new();
    for (i, p) in points.iter().enumerate() {
        members.entry(voxel_key(p, voxel_size)).or_default().push(i);
    }
    let row = |i: usize| &class_probs[i * num_classes..(i + 1) * num_classes];

    let cells = members
        .into_iter()
        .map(|(key, mut idx)| {
            idx.sort_by(|&a, &b| member_order((&points[a], row(a)), (&points[b], row(b))));
            let n = idx.len() as f64;
            let mut probs = vec![0.0; num_classes];
            let mut centroid = Point3::zeros();
            for &i in &idx {
                centroid += points[i];
                for (acc, p) in probs.iter_mut().zip(row(i)) {
                    *acc += p;
                }
            }
            probs.iter_mut().for_each(|p| *p /= n);
            let cell = VoxelCell { probs, count: idx.len() as u32, centroid: centroid / n };
            (key, cell)
        })
        .collect();

    Ok(SemanticVoxelGrid { voxel_size, num_classes, cells })
}

#[derive(Debug, Clone)]
pub struct Submap {
    pub id: u64,
    /// World pose of the middle scan; grid coordinates live in this frame.
    pub origin: Pose,
    pub timestamp: f64,
    pub grid: SemanticVoxelGrid,
}

/// Number of leading scans whose translation stays within `max_span` of the
/// first scan (inclusive). Always at least one for a non-empty slice.
pub fn span_length(scans: &[LabeledScan], max_span: f64) -> usize {
    let Some(first) = scans.first() else { return 0 };
    let start = first.pose.translation();
    1 + scans[1..]
        .iter()
        .take_while(|s| (s.pose.translation() - start).norm() <= max_span)
        .count()
}

/// Points and probability rows of several scans expressed in the middle
/// scan's frame.
#[derive(Debug, Clone)]
pub struct FusedCloud {
    pub origin: Pose,
    pub timestamp: f64,
    pub points: Vec<Point3>,
    pub class_probs: Vec<f64>,
    pub num_classes: usize,
}

pub fn fuse(scans: &[LabeledScan]) -> Result<FusedCloud> {
    let Some(first) = scans.first() else {
        return Err(Error::InvalidInput("no scans to fuse".into()));
    };
    let num_classes = first.num_classes;
    if let Some(bad) = scans.iter().find(|s| s.num_classes != num_classes) {
        return Err(Error::Mismatch { expected: num_classes, found: bad.num_classes });
    }
    if scans.windows(2).any(|w| w[1].timestamp <= w[0].timestamp) {
        return Err(Error::InvalidInput("scan timestamps must be strictly increasing".into()));
    }
    let middle = &scans[(scans.len() - 1) / 2];
    let total: usize = scans.iter().map(|s| s.points.len()).sum();
    let mut points = Vec::with_capacity(total);
    let mut class_probs = Vec::with_capacity(total * num_classes);
    for scan in scans {
        let to_middle = relative(&middle.pose, &scan.pose);
        points.extend(scan.points.iter().map(|p| to_middle.transform_point(p)));
        class_probs.extend_from_slice(&scan.class_probs);
    }
    Ok(FusedCloud { origin: middle.pose, timestamp: middle.timestamp, points, class_probs, num_classes })
}

/// Builds one submap from the leading scans of `scans` that fit in
/// `max_span`. Returns the submap and how many scans it consumed.
pub fn accumulate(
    id: u64,
    scans: &[LabeledScan],
    max_span: f64,
    voxel_size: f64,
) -> Result<(Submap, usize)> {
    if scans.is_empty() {
        return Err(Error::InvalidInput("cannot build a submap from zero scans".into()));
    }
    let used = span_length(scans, max_span);
    let fused = fuse(&scans[..used])?;
    let grid = voxelize(&fused.points, &fused.class_probs, fused.num_classes, voxel_size)?;
    Ok((Submap { id, origin: fused.origin, timestamp: fused.timestamp, grid }, used))
}

/// Splits a whole scan sequence into consecutive submaps.
pub fn build_sequence(scans: &[LabeledScan], max_span: f64, voxel_size: f64) -> Result<Vec<Submap>> {
    let mut out = Vec::new();
    let mut start = 0;
    while start < scans.len() {
        let (submap, used) = accumulate(out.len() as u64, &scans[start..], max_span, voxel_size)?;
        out.push(submap);
        start += used;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scan_at(x: f64, t: f64, pts: Vec<Point3>) -> LabeledScan {
        let labels = vec![1u16; pts.len()];
        LabeledScan::from_labels(pts, &labels, 3, t, Pose::from_translation(Vector3::new(x, 0.0, 0.0))).unwrap()
    }

    #[test]
    fn single_scan_submap() {
        let pts = vec![Point3::new(0.01, 0.02, 0.03), Point3::new(1.05, 2.0, 0.5)];
        let scan = scan_at(0.0, 0.0, pts.clone());
        let fused = fuse(std::slice::from_ref(&scan)).unwrap();
        assert_eq!(fused.points, pts);
        let (submap, used) = accumulate(0, &[scan.clone()], 20.0, 0.1).unwrap();
        assert_eq!(used, 1);
        assert_eq!(submap.origin, scan.pose);
        assert_eq!(submap.grid.len(), 2);
    }

    #[test]
    fn span_rule_includes_boundary() {
        // Poses every 5 m: scans 1..=5 span exactly 20 m.
        let scans: Vec<_> = (0..6).map(|i| scan_at(5.0 * i as f64, i as f64, vec![Point3::zeros()])).collect();
        assert_eq!(span_length(&scans, 20.0), 5);
        let (submap, used) = accumulate(0, &scans, 20.0, 0.1).unwrap();
        assert_eq!(used, 5);
        assert_eq!(submap.origin, scans[2].pose);
        assert_eq!(submap.timestamp, 2.0);
        assert_eq!(span_length(&scans, 0.0), 1);
    }

    #[test]
    fn even_count_uses_lower_middle() {
        let scans: Vec<_> = (0..4).map(|i| scan_at(i as f64, i as f64, vec![Point3::zeros()])).collect();
        let fused = fuse(&scans).unwrap();
        assert_eq!(fused.origin, scans[1].pose);
    }

    #[test]
    fn fused_points_match_manual_transform() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let a = Pose::random(&mut rng, 30.0, 3.0);
        let b = Pose::random(&mut rng, 30.0, 3.0);
        let pts: Vec<Point3> = (0..10).map(|_| Point3::new(rng.random(), rng.random(), rng.random())).collect();
        let mk = |pose: Pose, t: f64| LabeledScan::from_labels(pts.clone(), &[0; 10], 2, t, pose).unwrap();
        let fused = fuse(&[mk(a, 0.0), mk(b, 1.0)]).unwrap();
        // Middle of two is the first scan; the second is mapped world -> a.
        assert_eq!(fused.origin, a);
        for (i, p) in pts.iter().enumerate() {
            let by_hand = a.rotation().transpose() * (b.rotation() * p + b.translation() - a.translation());
            assert!((fused.points[10 + i] - by_hand).norm() < 1e-12);
            assert!((fused.points[i] - p).norm() < 1e-12);
        }
    }

    #[test]
    fn empty_and_unordered_scans_rejected() {
        assert!(matches!(accumulate(0, &[], 20.0, 0.1), Err(Error::InvalidInput(_))));
        let scans = vec![scan_at(0.0, 1.0, vec![]), scan_at(1.0, 1.0, vec![])];
        assert!(fuse(&scans).is_err());
    }

    #[test]
    fn bad_probability_rows_rejected() {
        let r = LabeledScan::new(vec![Point3::zeros()], vec![0.5, 0.4], 2, 0.0, Pose::identity());
        assert!(r.is_err());
    }

    #[test]
    fn single_point_cell() {
        let grid = voxelize(&[Point3::new(0.05, 0.05, 0.05)], &[0.9, 0.1], 2, 0.1).unwrap();
        let cell = grid.cells.values().next().unwrap();
        assert_eq!(cell.probs, vec![0.9, 0.1]);
        assert_eq!(cell.count, 1);
    }

    #[test]
    fn averaged_cell() {
        let pts = [Point3::new(0.01, 0.01, 0.01), Point3::new(0.09, 0.09, 0.09)];
        let grid = voxelize(&pts, &[0.2, 0.8, 0.8, 0.2], 2, 0.1).unwrap();
        assert_eq!(grid.len(), 1);
        let cell = &grid.cells[&[0, 0, 0]];
        assert!((cell.probs[0] - 0.5).abs() < 1e-15 && (cell.probs[1] - 0.5).abs() < 1e-15);
        assert!((cell.centroid - Point3::new(0.05, 0.05, 0.05)).norm() < 1e-15);
    }

    #[test]
    fn cell_count_matches_binning_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let pts: Vec<Point3> = (0..1000).map(|_| Point3::new(rng.random(), rng.random(), rng.random())).collect();
        let probs: Vec<f64> = (0..1000).flat_map(|_| [1.0, 0.0]).collect();
        let grid = voxelize(&pts, &probs, 2, 0.1).unwrap();

        // Independent binning: integer keys via truncation of positive coordinates.
        let mut seen = std::collections::HashSet::new();
        for p in &pts {
            seen.insert(((p.x * 10.0) as i32, (p.y * 10.0) as i32, (p.z * 10.0) as i32));
        }
        assert_eq!(grid.len(), seen.len());
        assert_eq!(grid.cells.values().map(|c| c.count as usize).sum::<usize>(), 1000);
    }

    #[test]
    fn rejects_bad_voxel_size_and_nan() {
        assert!(voxelize(&[Point3::zeros()], &[1.0], 1, 0.0).is_err());
        assert!(voxelize(&[Point3::new(f64::NAN, 0.0, 0.0)], &[1.0], 1, 0.1).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;
        use rand::seq::SliceRandom;
        use rand::Rng;

        fn cloud(seed: u64, n: usize) -> (Vec<Point3>, Vec<f64>) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pts = (0..n)
                .map(|_| Point3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-0.3..0.3)))
                .collect();
            let probs = (0..n)
                .flat_map(|_| {
                    let raw: [f64; 3] = [rng.random(), rng.random(), rng.random()];
                    let s: f64 = raw.iter().sum();
                    raw.map(|v| v / s)
                })
                .collect();
            (pts, probs)
        }

        proptest! {
            #[test]
            fn probability_mass_is_conserved(seed in any::<u64>(), n in 1usize..400) {
                let (pts, probs) = cloud(seed, n);
                let grid = voxelize(&pts, &probs, 3, 0.1).unwrap();
                for c in 0..3 {
                    let input: f64 = probs.iter().skip(c).step_by(3).sum();
                    let cells: f64 = grid.cells.values().map(|cell| cell.count as f64 * cell.probs[c]).sum();
                    prop_assert!((input - cells).abs() < 1e-6);
                }
                for cell in grid.cells.values() {
                    prop_assert!((cell.probs.iter().sum::<f64>() - 1.0).abs() < 1e-4);
                    prop_assert!(cell.count >= 1);
                }
            }

            #[test]
            fn permutation_invariant(seed in any::<u64>(), n in 1usize..300) {
                let (pts, probs) = cloud(seed, n);
                let mut order: Vec<usize> = (0..n).collect();
                order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0xabc));
                let pts2: Vec<Point3> = order.iter().map(|&i| pts[i]).collect();
                let probs2: Vec<f64> = order.iter().flat_map(|&i| probs[i * 3..i * 3 + 3].to_vec()).collect();
                prop_assert_eq!(voxelize(&pts, &probs, 3, 0.1).unwrap(), voxelize(&pts2, &probs2, 3, 0.1).unwrap());
            }
        }
    }
}
