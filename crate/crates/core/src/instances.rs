//! Object instances: per-class DBSCAN over voxel centroids, keypoints, and
//! fixed-size point samples.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use crate::error::{Error, Result};
use crate::geometry::Point3;
use rustc_hash::FxHashMap;

use crate::spatial::cell_key;
use crate::submap::SemanticVoxelGrid;

/// Number of points every instance is sampled to.
pub const DEFAULT_SAMPLE_SIZE: usize = 1024;

/// Class ids (SemanticKITTI learning indices) that never form objects:
/// unlabeled/outlier/other-object (0), road (9), sidewalk (11),
/// other-ground (12) and terrain (17).
pub const DEFAULT_EXCLUDED_CLASSES: [u16; 5] = [0, 9, 11, 12, 17];

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterParams {
    /// Neighborhood radius in meters.
    pub eps: f64,
    /// Minimum number of voxels in a kept instance.
    pub min_pts: usize,
    /// Neighbors (self included) a voxel needs within `eps` to be a core voxel.
    pub core_neighbors: usize,
    pub excluded_classes: BTreeSet<u16>,
}

impl Default for ClusterParams {
    fn default() -> Self {
        Self {
            eps: 0.2,
            min_pts: 100,
            core_neighbors: 5,
            excluded_classes: DEFAULT_EXCLUDED_CLASSES.into_iter().collect(),
        }
    }
}

impl ClusterParams {
    /// Values used on most KITTI sequences in the original evaluation.
    pub fn kitti() -> Self {
        Self { eps: 0.05, min_pts: 800, ..Self::default() }
    }

    /// Looser values for vegetation-heavy scenes.
    pub fn kitti_vegetation() -> Self {
        Self { eps: 0.1, min_pts: 300, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0) || !self.eps.is_finite() {
            return Err(Error::Config(format!("cluster eps must be positive, got {}", self.eps)));
        }
        if self.min_pts == 0 || self.core_neighbors == 0 {
            return Err(Error::Config("cluster min_pts and core_neighbors must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectInstance {
    pub class_id: u16,
    /// Voxel centroids belonging to the object.
    pub cells: Vec<Point3>,
    /// Keypoint: mean of `cells`.
    pub centroid: Point3,
    pub sampled: Vec<Point3>,
}

impl ObjectInstance {
    pub fn new(class_id: u16, cells: Vec<Point3>, sample_size: usize) -> Result<Self> {
        let sampled = sample_fixed(&cells, sample_size)?;
        let centroid = mean(&cells);
        Ok(Self { class_id, cells, centroid, sampled })
    }
}

pub(crate) fn mean(points: &[Point3]) -> Point3 {
    points.iter().sum::<Point3>() / points.len().max(1) as f64
}

/// All `eps`-neighbors of every point (self included), in no fixed order,
/// stored back to back. Candidates are gathered once per occupied cell.
struct Neighbors {
    ranges: Vec<(u32, u32)>,
    flat: Vec<u32>,
}

impl Neighbors {
    fn build(points: &[Point3], eps: f64) -> Self {
        let mut cells: FxHashMap<[i64; 3], Vec<u32>> = FxHashMap::default();
        for (i, p) in points.iter().enumerate() {
            cells.entry(cell_key(p, eps)).or_default().push(i as u32);
        }
        let eps2 = eps * eps;
        let mut ranges = vec![(0, 0); points.len()];
        let mut flat = Vec::new();
        let mut candidates = Vec::new();
        for (key, members) in &cells {
            candidates.clear();
            for dx in -1..=1 {
                for dy in -1..=1 {
                    for dz in -1..=1 {
                        if let Some(m) = cells.get(&[key[0] + dx, key[1] + dy, key[2] + dz]) {
                            candidates.extend_from_slice(m);
                        }
                    }
                }
            }
            for &i in members {
                let p = points[i as usize];
                let start = flat.len() as u32;
                flat.extend(candidates.iter().copied().filter(|&j| (points[j as usize] - p).norm_squared() <= eps2));
                ranges[i as usize] = (start, flat.len() as u32);
            }
        }
        Self { ranges, flat }
    }

    fn of(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        let (a, b) = self.ranges[i];
        self.flat[a as usize..b as usize].iter().map(|&j| j as usize)
    }

    fn count(&self, i: usize) -> usize {
        let (a, b) = self.ranges[i];
        (b - a) as usize
    }
}

/// DBSCAN labels for `points`; `None` marks noise.
///
/// Core voxels are grouped into connected components, numbered in order of
/// their lowest index. A border voxel takes the label of its lowest-index
/// core neighbor, which makes the result independent of visiting order.
pub fn dbscan(points: &[Point3], eps: f64, core_neighbors: usize) -> Vec<Option<usize>> {
    let neighbors = Neighbors::build(points, eps);
    let core: Vec<bool> = (0..points.len()).map(|i| neighbors.count(i) >= core_neighbors).collect();

    let mut labels = vec![None; points.len()];
    let mut next = 0;
    let mut queue = VecDeque::new();
    for start in 0..points.len() {
        if !core[start] || labels[start].is_some() {
            continue;
        }
        labels[start] = Some(next);
        queue.push_back(start);
        while let Some(i) = queue.pop_front() {
            for j in neighbors.of(i) {
                if core[j] && labels[j].is_none() {
                    labels[j] = Some(next);
                    queue.push_back(j);
                }
            }
        }
        next += 1;
    }
    for i in 0..points.len() {
        if !core[i] {
            labels[i] = neighbors.of(i).filter(|&j| core[j]).min().and_then(|j| labels[j]);
        }
    }
    labels
}

/// Splits a voxel grid into object instances.
///
/// Each cell takes the argmax class of its mean probabilities. Cells of
/// excluded classes are dropped; the rest are clustered per class and
/// clusters smaller than `min_pts` are discarded. Instances come out ordered
/// by class id, then by cluster label.
pub fn cluster(grid: &SemanticVoxelGrid, params: &ClusterParams, sample_size: usize) -> Result<Vec<ObjectInstance>> {
    params.validate()?;
    let mut by_class: BTreeMap<u16, Vec<Point3>> = BTreeMap::new();
    for cell in grid.cells.values() {
        let class = cell.class_id();
        if !params.excluded_classes.contains(&class) {
            by_class.entry(class).or_default().push(cell.centroid);
        }
    }

    let mut out = Vec::new();
    for (class_id, points) in by_class {
        let labels = dbscan(&points, params.eps, params.core_neighbors);
        let n_clusters = labels.iter().flatten().max().map_or(0, |m| m + 1);
        let mut groups = vec![Vec::new(); n_clusters];
        for (p, label) in points.iter().zip(&labels) {
            if let Some(l) = label {
                groups[*l].push(*p);
            }
        }
        for cells in groups.into_iter().filter(|g| g.len() >= params.min_pts) {
            out.push(ObjectInstance::new(class_id, cells, sample_size)?);
        }
    }
    Ok(out)
}

fn argmax_by(values: impl Iterator<Item = f64>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in values.enumerate() {
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| i)
}

/// Draws exactly `size` points from an object.
///
/// With at least `size` points this is farthest-point sampling. Distances are
/// initialised from the point nearest the centroid, which itself remains
/// selectable. With fewer points, all of them are kept and the remainder is
/// filled with points ranked by distance from the centroid (farthest first),
/// cycling through the ranking if needed.
pub fn sample_fixed(points: &[Point3], size: usize) -> Result<Vec<Point3>> {
    if points.is_empty() {
        return Err(Error::InvalidInput("cannot sample an empty instance".into()));
    }
    if size == 0 {
        return Err(Error::InvalidInput("sample size must be at least 1".into()));
    }
    let centroid = mean(points);

    if points.len() < size {
        let mut ranked: Vec<usize> = (0..points.len()).collect();
        let dist: Vec<f64> = points.iter().map(|p| (p - centroid).norm_squared()).collect();
        ranked.sort_by(|&a, &b| dist[b].total_cmp(&dist[a]).then(a.cmp(&b)));
        let mut out = points.to_vec();
        out.extend(ranked.iter().cycle().take(size - points.len()).map(|&i| points[i]));
        return Ok(out);
    }

    let seed = argmax_by(points.iter().map(|p| -(p - centroid).norm_squared())).expect("non-empty");
    Ok(farthest_points(points, seed, size))
}

/// Points of one spatial cell, with their bounding box and the largest
/// current distance-to-sample among them.
struct Block {
    members: Vec<usize>,
    lo: Point3,
    hi: Point3,
    best: (usize, f64),
}

impl Block {
    fn rescan(&mut self, min_d2: &[f64]) {
        self.best = (usize::MAX, f64::NEG_INFINITY);
        for &i in &self.members {
            if min_d2[i] > self.best.1 {
                self.best = (i, min_d2[i]);
            }
        }
    }

    fn box_distance2(&self, p: &Point3) -> f64 {
        let gap = (self.lo - p).sup(&(p - self.hi)).sup(&Point3::zeros());
        gap.norm_squared()
    }
}

/// Farthest-point sampling from `seed` (which only initialises distances).
///
/// Points are grouped into spatial blocks. A block whose bounding box is
/// farther from the new sample than its own largest distance cannot change
/// and is skipped, which gives the exact greedy sequence at a fraction of
/// the cost. Ties go to the lowest index.
fn farthest_points(points: &[Point3], seed: usize, size: usize) -> Vec<Point3> {
    let mut lo = points[0];
    let mut hi = points[0];
    for p in points {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    let extent = (hi - lo).max().max(1e-9);
    // About 16 blocks per axis of the largest extent.
    let cell = extent / 16.0;
    let mut by_cell: BTreeMap<[i64; 3], Vec<usize>> = BTreeMap::new();
    for (i, p) in points.iter().enumerate() {
        by_cell.entry(cell_key(&(p - lo), cell)).or_default().push(i);
    }

    let mut min_d2: Vec<f64> = points.iter().map(|p| (p - points[seed]).norm_squared()).collect();
    let mut blocks: Vec<Block> = by_cell
        .into_values()
        .map(|members| {
            let mut b = Block { lo: points[members[0]], hi: points[members[0]], members, best: (0, 0.0) };
            for &i in &b.members {
                b.lo = b.lo.inf(&points[i]);
                b.hi = b.hi.sup(&points[i]);
            }
            b.rescan(&min_d2);
            b
        })
        .collect();

    let mut block_of = vec![0; points.len()];
    for (k, b) in blocks.iter().enumerate() {
        b.members.iter().for_each(|&i| block_of[i] = k);
    }

    let mut out = Vec::with_capacity(size);
    for _ in 0..size {
        let mut next = (usize::MAX, f64::NEG_INFINITY);
        for b in &blocks {
            if b.best.1 > next.1 || (b.best.1 == next.1 && b.best.0 < next.0) {
                next = b.best;
            }
        }
        let chosen = points[next.0];
        out.push(chosen);
        // Taken points sit at -1 so they lose every later argmax.
        min_d2[next.0] = -1.0;
        for (k, b) in blocks.iter_mut().enumerate() {
            let touched = k == block_of[next.0];
            // Relative slack keeps the skip exact under rounding.
            if !touched && b.box_distance2(&chosen) > b.best.1 * (1.0 + 1e-9) + 1e-300 {
                continue;
            }
            for &i in &b.members {
                let d = (points[i] - chosen).norm_squared();
                if d < min_d2[i] {
                    min_d2[i] = d;
                }
            }
            b.rescan(&min_d2);
        }
    }
    out
}
