//! Uniform hash grid for fixed-radius neighbor queries.

use rustc_hash::FxHashMap;

use crate::geometry::Point3;

pub(crate) type CellKey = [i64; 3];

#[inline]
pub(crate) fn cell_key(p: &Point3, cell: f64) -> CellKey {
    [(p.x / cell).floor() as i64, (p.y / cell).floor() as i64, (p.z / cell).floor() as i64]
}

/// Buckets point indices by cell. Neighbor searches visit only the cells
/// overlapping the query ball, so results equal a brute-force scan.
pub struct HashGrid<'a> {
    points: &'a [Point3],
    cell: f64,
    buckets: FxHashMap<CellKey, Vec<usize>>,
}

impl<'a> HashGrid<'a> {
    pub fn new(points: &'a [Point3], cell: f64) -> Self {
        assert!(cell > 0.0, "cell size must be positive");
        let mut buckets: FxHashMap<CellKey, Vec<usize>> = FxHashMap::default();
        for (i, p) in points.iter().enumerate() {
            buckets.entry(cell_key(p, cell)).or_default().push(i);
        }
        Self { points, cell, buckets }
    }

    pub fn points(&self) -> &[Point3] {
        self.points
    }

    fn for_each_candidate(&self, p: &Point3, radius: f64, mut f: impl FnMut(usize)) {
        let reach = (radius / self.cell).ceil() as i64;
        let [cx, cy, cz] = cell_key(p, self.cell);
        for dx in -reach..=reach {
            for dy in -reach..=reach {
                for dz in -reach..=reach {
                    if let Some(bucket) = self.buckets.get(&[cx + dx, cy + dy, cz + dz]) {
                        bucket.iter().for_each(|&i| f(i));
                    }
                }
            }
        }
    }

    /// Indices of all points with `‖q − p‖ ≤ radius`, ascending.
    pub fn within(&self, p: &Point3, radius: f64) -> Vec<usize> {
        let mut out = self.within_unordered(p, radius);
        out.sort_unstable();
        out
    }

    /// Same set as [`HashGrid::within`] in no particular order.
    pub fn within_unordered(&self, p: &Point3, radius: f64) -> Vec<usize> {
        let r2 = radius * radius;
        let mut out = Vec::new();
        self.for_each_candidate(p, radius, |i| {
            if (self.points[i] - p).norm_squared() <= r2 {
                out.push(i);
            }
        });
        out
    }

    /// Closest point within `radius` as `(index, squared distance)`; ties go
    /// to the lower index.
    ///
    /// Cells are visited in rings of growing Chebyshev distance. Every point
    /// beyond ring `r` is farther than `r` cells away, so the search stops
    /// as soon as the best hit is within that bound.
    pub fn nearest_within(&self, p: &Point3, radius: f64) -> Option<(usize, f64)> {
        let r2 = radius * radius;
        let reach = (radius / self.cell).ceil() as i64;
        let [cx, cy, cz] = cell_key(p, self.cell);
        let mut best: Option<(usize, f64)> = None;
        for ring in 0..=reach {
            for dx in -ring..=ring {
                for dy in -ring..=ring {
                    let on_shell = dx.abs() == ring || dy.abs() == ring;
                    let dz_step = if on_shell { 1 } else { (2 * ring).max(1) as usize };
                    for dz in (-ring..=ring).step_by(dz_step) {
                        let Some(bucket) = self.buckets.get(&[cx + dx, cy + dy, cz + dz]) else { continue };
                        for &i in bucket {
                            let d2 = (self.points[i] - p).norm_squared();
                            if d2 <= r2 {
                                match best {
                                    Some((bi, bd)) if bd < d2 || (bd == d2 && bi < i) => {}
                                    _ => best = Some((i, d2)),
                                }
                            }
                        }
                    }
                }
            }
            let bound = ring as f64 * self.cell;
            if best.is_some_and(|(_, d2)| d2 <= bound * bound) {
                break;
            }
        }
        best
    }
}
