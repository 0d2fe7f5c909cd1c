//! Rotation-invariant local object descriptors.
//!
//! [`DescriptorBackend`] is the seam where a learned point encoder plugs in.
//! [`ReferenceDescriptor`] is a deterministic hand-built backend assembled
//! only from quantities that do not change under rigid motion.

use std::sync::Arc;

use nalgebra::{Matrix3, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::Point3;
use crate::instances::mean;

pub const DESCRIPTOR_DIM: usize = 128;

const HIST_BINS: usize = 32;
const MAX_CLASSES: usize = 32;
const MAX_PAIRS: usize = 4096;
const PAIR_SEED: u64 = 0x5eed_0f_9a17;
const DEGENERATE_RADIUS: f64 = 1e-9;

// Layout of the reference descriptor.
const RADIAL_HIST: usize = 0;
const PAIR_HIST: usize = RADIAL_HIST + HIST_BINS;
const EIGEN: usize = PAIR_HIST + HIST_BINS;
const MOMENTS: usize = EIGEN + 3;
const RADIUS: usize = MOMENTS + 4;
const COUNT: usize = RADIUS + 1;
const CLASS: usize = COUNT + 1;
const _: () = assert!(CLASS + MAX_CLASSES <= DESCRIPTOR_DIM);

/// A 128-d object feature.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalDescriptor(pub Vec<f64>);

impl LocalDescriptor {
    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn distance(&self, other: &LocalDescriptor) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
    }
}

/// Maps an object's fixed-size point sample to a descriptor. Implementations
/// must be invariant to rotation and translation of the sample.
pub trait DescriptorBackend: Send + Sync {
    fn name(&self) -> &'static str;
    fn describe(&self, sample: &[Point3], class_id: u16) -> LocalDescriptor;
}

/// Looks up a backend by its configuration name.
pub fn backend_by_name(name: &str) -> Result<Arc<dyn DescriptorBackend>> {
    match name {
        ReferenceDescriptor::NAME => Ok(Arc::new(ReferenceDescriptor)),
        "learned" => Err(Error::Config("the learned descriptor backend is not available in this build".into())),
        other => Err(Error::Config(format!("unknown descriptor backend '{other}'"))),
    }
}

/// Histograms, shape moments, and class identity packed into 128 values and
/// L2-normalized.
#[derive(Debug, Clone, Copy, Default)]
pub struct ReferenceDescriptor;

impl ReferenceDescriptor {
    pub const NAME: &'static str = "reference";
}

impl DescriptorBackend for ReferenceDescriptor {
    fn name(&self) -> &'static str {
        Self::NAME
    }

    fn describe(&self, sample: &[Point3], class_id: u16) -> LocalDescriptor {
        describe_reference(sample, class_id)
    }
}

fn bin(value: f64, range: f64) -> usize {
    ((value / range * HIST_BINS as f64) as usize).min(HIST_BINS - 1)
}

/// Point pairs in rank space, fixed for a given sample size.
fn pair_indices(n: usize) -> Vec<(usize, usize)> {
    if n < 2 {
        return Vec::new();
    }
    if n * (n - 1) / 2 <= MAX_PAIRS {
        return (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(PAIR_SEED ^ n as u64);
    (0..MAX_PAIRS)
        .map(|_| {
            let a = rng.random_range(0..n);
            let b = (a + rng.random_range(1..n)) % n;
            (a, b)
        })
        .collect()
}

fn distinct_count(sample: &[Point3]) -> usize {
    let mut keys: Vec<[u64; 3]> = sample.iter().map(|p| [p.x.to_bits(), p.y.to_bits(), p.z.to_bits()]).collect();
    keys.sort_unstable();
    keys.dedup();
    keys.len()
}

fn normalize(mut v: Vec<f64>) -> LocalDescriptor {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    LocalDescriptor(v)
}

pub fn describe_reference(sample: &[Point3], class_id: u16) -> LocalDescriptor {
    let mut v = vec![0.0; DESCRIPTOR_DIM];
    if (class_id as usize) < MAX_CLASSES {
        v[CLASS + class_id as usize] = 1.0;
    }
    if sample.is_empty() {
        return normalize(v);
    }
    let n = sample.len();
    v[COUNT] = (1.0 + distinct_count(sample) as f64).ln() / (1.0 + n as f64).ln().max(1.0);

    let centroid = mean(sample);
    let radial: Vec<f64> = sample.iter().map(|p| (p - centroid).norm()).collect();
    let radius = radial.iter().copied().fold(0.0, f64::max);
    if radius < DEGENERATE_RADIUS {
        return normalize(v);
    }

    for &d in &radial {
        v[RADIAL_HIST + bin(d, radius)] += 1.0 / n as f64;
    }

    // Rank points by distance to the centroid so pair selection is
    // independent of pose.
    let mut rank: Vec<usize> = (0..n).collect();
    rank.sort_by(|&a, &b| radial[a].total_cmp(&radial[b]).then(a.cmp(&b)));
    let pairs = pair_indices(n);
    for &(a, b) in &pairs {
        let d = (sample[rank[a]] - sample[rank[b]]).norm();
        v[PAIR_HIST + bin(d, 2.0 * radius)] += 1.0 / pairs.len() as f64;
    }

    let mut cov = Matrix3::zeros();
    for p in sample {
        let d = p - centroid;
        cov += d * d.transpose();
    }
    cov /= n as f64;
    let mut eig: Vec<f64> = SymmetricEigen::new(cov).eigenvalues.iter().map(|e| e.max(0.0)).collect();
    eig.sort_by(|a, b| b.total_cmp(a));
    let total: f64 = eig.iter().sum();
    if total > 0.0 {
        for (k, e) in eig.iter().enumerate() {
            v[EIGEN + k] = e / total;
        }
    }

    let u: Vec<f64> = radial.iter().map(|d| d / radius).collect();
    let m = u.iter().sum::<f64>() / n as f64;
    v[MOMENTS] = m;
    for k in 2..=4 {
        v[MOMENTS + k - 1] = u.iter().map(|x| (x - m).powi(k as i32)).sum::<f64>() / n as f64;
    }
    v[RADIUS] = radius.ln_1p();

    normalize(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Pose;

    fn random_object(rng: &mut ChaCha8Rng, n: usize) -> Vec<Point3> {
        let scale = Point3::new(rng.random_range(0.3..3.0), rng.random_range(0.3..3.0), rng.random_range(0.3..3.0));
        (0..n)
            .map(|_| Point3::new(rng.random_range(-1.0..1.0) * scale.x, rng.random_range(-1.0..1.0) * scale.y, rng.random_range(-1.0..1.0) * scale.z))
            .collect()
    }

    fn max_abs_diff(a: &LocalDescriptor, b: &LocalDescriptor) -> f64 {
        a.0.iter().zip(&b.0).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn invariant_to_rigid_motion() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for _ in 0..10 {
            let obj = random_object(&mut rng, 1024);
            let d0 = describe_reference(&obj, 3);
            for _ in 0..5 {
                let pose = Pose::random(&mut rng, 180.0, 100.0);
                let d1 = describe_reference(&pose.transform_slice(&obj), 3);
                assert!(max_abs_diff(&d0, &d1) < 1e-9);
            }
        }
    }

    #[test]
    fn unit_norm_and_dimension() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let d = describe_reference(&random_object(&mut rng, 300), 7);
        assert_eq!(d.0.len(), DESCRIPTOR_DIM);
        let norm: f64 = d.0.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-9);
    }

    #[test]
    fn coincident_points_fall_back() {
        let d = describe_reference(&vec![Point3::new(1.0, 2.0, 3.0); 16], 4);
        let nonzero: Vec<usize> = (0..DESCRIPTOR_DIM).filter(|&i| d.0[i] != 0.0).collect();
        assert_eq!(nonzero, vec![COUNT, CLASS + 4]);
        let norm: f64 = d.0.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cube_and_line_differ() {
        let mut cube = Vec::new();
        for x in 0..8 {
            for y in 0..8 {
                for z in 0..8 {
                    cube.push(Point3::new(x as f64, y as f64, z as f64) / 7.0);
                }
            }
        }
        let line: Vec<Point3> = (0..512).map(|i| Point3::new(5.0 * i as f64 / 511.0, 0.0, 0.0)).collect();
        let dc = describe_reference(&cube, 1);
        let dl = describe_reference(&line, 1);
        assert!(dc.distance(&dl) > 0.1, "{}", dc.distance(&dl));
    }

    #[test]
    fn deterministic_for_multiset() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let obj = random_object(&mut rng, 500);
        let mut reversed = obj.clone();
        reversed.reverse();
        assert!(max_abs_diff(&describe_reference(&obj, 2), &describe_reference(&reversed, 2)) < 1e-9);
    }

    #[test]
    fn backend_lookup() {
        assert_eq!(backend_by_name("reference").unwrap().name(), "reference");
        assert!(backend_by_name("learned").is_err());
        assert!(backend_by_name("nope").is_err());
    }
}
