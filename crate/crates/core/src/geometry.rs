//! Rigid transforms in SE(3) and the error metrics used to score them.
//!
//! Rotations are kept as plain 3x3 matrices. [`Pose::new`] validates that the
//! matrix is orthonormal with determinant +1; poses produced by composing or
//! inverting valid poses are trusted without re-validation.

use nalgebra::{Matrix3, Rotation3, Unit, Vector3};
use rand::Rng;

use crate::error::{Error, Result};

pub type Point3 = Vector3<f64>;

/// Tolerance for the orthonormality check on construction.
pub const ORTHONORMAL_TOL: f64 = 1e-9;

/// A rigid body transform `p -> R p + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        if !rotation.iter().chain(translation.iter()).all(|v| v.is_finite()) {
            return Err(Error::InvalidInput("pose has non-finite entries".into()));
        }
        let gram_err = (rotation.transpose() * rotation - Matrix3::identity()).abs().max();
        if gram_err > ORTHONORMAL_TOL || (rotation.determinant() - 1.0).abs() > ORTHONORMAL_TOL {
            return Err(Error::InvalidInput(format!(
                "rotation is not orthonormal (deviation {gram_err:.3e})"
            )));
        }
        Ok(Self { rotation, translation })
    }

    pub fn identity() -> Self {
        Self { rotation: Matrix3::identity(), translation: Vector3::zeros() }
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self { rotation: Matrix3::identity(), translation }
    }

    /// Rotation of `angle` radians about `axis` followed by `translation`.
    pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64, translation: Vector3<f64>) -> Self {
        let rotation = if axis.norm() == 0.0 {
            Matrix3::identity()
        } else {
            *Rotation3::from_axis_angle(&Unit::new_normalize(*axis), angle).matrix()
        };
        Self { rotation, translation }
    }

    /// Projects an arbitrary 3x3 matrix onto the nearest rotation (in the
    /// Frobenius sense) and pairs it with `translation`.
    pub fn from_nearest_rotation(m: &Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        if !m.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidInput("non-finite rotation matrix".into()));
        }
        Ok(Self { rotation: nearest_rotation(m), translation })
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self { rotation: rt, translation: -(rt * self.translation) }
    }

    /// `self ∘ other`: applies `other` first, then `self`.
    pub fn compose(&self, other: &Pose) -> Self {
        Self {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    #[inline]
    pub fn transform_point(&self, p: &Point3) -> Point3 {
        self.rotation * p + self.translation
    }

    /// Transforms every point of `pts`, rejecting non-finite coordinates.
    pub fn apply(&self, pts: &PointSet) -> Result<PointSet> {
        pts.check_finite()?;
        Ok(PointSet {
            points: pts.points.iter().map(|p| self.transform_point(p)).collect(),
            payload: pts.payload.clone(),
        })
    }

    pub fn transform_slice(&self, pts: &[Point3]) -> Vec<Point3> {
        pts.iter().map(|p| self.transform_point(p)).collect()
    }

    /// Row-major `[R | t]`, the odometry text layout.
    pub fn to_row_major_3x4(&self) -> [f64; 12] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[(0, 0)], r[(0, 1)], r[(0, 2)], t.x,
            r[(1, 0)], r[(1, 1)], r[(1, 2)], t.y,
            r[(2, 0)], r[(2, 1)], r[(2, 2)], t.z,
        ]
    }

    /// Draws a rotation uniformly about a random axis with angle up to
    /// `max_angle_deg`, and a translation uniformly inside a ball of radius
    /// `max_translation`.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, max_angle_deg: f64, max_translation: f64) -> Self {
        let axis = random_unit_vector(rng);
        let angle = rng.random_range(0.0..=max_angle_deg.max(0.0)).to_radians();
        let dir = random_unit_vector(rng);
        let radius = max_translation.max(0.0) * rng.random::<f64>().cbrt();
        Self::from_axis_angle(&axis, angle, dir * radius)
    }
}

pub(crate) fn random_unit_vector<R: Rng + ?Sized>(rng: &mut R) -> Vector3<f64> {
    loop {
        let v = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let n = v.norm();
        if n > 1e-3 && n <= 1.0 {
            return v / n;
        }
    }
}

/// Nearest proper rotation to `m` via SVD with reflection correction.
pub fn nearest_rotation(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let u = svd.u.expect("u requested");
    let v_t = svd.v_t.expect("v_t requested");
    let mut d = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    u * d * v_t
}

/// A set of 3-D points with an optional per-point payload index.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointSet {
    pub points: Vec<Point3>,
    pub payload: Option<Vec<u32>>,
}

impl PointSet {
    pub fn new(points: Vec<Point3>) -> Result<Self> {
        let set = Self { points, payload: None };
        set.check_finite()?;
        Ok(set)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn check_finite(&self) -> Result<()> {
        check_finite(&self.points)
    }
}

pub(crate) fn check_finite(points: &[Point3]) -> Result<()> {
    match points.iter().position(|p| !p.iter().all(|v| v.is_finite())) {
        Some(i) => Err(Error::InvalidInput(format!("point {i} has non-finite coordinates"))),
        None => Ok(()),
    }
}

/// `a⁻¹ ∘ b`: maps coordinates expressed in frame `b` into frame `a`.
pub fn relative(a: &Pose, b: &Pose) -> Pose {
    a.inverse().compose(b)
}

/// Angle of `R_gtᵀ R_est` in degrees, in `[0, 180]`.
pub fn rotation_error_deg(est: &Pose, gt: &Pose) -> f64 {
    let r = gt.rotation.transpose() * est.rotation;
    // atan2 keeps precision near 0 and 180 degrees, where acos does not.
    let cos = (r.trace() - 1.0) / 2.0;
    let sin = 0.5 * Vector3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]).norm();
    sin.atan2(cos).to_degrees()
}

/// Norm of the relative translation expressed in the ground-truth frame.
pub fn translation_error_m(est: &Pose, gt: &Pose) -> f64 {
    relative(gt, est).translation.norm()
}
