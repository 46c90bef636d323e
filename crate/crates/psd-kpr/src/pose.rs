//! Camera poses: a rotation, a translation and an explicit scale factor.
//!
//! The homogeneous 4x4 matrix of a pose stores `s * t` in its translation
//! column, so a monocular (scale-ambiguous) pose and a metric pose share one
//! representation. `s` and `t` are recoverable from the matrix only as a
//! product; metric data uses `s = 1`.

use nalgebra::{Matrix3, Matrix4, Rotation3, Vector3};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest Frobenius gap `||r^T r - I||_F` accepted by [`Pose::new`].
pub const ROTATION_TOL: f64 = 1e-6;

/// Rejections raised by [`Pose::new`].
#[derive(Debug, Clone, PartialEq, Error)]
pub enum PoseError {
    /// The rotation block is not orthonormal with determinant +1.
    #[error("not a proper rotation: ||r^T r - I||_F = {gap:.3e}, det = {det:.6}")]
    NonRotation { gap: f64, det: f64 },
    /// The scale factor must be strictly positive.
    #[error("scale must be > 0, got {0}")]
    NonPositiveScale(f64),
}

/// A camera pose in the world frame.
///
/// Immutable after construction; `r` is guaranteed orthonormal with
/// determinant +1 and `s > 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PoseDoc", into = "PoseDoc")]
pub struct Pose {
    r: Matrix3<f64>,
    t: Vector3<f64>,
    s: f64,
}

impl Pose {
    /// Builds a pose, rejecting improper rotations and non-positive scales.
    #[allow(clippy::neg_cmp_op_on_partial_ord)] // NaN must fail the checks
    pub fn new(r: Matrix3<f64>, t: Vector3<f64>, s: f64) -> Result<Self, PoseError> {
        let gap = (r.transpose() * r - Matrix3::identity()).norm();
        let det = r.determinant();
        // NaNs fail both comparisons, so non-finite rotations are rejected too.
        if !(gap <= ROTATION_TOL) || !(det > 0.0) {
            return Err(PoseError::NonRotation { gap, det });
        }
        if !(s > 0.0) {
            return Err(PoseError::NonPositiveScale(s));
        }
        Ok(Self { r, t, s })
    }

    /// The identity pose: no rotation, zero translation, unit scale.
    pub fn identity() -> Self {
        Self {
            r: Matrix3::identity(),
            t: Vector3::zeros(),
            s: 1.0,
        }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.r
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.t
    }

    pub fn scale(&self) -> f64 {
        self.s
    }

    /// The translation column of the materialized matrix, `s * t`.
    pub fn scaled_translation(&self) -> Vector3<f64> {
        self.s * self.t
    }

    /// Materializes the homogeneous transform with last row `[0, 0, 0, 1]`.
    pub fn matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.r);
        m.fixed_view_mut::<3, 1>(0, 3)
            .copy_from(&self.scaled_translation());
        m
    }

    /// Geodesic angle (radians) between the two rotations.
    pub fn rotation_angle_to(&self, other: &Pose) -> f64 {
        Rotation3::from_matrix_unchecked(self.r.transpose() * other.r).angle()
    }

    /// Zero-mean jitter of scale `magnitude`: Gaussian translation noise per
    /// axis (applied to the materialized translation) and a rotation about a
    /// random axis with a Gaussian angle. Deterministic in the generator.
    pub fn perturbed<R: rand::Rng>(&self, magnitude: f64, rng: &mut R) -> Pose {
        let gauss = Normal::new(0.0, magnitude).expect("finite non-negative std dev");
        let dt = Vector3::new(gauss.sample(rng), gauss.sample(rng), gauss.sample(rng));
        let axis = loop {
            let v = Vector3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            if v.norm() > 1e-6 {
                break nalgebra::Unit::new_normalize(v);
            }
        };
        let angle: f64 = gauss.sample(rng);
        let r = Rotation3::from_axis_angle(&axis, angle).into_inner() * self.r;
        Pose::new(r, self.t + dt / self.s, self.s)
            .expect("perturbation of a valid pose stays valid")
    }

    /// Euclidean distance between the materialized translations.
    pub fn translation_distance_to(&self, other: &Pose) -> f64 {
        (self.scaled_translation() - other.scaled_translation()).norm()
    }
}

#[derive(Serialize, Deserialize)]
struct PoseDoc {
    r: [[f64; 3]; 3],
    t: [f64; 3],
    s: f64,
}

impl From<Pose> for PoseDoc {
    fn from(p: Pose) -> Self {
        let r = p.r;
        PoseDoc {
            r: [
                [r[(0, 0)], r[(0, 1)], r[(0, 2)]],
                [r[(1, 0)], r[(1, 1)], r[(1, 2)]],
                [r[(2, 0)], r[(2, 1)], r[(2, 2)]],
            ],
            t: [p.t.x, p.t.y, p.t.z],
            s: p.s,
        }
    }
}

impl TryFrom<PoseDoc> for Pose {
    type Error = String;

    fn try_from(doc: PoseDoc) -> Result<Self, String> {
        let r = Matrix3::from_fn(|i, j| doc.r[i][j]);
        let t = Vector3::new(doc.t[0], doc.t[1], doc.t[2]);
        Pose::new(r, t, doc.s).map_err(|e| e.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn identity_pose_materializes_to_identity() {
        let p = Pose::new(Matrix3::identity(), Vector3::zeros(), 1.0).unwrap();
        assert_eq!(p.matrix(), Matrix4::identity());
        assert_eq!(p, Pose::identity());
    }

    #[test]
    fn translation_column_is_scaled() {
        let p = Pose::new(Matrix3::identity(), Vector3::new(1.0, 2.0, 3.0), 2.0).unwrap();
        let m = p.matrix();
        assert_eq!(m[(0, 3)], 2.0);
        assert_eq!(m[(1, 3)], 4.0);
        assert_eq!(m[(2, 3)], 6.0);
        assert_eq!(m.row(3).transpose(), nalgebra::Vector4::new(0.0, 0.0, 0.0, 1.0));
    }

    #[test]
    fn reflection_is_rejected() {
        // Orthonormal but det = -1.
        let reflect = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0));
        let err = Pose::new(reflect, Vector3::zeros(), 1.0).unwrap_err();
        assert!(matches!(err, PoseError::NonRotation { .. }));
    }

    #[test]
    fn skewed_matrix_is_rejected() {
        let mut m = Matrix3::identity();
        m[(0, 1)] = 0.1;
        assert!(matches!(
            Pose::new(m, Vector3::zeros(), 1.0),
            Err(PoseError::NonRotation { .. })
        ));
    }

    #[test]
    fn non_positive_scale_is_rejected() {
        for s in [0.0, -1.0, f64::NAN] {
            let err = Pose::new(Matrix3::identity(), Vector3::zeros(), s).unwrap_err();
            assert!(matches!(err, PoseError::NonPositiveScale(_)));
        }
    }

    #[test]
    fn matrix_readback_reproduces_rotation_and_scaled_translation() {
        let r = Rotation3::from_euler_angles(0.3, -0.8, 1.2).into_inner();
        let t = Vector3::new(-4.2, 0.75, 9.1);
        let p = Pose::new(r, t, 3.5).unwrap();
        let m = p.matrix();
        let r_back = m.fixed_view::<3, 3>(0, 0).into_owned();
        let st_back = m.fixed_view::<3, 1>(0, 3).into_owned();
        assert_relative_eq!(r_back, r, epsilon = 1e-12);
        assert_relative_eq!(st_back, p.scaled_translation(), epsilon = 1e-12);
    }

    #[test]
    fn rotation_angle_is_geodesic() {
        let a = Pose::identity();
        let rz = Rotation3::from_euler_angles(0.0, 0.0, 0.5).into_inner();
        let b = Pose::new(rz, Vector3::zeros(), 1.0).unwrap();
        assert_relative_eq!(a.rotation_angle_to(&b), 0.5, epsilon = 1e-12);
    }
}
