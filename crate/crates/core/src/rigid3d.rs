//! Rotation and pose mathematics.
//!
//! Rotations are carried as angle-axis vectors ([`RotationVector`]): the
//! direction is the rotation axis, the magnitude is the angle in radians.
//! [`rotvec_to_matrix`] is the Rodrigues formula, [`matrix_to_rotvec`] its
//! canonical inverse (angle in `[0, pi]`), and [`geodesic_distance`] the
//! rotation angle between two orientations. Everything here is 64-bit even
//! though the network trains in 32-bit; conversion error has to stay far
//! below training noise.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Angle-axis rotation. Canonical form has magnitude <= pi.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RotationVector {
    pub vx: f64,
    pub vy: f64,
    pub vz: f64,
}

impl RotationVector {
    pub const ZERO: RotationVector = RotationVector {
        vx: 0.0,
        vy: 0.0,
        vz: 0.0,
    };

    pub fn new(vx: f64, vy: f64, vz: f64) -> Self {
        RotationVector { vx, vy, vz }
    }

    pub fn from_vector(v: Vector3<f64>) -> Self {
        RotationVector::new(v.x, v.y, v.z)
    }

    pub fn as_vector(&self) -> Vector3<f64> {
        Vector3::new(self.vx, self.vy, self.vz)
    }

    /// Rotation angle in radians (vector magnitude).
    pub fn angle(&self) -> f64 {
        self.as_vector().norm()
    }

    pub fn is_finite(&self) -> bool {
        self.vx.is_finite() && self.vy.is_finite() && self.vz.is_finite()
    }
}

/// Validated 3x3 rotation matrix: orthonormal with determinant +1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationMatrix(Matrix3<f64>);

/// Max deviation tolerated by [`RotationMatrix::from_matrix`] for
/// `R^T R = I` and `det R = 1`.
pub const ORTHONORMALITY_TOL: f64 = 1e-9;

impl RotationMatrix {
    pub fn identity() -> Self {
        RotationMatrix(Matrix3::identity())
    }

    /// Validates orthonormality and orientation before wrapping.
    pub fn from_matrix(m: Matrix3<f64>) -> Result<Self> {
        if !m.iter().all(|x| x.is_finite()) {
            return Err(Error::invalid("rotation matrix has non-finite entries"));
        }
        let gram = m.transpose() * m;
        let dev = (gram - Matrix3::identity()).abs().max();
        if dev > ORTHONORMALITY_TOL {
            return Err(Error::invalid(format!(
                "matrix is not orthonormal (max |R^T R - I| = {dev:.3e})"
            )));
        }
        let det = m.determinant();
        if (det - 1.0).abs() > ORTHONORMALITY_TOL {
            return Err(Error::invalid(format!(
                "matrix determinant {det:.12} is not +1"
            )));
        }
        Ok(RotationMatrix(m))
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    /// Inverse rotation (transpose).
    pub fn inverse(&self) -> Self {
        RotationMatrix(self.0.transpose())
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.0 * p
    }
}

/// Regression target per timestep: rotation plus continuous slice position.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub rotation: RotationVector,
    pub z: f64,
}

impl Pose {
    pub fn new(rotation: RotationVector, z: f64) -> Self {
        Pose { rotation, z }
    }

    pub fn identity() -> Self {
        Pose::new(RotationVector::ZERO, 0.0)
    }
}

fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Rodrigues formula. Returns the identity for angles below 1e-12.
pub fn rotvec_to_matrix(v: &RotationVector) -> Result<RotationMatrix> {
    if !v.is_finite() {
        return Err(Error::invalid("rotation vector has non-finite components"));
    }
    let vec = v.as_vector();
    let theta = vec.norm();
    if theta < 1e-12 {
        return Ok(RotationMatrix::identity());
    }
    let k = skew(&vec);
    // sin(t)/t and (1-cos(t))/t^2 with series fallback near zero.
    let (a, b) = if theta < 1e-4 {
        let t2 = theta * theta;
        (1.0 - t2 / 6.0, 0.5 - t2 / 24.0)
    } else {
        (
            theta.sin() / theta,
            (1.0 - theta.cos()) / (theta * theta),
        )
    };
    let m = Matrix3::identity() + k * a + k * k * b;
    Ok(RotationMatrix(m))
}

/// Canonical angle-axis extraction: magnitude in `[0, pi]`. At angle pi the
/// axis sign ambiguity is resolved by making the first nonzero component
/// non-negative.
pub fn matrix_to_rotvec(r: &RotationMatrix) -> RotationVector {
    let m = r.matrix();
    let cos_angle = ((m.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
    let angle = cos_angle.acos();

    if angle < 1e-12 {
        return RotationVector::ZERO;
    }

    if angle < std::f64::consts::PI - 1e-4 {
        // Axis from the skew-symmetric part: s = (R - R^T)^vee has norm 2 sin(angle).
        let s = Vector3::new(
            m[(2, 1)] - m[(1, 2)],
            m[(0, 2)] - m[(2, 0)],
            m[(1, 0)] - m[(0, 1)],
        );
        let factor = if angle < 1e-4 {
            0.5 * (1.0 + angle * angle / 6.0)
        } else {
            angle / (2.0 * angle.sin())
        };
        return RotationVector::from_vector(s * factor);
    }

    // Near pi the skew part vanishes; recover the axis from the symmetric
    // part: (R + I)/2 ~= a a^T for unit axis a.
    let b = (m + m.transpose()) * 0.5 + Matrix3::identity();
    let b = b * 0.5;
    let diag = [b[(0, 0)], b[(1, 1)], b[(2, 2)]];
    let k = (0..3)
        .max_by(|&i, &j| diag[i].partial_cmp(&diag[j]).unwrap())
        .unwrap();
    let ak = diag[k].max(0.0).sqrt();
    let mut axis = Vector3::zeros();
    axis[k] = ak;
    for j in 0..3 {
        if j != k {
            axis[j] = b[(k, j)] / ak;
        }
    }
    axis.normalize_mut();
    // Canonical sign: first nonzero component non-negative.
    for i in 0..3 {
        if axis[i].abs() > 1e-12 {
            if axis[i] < 0.0 {
                axis = -axis;
            }
            break;
        }
    }
    RotationVector::from_vector(axis * angle)
}

/// Matrix product `a * b` (apply `b` first, then `a`).
pub fn compose(a: &RotationMatrix, b: &RotationMatrix) -> RotationMatrix {
    RotationMatrix(a.matrix() * b.matrix())
}

/// Rotation angle of `a^T b`: the natural Riemannian metric on orientations,
/// in `[0, pi]`.
pub fn geodesic_distance(a: &RotationMatrix, b: &RotationMatrix) -> f64 {
    let rel = a.matrix().transpose() * b.matrix();
    ((rel.trace() - 1.0) / 2.0).clamp(-1.0, 1.0).acos()
}

/// Derivative of the Rodrigues map: `out[i] = dR/dv_i` evaluated at `v`.
///
/// Closed form after Gallego & Yezzi; falls back to the generator matrices
/// at the origin. Used by the geodesic fine-tuning loss.
pub fn rotation_jacobian(v: &RotationVector) -> [Matrix3<f64>; 3] {
    let vec = v.as_vector();
    let theta2 = vec.norm_squared();
    let e = [Vector3::x(), Vector3::y(), Vector3::z()];
    if theta2 < 1e-14 {
        return [skew(&e[0]), skew(&e[1]), skew(&e[2])];
    }
    let r = rotvec_to_matrix(v).expect("finite by construction").0;
    let mut out = [Matrix3::zeros(); 3];
    for i in 0..3 {
        let term = vec[i] * skew(&vec) + skew(&vec.cross(&((Matrix3::identity() - r) * e[i])));
        out[i] = (term / theta2) * r;
    }
    out
}
