use nalgebra::{Matrix3, Rotation3 as NaRotation, UnitQuaternion, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const ORTHO_TOL: f64 = 1e-9;

/// A proper rotation matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[[f64; 3]; 3]", into = "[[f64; 3]; 3]")]
pub struct Rotation3 {
    m: Matrix3<f64>,
}

impl Rotation3 {
    pub fn new(m: Matrix3<f64>) -> Result<Self> {
        let defect = (m.transpose() * m - Matrix3::identity()).norm();
        if !m.iter().all(|v| v.is_finite()) || defect > ORTHO_TOL {
            return Err(Error::InvalidInput(format!(
                "matrix is not orthogonal (|MᵀM - I| = {defect:e})"
            )));
        }
        if (m.determinant() - 1.0).abs() > ORTHO_TOL {
            return Err(Error::InvalidInput("rotation determinant is not +1".into()));
        }
        Ok(Self { m })
    }

    pub(crate) fn from_matrix_unchecked(m: Matrix3<f64>) -> Self {
        Self { m }
    }

    pub fn identity() -> Self {
        Self { m: Matrix3::identity() }
    }

    /// Exponential map: rotation by `|v|` radians about `v / |v|`.
    pub fn from_axis_angle(v: &Vector3<f64>) -> Self {
        Self {
            m: NaRotation::new(*v).into_inner(),
        }
    }

    /// Uniformly distributed rotation.
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        loop {
            let q = nalgebra::Quaternion::new(
                rng.sample::<f64, _>(StandardNormal),
                rng.sample::<f64, _>(StandardNormal),
                rng.sample::<f64, _>(StandardNormal),
                rng.sample::<f64, _>(StandardNormal),
            );
            if q.norm() > 1e-6 {
                let uq = UnitQuaternion::from_quaternion(q);
                return Self {
                    m: uq.to_rotation_matrix().into_inner(),
                };
            }
        }
    }

    /// Rotation about a uniformly random axis by an angle drawn uniformly
    /// from `[0, max_angle]`.
    pub fn random_small<R: Rng + ?Sized>(rng: &mut R, max_angle: f64) -> Self {
        let axis = loop {
            let v = Vector3::new(
                rng.sample::<f64, _>(StandardNormal),
                rng.sample::<f64, _>(StandardNormal),
                rng.sample::<f64, _>(StandardNormal),
            );
            let n = v.norm();
            if n > 1e-9 {
                break v / n;
            }
        };
        let angle = rng.gen::<f64>() * max_angle;
        Self::from_axis_angle(&(axis * angle))
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.m
    }

    /// `self` applied after `other`.
    pub fn compose(&self, other: &Rotation3) -> Rotation3 {
        Self { m: self.m * other.m }
    }

    pub fn inverse(&self) -> Rotation3 {
        Self { m: self.m.transpose() }
    }

    /// Geodesic angle between two rotations, in radians.
    pub fn angle_to(&self, other: &Rotation3) -> f64 {
        let rel = self.m.transpose() * other.m;
        ((rel.trace() - 1.0) * 0.5).clamp(-1.0, 1.0).acos()
    }
}

impl TryFrom<[[f64; 3]; 3]> for Rotation3 {
    type Error = Error;

    fn try_from(rows: [[f64; 3]; 3]) -> Result<Self> {
        Self::new(Matrix3::from_fn(|i, j| rows[i][j]))
    }
}

impl From<Rotation3> for [[f64; 3]; 3] {
    fn from(r: Rotation3) -> Self {
        let m = r.m;
        [
            [m[(0, 0)], m[(0, 1)], m[(0, 2)]],
            [m[(1, 0)], m[(1, 1)], m[(1, 2)]],
            [m[(2, 0)], m[(2, 1)], m[(2, 2)]],
        ]
    }
}

/// Gram–Schmidt orthonormalization of the rows of `m`; the third row is
/// negated if needed so the result has determinant +1.
pub fn project_to_rotation(m: &Matrix3<f64>) -> Result<Rotation3> {
    let scale = m.row_iter().map(|r| r.norm()).fold(0.0, f64::max);
    if !scale.is_finite() || scale == 0.0 {
        return Err(Error::DegenerateMatrix);
    }
    let eps = 1e-10 * scale;
    let mut rows: [Vector3<f64>; 3] = [Vector3::zeros(); 3];
    for i in 0..3 {
        let mut v = m.row(i).transpose();
        // two passes keep the result orthogonal to machine precision
        for _ in 0..2 {
            for r in rows.iter().take(i) {
                v -= r * r.dot(&v);
            }
        }
        let n = v.norm();
        if n <= eps {
            return Err(Error::DegenerateMatrix);
        }
        rows[i] = v / n;
    }
    if rows[0].cross(&rows[1]).dot(&rows[2]) < 0.0 {
        rows[2] = -rows[2];
    }
    Ok(Rotation3 {
        m: Matrix3::from_rows(&[rows[0].transpose(), rows[1].transpose(), rows[2].transpose()]),
    })
}
