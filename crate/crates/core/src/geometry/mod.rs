//! Oriented bounding boxes.
//!
//! A box is stored as a world-frame `center`, a rotation `R` and per-axis
//! `extents`. `R` maps world points into the box frame, so a point `x` is
//! inside when `-extents/2 <= R (x - center) <= extents/2` componentwise, and
//! box-frame offsets map back with `x = Rᵀ local + center`.

mod rotation;
mod search;

pub use rotation::{project_to_rotation, Rotation3};
pub use search::{
    fit_obb, fit_obb_sequence, fit_obb_sequence_with, fit_sequences, genetic_search_so3, nelder_mead_so3, FitOptions,
    FitResult, GeneticOptions, GeneticResult, NelderMeadOptions, ObbSequence, SearchResult, StartMode,
};

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of corner coordinates in one box frame.
pub const CORNER_FEATURES: usize = 24;

/// A non-empty set of finite points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<[f64; 3]>", into = "Vec<[f64; 3]>")]
pub struct PointCloud {
    points: Vec<Vector3<f64>>,
}

impl PointCloud {
    pub fn new(points: Vec<Vector3<f64>>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidInput("point cloud is empty".into()));
        }
        if let Some(i) = points.iter().position(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(Error::InvalidInput(format!("point {i} is not finite")));
        }
        Ok(Self { points })
    }

    pub fn from_arrays(points: &[[f64; 3]]) -> Result<Self> {
        Self::new(points.iter().map(|p| Vector3::new(p[0], p[1], p[2])).collect())
    }

    pub fn points(&self) -> &[Vector3<f64>] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn to_arrays(&self) -> Vec<[f64; 3]> {
        self.points.iter().map(|p| [p.x, p.y, p.z]).collect()
    }

    pub fn centroid(&self) -> Vector3<f64> {
        self.points.iter().sum::<Vector3<f64>>() / self.points.len() as f64
    }
}

impl TryFrom<Vec<[f64; 3]>> for PointCloud {
    type Error = Error;

    fn try_from(v: Vec<[f64; 3]>) -> Result<Self> {
        Self::from_arrays(&v)
    }
}

impl From<PointCloud> for Vec<[f64; 3]> {
    fn from(c: PointCloud) -> Self {
        c.to_arrays()
    }
}

/// Per-axis extrema of a cloud in a rotated frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxisBounds {
    pub min: Vector3<f64>,
    pub max: Vector3<f64>,
}

impl AxisBounds {
    pub fn extents(&self) -> Vector3<f64> {
        self.max - self.min
    }

    pub fn volume(&self) -> f64 {
        let e = self.extents();
        e.x * e.y * e.z
    }
}

pub fn rotated_bounds(cloud: &PointCloud, rotation: &Rotation3) -> AxisBounds {
    let m = rotation.matrix();
    let mut min = Vector3::repeat(f64::INFINITY);
    let mut max = Vector3::repeat(f64::NEG_INFINITY);
    for p in cloud.points() {
        let q = m * p;
        min = min.inf(&q);
        max = max.sup(&q);
    }
    AxisBounds { min, max }
}

/// Volume of the axis-aligned box of the cloud after rotating it by `rotation`.
/// This is the objective minimized over rotations.
pub fn aabb_volume(cloud: &PointCloud, rotation: &Rotation3) -> f64 {
    rotated_bounds(cloud, rotation).volume()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Obb {
    pub center: Vector3<f64>,
    pub rotation: Rotation3,
    pub extents: Vector3<f64>,
}

impl Obb {
    /// Tightest box with the given orientation.
    pub fn for_rotation(cloud: &PointCloud, rotation: Rotation3) -> Self {
        let b = rotated_bounds(cloud, &rotation);
        let mid = (b.min + b.max) * 0.5;
        Self {
            center: rotation.matrix().transpose() * mid,
            rotation,
            extents: b.extents(),
        }
    }

    pub fn volume(&self) -> f64 {
        self.extents.x * self.extents.y * self.extents.z
    }

    pub fn diagonal(&self) -> f64 {
        self.extents.norm()
    }

    /// Largest violation of the enclosure constraint over the cloud, as a
    /// fraction of the box diagonal (zero when every point is inside).
    pub fn enclosure_violation(&self, cloud: &PointCloud) -> f64 {
        let m = self.rotation.matrix();
        let half = self.extents * 0.5;
        let mut worst = 0.0f64;
        for p in cloud.points() {
            let local = m * (p - self.center);
            for k in 0..3 {
                worst = worst.max(local[k].abs() - half[k]);
            }
        }
        let scale = self.diagonal().max(f64::MIN_POSITIVE);
        worst.max(0.0) / scale
    }

    pub fn encloses(&self, cloud: &PointCloud, rel_tol: f64) -> bool {
        let m = self.rotation.matrix();
        let half = self.extents * 0.5;
        let tol = rel_tol * self.diagonal();
        cloud.points().iter().all(|p| {
            let local = m * (p - self.center);
            (0..3).all(|k| local[k].abs() <= half[k] + tol)
        })
    }

    /// World coordinates of the 8 corners, flattened corner-major.
    pub fn corners(&self) -> [f64; CORNER_FEATURES] {
        obb_corners(self)
    }

    /// Same box expressed with one of the 24 proper signed axis permutations of
    /// its frame, chosen to align best with `reference`.
    pub fn aligned_to(&self, reference: &Rotation3) -> Self {
        let r = self.rotation.matrix();
        let target = reference.matrix();
        let mut best: Option<(f64, Matrix3<f64>)> = None;
        for p in proper_signed_permutations() {
            let candidate = p * r;
            let score = (candidate.component_mul(target)).sum();
            if best.as_ref().is_none_or(|(s, _)| score > *s + 1e-12) {
                best = Some((score, p));
            }
        }
        let p = best.map(|(_, p)| p).unwrap_or_else(Matrix3::identity);
        let abs_p = p.map(f64::abs);
        Self {
            center: self.center,
            rotation: Rotation3::from_matrix_unchecked(p * r),
            extents: abs_p * self.extents,
        }
    }

    /// Recovers a box from its 24 corner coordinates in canonical order.
    /// Edges of zero length leave the corresponding rotation row undetermined;
    /// those rows are completed to a right-handed frame.
    pub fn from_corners(frame: &[f64]) -> Result<Self> {
        let c = corner_points(frame)?;
        let center = c.iter().sum::<Vector3<f64>>() / 8.0;
        // corner bit 2 <-> axis 0, bit 1 <-> axis 1, bit 0 <-> axis 2
        let edges = [c[4] - c[0], c[2] - c[0], c[1] - c[0]];
        let extents = Vector3::new(edges[0].norm(), edges[1].norm(), edges[2].norm());
        let m = Matrix3::from_rows(&[edges[0].transpose(), edges[1].transpose(), edges[2].transpose()]);
        let rotation = project_to_rotation(&m).unwrap_or_else(|_| Rotation3::identity());
        Ok(Self {
            center,
            rotation,
            extents,
        })
    }
}

/// World coordinates of the 8 box corners. Corner `b` has local offset
/// `(±Δ₁/2, ±Δ₂/2, ±Δ₃/2)` where the signs follow the binary digits of `b`
/// (most significant digit for the first axis, `1` meaning `+`), mapped to
/// world as `Rᵀ local + center`.
pub fn obb_corners(b: &Obb) -> [f64; CORNER_FEATURES] {
    let rt = b.rotation.matrix().transpose();
    let half = b.extents * 0.5;
    let mut out = [0.0; CORNER_FEATURES];
    for corner in 0..8 {
        let local = corner_offset(corner, &half);
        let world = rt * local + b.center;
        out[3 * corner..3 * corner + 3].copy_from_slice(world.as_slice());
    }
    out
}

pub(crate) fn corner_offset(corner: usize, half: &Vector3<f64>) -> Vector3<f64> {
    let sign = |bit: usize| if corner >> bit & 1 == 1 { 1.0 } else { -1.0 };
    Vector3::new(sign(2) * half.x, sign(1) * half.y, sign(0) * half.z)
}

pub(crate) fn corner_points(frame: &[f64]) -> Result<[Vector3<f64>; 8]> {
    if frame.len() != CORNER_FEATURES {
        return Err(Error::ShapeMismatch(format!(
            "expected {CORNER_FEATURES} corner features, got {}",
            frame.len()
        )));
    }
    let mut c = [Vector3::zeros(); 8];
    for (k, p) in c.iter_mut().enumerate() {
        *p = Vector3::new(frame[3 * k], frame[3 * k + 1], frame[3 * k + 2]);
    }
    Ok(c)
}

/// The 24 signed permutation matrices with determinant +1.
pub fn proper_signed_permutations() -> Vec<Matrix3<f64>> {
    const PERMS: [[usize; 3]; 6] = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
    let mut out = Vec::with_capacity(24);
    for perm in PERMS {
        for signs in 0..8u8 {
            let mut m = Matrix3::zeros();
            for (row, &col) in perm.iter().enumerate() {
                m[(row, col)] = if signs >> row & 1 == 1 { -1.0 } else { 1.0 };
            }
            if m.determinant() > 0.0 {
                out.push(m);
            }
        }
    }
    out
}

/// Box aligned with the principal axes of the cloud. Axes are ordered by
/// descending variance; each axis is signed so its largest-magnitude
/// component is positive, and the third axis completes a right-handed frame.
pub fn pca_obb(cloud: &PointCloud) -> Obb {
    Obb::for_rotation(cloud, pca_rotation(cloud))
}

pub fn pca_rotation(cloud: &PointCloud) -> Rotation3 {
    let mean = cloud.centroid();
    let mut cov = Matrix3::zeros();
    for p in cloud.points() {
        let d = p - mean;
        cov += d * d.transpose();
    }
    cov /= cloud.len() as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let signed = |k: usize| -> Vector3<f64> {
        let v = eig.eigenvectors.column(order[k]).into_owned();
        let mut lead = 0;
        for i in 1..3 {
            if v[i].abs() > v[lead].abs() + 1e-12 {
                lead = i;
            }
        }
        if v[lead] < 0.0 {
            -v
        } else {
            v
        }
    };
    let r1 = signed(0);
    let r2 = signed(1);
    let r3 = r1.cross(&r2);
    let m = Matrix3::from_rows(&[r1.transpose(), r2.transpose(), r3.transpose()]);
    project_to_rotation(&m).unwrap_or_else(|_| Rotation3::identity())
}
