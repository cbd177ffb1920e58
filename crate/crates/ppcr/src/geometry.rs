//! Points, rigid motions, and the 6-parameter chart the solver optimizes in.

use nalgebra::{Matrix3, Rotation3, SVector, UnitQuaternion, Vector3};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Local coordinates of a rigid motion: components 0-2 form the rotation
/// vector (unit axis scaled by the angle in radians), components 3-5 the
/// translation in meters.
pub type TransformParams = SVector<f64, 6>;

/// A point in 3D space, coordinates in meters.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    #[inline]
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Point3 { x, y, z }
    }

    #[inline]
    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    #[inline]
    pub fn to_vec(self) -> Vec3 {
        Vector3::new(self.x, self.y, self.z)
    }

    #[inline]
    pub fn from_vec(v: &Vec3) -> Self {
        Point3 {
            x: v.x,
            y: v.y,
            z: v.z,
        }
    }
}

impl std::ops::Sub for Point3 {
    type Output = Vec3;

    #[inline]
    fn sub(self, rhs: Point3) -> Vec3 {
        Vector3::new(self.x - rhs.x, self.y - rhs.y, self.z - rhs.z)
    }
}

/// Squared Euclidean distance.
///
/// Every distance computed by the spatial index goes through this one
/// function, so a brute-force scan using it reproduces index results
/// bit for bit.
#[inline]
pub fn dist2(a: &Point3, b: &Point3) -> f64 {
    let dx = a.x - b.x;
    let dy = a.y - b.y;
    let dz = a.z - b.z;
    dx * dx + dy * dy + dz * dz
}

/// An ordered set of points. The library never mutates a cloud in place;
/// moving a cloud always produces a new one.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    pub points: Vec<Point3>,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>) -> Self {
        PointCloud { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Point3> {
        self.points.iter()
    }
}

impl From<Vec<Point3>> for PointCloud {
    fn from(points: Vec<Point3>) -> Self {
        PointCloud { points }
    }
}

impl FromIterator<Point3> for PointCloud {
    fn from_iter<T: IntoIterator<Item = Point3>>(iter: T) -> Self {
        PointCloud {
            points: iter.into_iter().collect(),
        }
    }
}

/// A rigid motion `p -> R*p + t` with `R` orthonormal, `det(R) = +1`.
///
/// The rotation is stored as a full matrix; the minimal 6-dof chart
/// ([`TransformParams`]) exists only for the solver. Long chains of
/// [`compose`](RigidTransform::compose) are periodically snapped back to
/// the nearest orthonormal matrix so floating-point drift cannot
/// accumulate without bound.
#[derive(Debug, Clone, Copy)]
pub struct RigidTransform {
    rotation: Mat3,
    translation: Vec3,
    /// Compositions since the rotation was last projected onto the
    /// manifold; not part of the value.
    depth: u32,
}

/// After this many compositions the rotation is re-orthonormalized.
const RENORMALIZE_AFTER: u32 = 100;

impl PartialEq for RigidTransform {
    fn eq(&self, other: &Self) -> bool {
        self.rotation == other.rotation && self.translation == other.translation
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        RigidTransform {
            rotation: Mat3::identity(),
            translation: Vec3::zeros(),
            depth: 0,
        }
    }

    /// Build from parts. `rotation` must already be orthonormal with
    /// determinant +1; use [`nearest_orthonormal`] first if it is not.
    pub fn new(rotation: Mat3, translation: Vec3) -> Self {
        debug_assert!(
            orthonormality_defect(&rotation) < 1e-9,
            "rotation matrix is off the manifold"
        );
        RigidTransform {
            rotation,
            translation,
            depth: 0,
        }
    }

    pub fn rotation(&self) -> &Mat3 {
        &self.rotation
    }

    pub fn translation(&self) -> &Vec3 {
        &self.translation
    }

    #[inline]
    pub fn apply(&self, p: &Point3) -> Point3 {
        let v = self.rotation * p.to_vec() + self.translation;
        Point3::from_vec(&v)
    }

    pub fn apply_cloud(&self, cloud: &PointCloud) -> PointCloud {
        cloud.iter().map(|p| self.apply(p)).collect()
    }

    /// `self ∘ other`: apply `other` first, then `self`.
    pub fn compose(&self, other: &Self) -> Self {
        let mut rotation = self.rotation * other.rotation;
        let translation = self.rotation * other.translation + self.translation;
        let mut depth = self.depth.max(other.depth) + 1;
        if depth > RENORMALIZE_AFTER {
            rotation = nearest_orthonormal(&rotation);
            depth = 0;
        }
        RigidTransform {
            rotation,
            translation,
            depth,
        }
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
            depth: self.depth,
        }
    }
}

/// Max-norm distance from the manifold: entrywise defect of `R*Rᵀ = I`
/// combined with the determinant defect |det - 1|.
pub fn orthonormality_defect(m: &Mat3) -> f64 {
    let gram = m * m.transpose() - Mat3::identity();
    let entry = gram.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    entry.max((m.determinant() - 1.0).abs())
}

/// Nearest orthonormal matrix with determinant +1 (polar factor via SVD,
/// sign-corrected so a near-rotation never projects to a reflection).
pub fn nearest_orthonormal(m: &Mat3) -> Mat3 {
    let svd = m.svd(true, true);
    let u = svd.u.expect("svd of 3x3 always yields u");
    let v_t = svd.v_t.expect("svd of 3x3 always yields v_t");
    let mut r = u * v_t;
    if r.determinant() < 0.0 {
        let mut u = u;
        u.column_mut(2).neg_mut();
        r = u * v_t;
    }
    r
}

/// Cross-product matrix: `skew(v) * w == v × w`.
#[inline]
pub fn skew(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Derivative correction of the exponential chart: for a perturbation `d`
/// of the rotation vector `w`, `exp(w + d) ≈ exp(w) * exp(right_jacobian(w) * d)`.
/// Falls back to the series expansion near zero where the closed form
/// divides by the angle.
pub fn right_jacobian(w: &Vec3) -> Mat3 {
    let theta2 = w.norm_squared();
    let s = skew(w);
    if theta2 < 1e-12 {
        Mat3::identity() - 0.5 * s + (s * s) / 6.0
    } else {
        let theta = theta2.sqrt();
        Mat3::identity() - ((1.0 - theta.cos()) / theta2) * s
            + ((theta - theta.sin()) / (theta2 * theta)) * (s * s)
    }
}

/// Rotation-vector + translation chart to rigid motion (exponential map
/// on the rotation part).
pub fn params_to_transform(p: &TransformParams) -> RigidTransform {
    let w = Vector3::new(p[0], p[1], p[2]);
    let rotation = Rotation3::from_scaled_axis(w);
    RigidTransform::new(
        rotation.into_inner(),
        Vector3::new(p[3], p[4], p[5]),
    )
}

/// Inverse chart. Fails for half-turn rotations where the rotation vector
/// is not unique (angle >= pi).
pub fn transform_to_params(t: &RigidTransform) -> Result<TransformParams> {
    let q = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(t.rotation));
    let angle = q.angle();
    if angle >= std::f64::consts::PI {
        return Err(Error::OutOfChart(angle));
    }
    let w = q.scaled_axis();
    let t = t.translation;
    Ok(TransformParams::from_column_slice(&[
        w.x, w.y, w.z, t.x, t.y, t.z,
    ]))
}
