//! Shared generators and independent oracles for the integration tests.
//!
//! Everything here deliberately avoids the library's own code paths
//! where it serves as a reference: the closed-form alignment uses its
//! own SVD recipe, and finite differences use only the public point
//! action.

#![allow(dead_code)]

use nalgebra::Matrix3x6;
use ppcr::geometry::{params_to_transform, Mat3, Vec3};
use ppcr::{Point3, PointCloud, RigidTransform, TransformParams};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// n points uniform in the unit cube.
pub fn uniform_cloud(n: usize, seed: u64) -> PointCloud {
    let mut rng = rng(seed);
    (0..n)
        .map(|_| {
            Point3::new(
                rng.random_range(0.0..1.0),
                rng.random_range(0.0..1.0),
                rng.random_range(0.0..1.0),
            )
        })
        .collect()
}

pub fn random_unit_vector(rng: &mut ChaCha8Rng) -> Vec3 {
    loop {
        let v = Vec3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let n = v.norm();
        if n > 0.1 && n <= 1.0 {
            return v / n;
        }
    }
}

/// Rotation up to `max_angle` radians about a random axis plus a random
/// translation with each component in ±`max_translation`.
pub fn random_transform(
    rng: &mut ChaCha8Rng,
    max_angle: f64,
    max_translation: f64,
) -> RigidTransform {
    let w = random_unit_vector(rng) * rng.random_range(0.0..max_angle);
    params_to_transform(&TransformParams::from_column_slice(&[
        w.x,
        w.y,
        w.z,
        rng.random_range(-max_translation..max_translation),
        rng.random_range(-max_translation..max_translation),
        rng.random_range(-max_translation..max_translation),
    ]))
}

/// Largest pointwise difference of the two transforms' actions on a cloud.
pub fn max_action_distance(a: &RigidTransform, b: &RigidTransform, cloud: &PointCloud) -> f64 {
    cloud
        .iter()
        .map(|p| (a.apply(p) - b.apply(p)).norm())
        .fold(0.0, f64::max)
}

/// Closed-form weighted rigid alignment (Kabsch): the transform
/// minimizing the weighted sum of squared distances over known
/// one-to-one pairs. Used as the reference the iterative solver must
/// agree with.
pub fn kabsch(source: &[Point3], target: &[Point3], weights: &[f64]) -> RigidTransform {
    assert_eq!(source.len(), target.len());
    assert_eq!(source.len(), weights.len());
    let wsum: f64 = weights.iter().sum();
    let mut cp = Vec3::zeros();
    let mut cq = Vec3::zeros();
    for ((p, q), w) in source.iter().zip(target).zip(weights) {
        cp += *w * p.to_vec();
        cq += *w * q.to_vec();
    }
    cp /= wsum;
    cq /= wsum;

    let mut cov = Mat3::zeros();
    for ((p, q), w) in source.iter().zip(target).zip(weights) {
        cov += *w * (p.to_vec() - cp) * (q.to_vec() - cq).transpose();
    }
    let svd = cov.svd(true, true);
    let u = svd.u.expect("3x3 svd");
    let v = svd.v_t.expect("3x3 svd").transpose();
    let mut d = Mat3::identity();
    d[(2, 2)] = (v * u.transpose()).determinant().signum();
    let r = v * d * u.transpose();
    RigidTransform::new(r, cq - r * cp)
}

/// Central-difference derivative of the residual `y - T(params)x` with
/// respect to the chart, using only the public point action.
pub fn fd_jacobian(source: &Point3, params: &TransformParams, h: f64) -> Matrix3x6<f64> {
    let mut j = Matrix3x6::zeros();
    for i in 0..6 {
        let mut plus = *params;
        plus[i] += h;
        let mut minus = *params;
        minus[i] -= h;
        let fp = params_to_transform(&plus).apply(source);
        let fm = params_to_transform(&minus).apply(source);
        let col = -(fp.to_vec() - fm.to_vec()) / (2.0 * h);
        j.set_column(i, &col);
    }
    j
}

/// Exhaustive k-nearest-within oracle over the same distance function as
/// the spatial index, so agreement is exact.
pub fn brute_force_neighbors(
    points: &[Point3],
    query: &Point3,
    k: usize,
    max_dist: f64,
) -> Vec<(usize, f64)> {
    let r2 = max_dist * max_dist;
    let mut hits: Vec<(usize, f64)> = points
        .iter()
        .enumerate()
        .map(|(i, p)| (i, ppcr::geometry::dist2(query, p)))
        .filter(|&(_, d2)| d2 <= r2)
        .collect();
    hits.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    hits.truncate(k);
    hits
}
