//! Seeded problem generators shared by the benchmarks.

use ppcr::geometry::Vec3;
use ppcr::{params_to_transform, Point3, PointCloud, RigidTransform, TransformParams};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// `n` points uniform in the unit cube.
pub fn uniform_cloud(n: usize, seed: u64) -> PointCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
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

/// A registration problem with a known answer: the target cloud, the
/// source cloud displaced by the inverse of `truth`, and `truth` itself
/// (a 10-degree rotation about a random axis plus a small translation).
pub fn rotated_pair(n: usize, seed: u64) -> (PointCloud, PointCloud, RigidTransform) {
    let target = uniform_cloud(n, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xdead_beef);
    let axis = loop {
        let v = Vec3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let norm = v.norm();
        if norm > 0.1 && norm <= 1.0 {
            break v / norm;
        }
    };
    let w = axis * 10f64.to_radians();
    let truth = params_to_transform(&TransformParams::from_column_slice(&[
        w.x,
        w.y,
        w.z,
        rng.random_range(-0.05..0.05),
        rng.random_range(-0.05..0.05),
        rng.random_range(-0.05..0.05),
    ]));
    let source: PointCloud = target.iter().map(|p| truth.inverse().apply(p)).collect();
    (source, target, truth)
}
