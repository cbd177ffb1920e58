//! Property tests for rigid transforms and the 6-dof chart.
//!
//! The chart round trip is checked against a hand-rolled Rodrigues
//! formula so the library's quaternion-based extraction has an
//! independent reference.

mod common;

use common::max_action_distance;
use nalgebra::Matrix3;
use ppcr::geometry::{params_to_transform, transform_to_params, Mat3, Vec3};
use ppcr::{Point3, PointCloud, RigidTransform, TransformParams};
use proptest::prelude::*;

prop_compose! {
    fn arb_point()(
        x in -5.0..5.0f64,
        y in -5.0..5.0f64,
        z in -5.0..5.0f64,
    ) -> Point3 {
        Point3::new(x, y, z)
    }
}

prop_compose! {
    /// Rotation angle stays below 3.0 rad so the chart is well inside its
    /// domain (the boundary at pi is exercised separately).
    fn arb_params()(
        ax in -1.0..1.0f64,
        ay in -1.0..1.0f64,
        az in -1.0..1.0f64,
        angle in 0.0..3.0f64,
        tx in -5.0..5.0f64,
        ty in -5.0..5.0f64,
        tz in -5.0..5.0f64,
    ) -> TransformParams {
        let axis = Vec3::new(ax, ay, az);
        let axis = if axis.norm() < 1e-3 { Vec3::x() } else { axis.normalize() };
        let w = axis * angle;
        TransformParams::from_column_slice(&[w.x, w.y, w.z, tx, ty, tz])
    }
}

fn arb_transform() -> impl Strategy<Value = RigidTransform> {
    arb_params().prop_map(|p| params_to_transform(&p))
}

/// Independent Rodrigues evaluation of the rotation-vector exponential.
fn rodrigues(w: &Vec3) -> Mat3 {
    let theta = w.norm();
    if theta < 1e-12 {
        return Mat3::identity();
    }
    let k = w / theta;
    let kx = Matrix3::new(0.0, -k.z, k.y, k.z, 0.0, -k.x, -k.y, k.x, 0.0);
    Mat3::identity() + theta.sin() * kx + (1.0 - theta.cos()) * (kx * kx)
}

proptest! {
    #[test]
    fn transforms_preserve_pairwise_distances(
        t in arb_transform(),
        p in arb_point(),
        q in arb_point(),
    ) {
        let before = (p - q).norm();
        let after = (t.apply(&p) - t.apply(&q)).norm();
        prop_assert!((before - after).abs() < 1e-9);
    }

    #[test]
    fn composition_matches_sequential_application(
        a in arb_transform(),
        b in arb_transform(),
        p in arb_point(),
    ) {
        let chained = a.apply(&b.apply(&p));
        let composed = a.compose(&b).apply(&p);
        prop_assert!((chained - composed).norm() < 1e-9);
    }

    #[test]
    fn composition_is_associative_on_points(
        a in arb_transform(),
        b in arb_transform(),
        c in arb_transform(),
        p in arb_point(),
    ) {
        let left = a.compose(&b).compose(&c).apply(&p);
        let right = a.compose(&b.compose(&c)).apply(&p);
        prop_assert!((left - right).norm() < 1e-9);
    }

    #[test]
    fn inverse_undoes_the_action(t in arb_transform(), p in arb_point()) {
        let back = t.inverse().apply(&t.apply(&p));
        prop_assert!((back - p).norm() < 1e-9);
    }

    #[test]
    fn exponential_matches_rodrigues_reference(params in arb_params()) {
        let t = params_to_transform(&params);
        let w = Vec3::new(params[0], params[1], params[2]);
        let reference = rodrigues(&w);
        let diff = (t.rotation() - reference).norm();
        prop_assert!(diff < 1e-9, "rotation differs from Rodrigues by {diff:e}");
    }

    #[test]
    fn chart_round_trip_preserves_the_action(
        params in arb_params(),
        p in arb_point(),
    ) {
        let t = params_to_transform(&params);
        let recovered = transform_to_params(&t).unwrap();
        let t2 = params_to_transform(&recovered);
        prop_assert!((t.apply(&p) - t2.apply(&p)).norm() < 1e-9);
    }

    #[test]
    fn chart_round_trip_recovers_parameters(params in arb_params()) {
        let recovered = transform_to_params(&params_to_transform(&params)).unwrap();
        // Below pi the rotation-vector chart is injective, so the raw
        // parameters themselves must come back, not just the action.
        prop_assert!((params - recovered).norm() < 1e-9);
    }
}

#[test]
fn long_composition_chains_stay_orthonormal() {
    let mut rng = common::rng(42);
    let step = common::random_transform(&mut rng, 0.01, 0.01);
    let mut acc = RigidTransform::identity();
    for _ in 0..10_000 {
        acc = step.compose(&acc);
    }
    let r = acc.rotation();
    let defect = (r.transpose() * r - Mat3::identity()).norm();
    assert!(
        defect < 1e-12,
        "drift after 10k compositions: {defect:e}"
    );
    assert!((r.determinant() - 1.0).abs() < 1e-12);
}

#[test]
fn half_turn_rotations_refuse_the_chart() {
    // Rotation by exactly pi about z: the chart boundary.
    let r = Mat3::new(-1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, 1.0);
    let t = RigidTransform::new(r, Vec3::zeros());
    assert!(matches!(
        transform_to_params(&t),
        Err(ppcr::Error::OutOfChart(_))
    ));
}

#[test]
fn renormalization_is_idempotent_on_clean_rotations() {
    let mut rng = common::rng(7);
    let cloud: PointCloud = common::uniform_cloud(32, 7);
    for _ in 0..20 {
        let t = common::random_transform(&mut rng, 3.0, 5.0);
        let renormalized = RigidTransform::new(
            ppcr::geometry::nearest_orthonormal(t.rotation()),
            *t.translation(),
        );
        assert!(max_action_distance(&t, &renormalized, &cloud) < 1e-12);
    }
}
