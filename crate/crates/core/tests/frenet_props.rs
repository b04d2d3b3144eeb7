mod common;

use chainspec::frenet::{
    canonical_frame, canonicalize, extract_angles, rotation_matrix_3d, synthesize_curve, Pose,
};
use common::*;
use nalgebra::{Matrix3, Vector2, Vector3};
use proptest::prelude::*;
use rand::Rng;

fn check_spacing<const D: usize>(curve: &chainspec::frenet::DiscreteCurve<D>, delta: f64) {
    for d in curve.spacings() {
        assert!(((d - delta) / delta).abs() < 1e-12, "spacing {d} vs {delta}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn planar_round_trip(seed in any::<u64>(), m in 3usize..60, delta in 0.1f64..10.0) {
        let mut r = rng(seed);
        let j0 = r.random_range(1..m);
        let angles = planar_angles(&mut r, m);
        let pose = planar_pose(&mut r, j0);
        let curve = synthesize_curve(&angles, &pose, delta).unwrap();
        check_spacing(&curve, delta);
        let (back, back_pose) = extract_angles(&curve, j0).unwrap();
        prop_assert!(max_angle_gap(back.theta(), angles.theta()) < 1e-9);
        prop_assert!((back_pose.position - pose.position).amax() < 1e-9);
        prop_assert!((back_pose.frame - pose.frame).amax() < 1e-9);
        let again = synthesize_curve(&back, &back_pose, delta).unwrap();
        prop_assert!(max_point_distance(&curve, &again) < 1e-9);
    }

    #[test]
    fn spatial_round_trip(seed in any::<u64>(), m in 3usize..60, delta in 0.1f64..10.0) {
        let mut r = rng(seed);
        let j0 = r.random_range(1..m);
        let angles = spatial_angles(&mut r, m);
        let pose = spatial_pose(&mut r, j0);
        let curve = synthesize_curve(&angles, &pose, delta).unwrap();
        check_spacing(&curve, delta);
        let (back, back_pose) = extract_angles(&curve, j0).unwrap();
        let canon = canonicalize(&angles);
        prop_assert!(max_angle_gap(back.theta(), canon.theta()) < 1e-9);
        prop_assert!(max_angle_gap(back.psi().unwrap(), canon.psi().unwrap()) < 1e-9);
        prop_assert!((back_pose.position - pose.position).amax() < 1e-9);
        // the tangent row of the frame is fixed by the points
        prop_assert!((back_pose.frame.row(2) - pose.frame.row(2)).amax() < 1e-9);
        if j0 == 1 {
            prop_assert!((back_pose.frame - canonical_frame(&angles, &pose.frame)).amax() < 1e-9);
        }
        let again = synthesize_curve(&back, &back_pose, delta).unwrap();
        prop_assert!(max_point_distance(&curve, &again) < 1e-9);
    }

    #[test]
    fn canonical_angles_are_fixed_points(seed in any::<u64>(), m in 3usize..40) {
        let mut r = rng(seed);
        let canon = canonicalize(&spatial_angles(&mut r, m));
        let j0 = r.random_range(1..m);
        let pose = spatial_pose(&mut r, j0);
        let curve = synthesize_curve(&canon, &pose, 1.0).unwrap();
        let (back, back_pose) = extract_angles(&curve, j0).unwrap();
        prop_assert!(max_angle_gap(back.theta(), canon.theta()) < 1e-9);
        prop_assert!(max_angle_gap(back.psi().unwrap(), canon.psi().unwrap()) < 1e-9);
        if j0 > 1 {
            prop_assert!((back_pose.frame - pose.frame).amax() < 1e-9);
        }
    }

    #[test]
    fn planar_rigid_motion_invariance(seed in any::<u64>(), m in 3usize..40) {
        let mut r = rng(seed);
        let j0 = r.random_range(1..m);
        let curve = synthesize_curve(&planar_angles(&mut r, m), &planar_pose(&mut r, j0), 2.0).unwrap();
        let q = chainspec::datasets::random_rotation_2d(&mut r);
        let v = Vector2::new(r.random_range(-20.0..20.0), r.random_range(-20.0..20.0));
        let moved = curve.transformed(&q, &v);
        let (a, p) = extract_angles(&curve, j0).unwrap();
        let (b, pm) = extract_angles(&moved, j0).unwrap();
        prop_assert!(max_angle_gap(a.theta(), b.theta()) < 1e-9);
        prop_assert!((pm.position - (q * p.position + v)).amax() < 1e-9);
        // frames hold the axes as rows, so they compose with Qᵀ on the right
        prop_assert!((pm.frame - p.frame * q.transpose()).amax() < 1e-9);
    }

    #[test]
    fn spatial_rigid_motion_invariance(seed in any::<u64>(), m in 3usize..40) {
        let mut r = rng(seed);
        let j0 = r.random_range(1..m);
        let curve = synthesize_curve(&spatial_angles(&mut r, m), &spatial_pose(&mut r, j0), 3.8).unwrap();
        let q = chainspec::datasets::random_rotation_3d(&mut r);
        let v = Vector3::from_fn(|_, _| r.random_range(-20.0..20.0));
        let moved = curve.transformed(&q, &v);
        let (a, p) = extract_angles(&curve, j0).unwrap();
        let (b, pm) = extract_angles(&moved, j0).unwrap();
        prop_assert!(max_angle_gap(a.theta(), b.theta()) < 1e-9);
        prop_assert!(max_angle_gap(a.psi().unwrap(), b.psi().unwrap()) < 1e-9);
        prop_assert!((pm.position - (q * p.position + v)).amax() < 1e-9);
        prop_assert!((pm.frame - p.frame * q.transpose()).amax() < 1e-9);
    }

    #[test]
    fn step_rotation_is_special_orthogonal(theta in -10.0f64..10.0, psi in -10.0f64..10.0) {
        let r = rotation_matrix_3d(theta, psi);
        prop_assert!((r.transpose() * r - Matrix3::identity()).amax() < 1e-12);
        prop_assert!((r.determinant() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn identity_pose_round_trip_at_every_anchor() {
    let mut r = rng(11);
    let angles = spatial_angles(&mut r, 12);
    for j0 in 2..12 {
        let curve = synthesize_curve(&canonicalize(&angles), &Pose::<3>::identity(j0), 1.5).unwrap();
        let (back, pose) = extract_angles(&curve, j0).unwrap();
        assert!((pose.frame - Matrix3::identity()).amax() < 1e-9);
        assert!(max_angle_gap(back.theta(), canonicalize(&angles).theta()) < 1e-9);
    }
}
