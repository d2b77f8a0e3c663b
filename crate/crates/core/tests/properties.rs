use nalgebra::{Matrix3, Point2, Vector3};
use proptest::prelude::*;

use posekit::evalharness::{synth_scene, SynthConfig};
use posekit::geometry::{
    decompose_essential, essential_from_pose, rotation_from_axis_angle, rotation_geodesic_error, sampson_distance,
    translation_direction_error, CameraIntrinsics, Correspondence, EssentialMatrix, PoseRecord, RelativePose,
};
use posekit::multiview::{reconstruct, PairMatches, ReconstructConfig, SceneMap};

fn axis() -> impl Strategy<Value = Vector3<f64>> {
    (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64)
        .prop_map(|(x, y, z)| Vector3::new(x, y, z))
        .prop_filter("non-zero axis", |v| v.norm() > 0.1)
}

fn rotation() -> impl Strategy<Value = Matrix3<f64>> {
    (axis(), 0.0..std::f64::consts::PI).prop_map(|(a, t)| rotation_from_axis_angle(&a, t))
}

fn point() -> impl Strategy<Value = Point2<f64>> {
    (-1.0..1.0f64, -1.0..1.0f64).prop_map(|(x, y)| Point2::new(x, y))
}

proptest! {
    #![proptest_config(ProptestConfig { failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn geodesic_error_is_a_symmetric_angle(a in rotation(), b in rotation()) {
        let ab = rotation_geodesic_error(&a, &b);
        let ba = rotation_geodesic_error(&b, &a);
        prop_assert!((0.0..=180.0).contains(&ab));
        prop_assert!((ab - ba).abs() < 1e-9);
        prop_assert!(rotation_geodesic_error(&a, &a) < 1e-6);
    }

    #[test]
    fn geodesic_error_is_invariant_to_a_common_rotation(a in rotation(), b in rotation(), c in rotation()) {
        let direct = rotation_geodesic_error(&a, &b);
        let shifted = rotation_geodesic_error(&(c * a), &(c * b));
        prop_assert!((direct - shifted).abs() < 1e-7);
    }

    #[test]
    fn translation_error_ignores_scale(t in axis(), u in axis(), s in 0.1..10.0f64) {
        let e = translation_direction_error(&t, &u);
        prop_assert!((0.0..=180.0).contains(&e));
        prop_assert!((translation_direction_error(&(t * s), &u) - e).abs() < 1e-9);
        prop_assert!((translation_direction_error(&(-t), &u) - (180.0 - e)).abs() < 1e-9);
    }

    #[test]
    fn sampson_distance_is_swap_symmetric(r in rotation(), t in axis(), a in point(), b in point()) {
        let pose = RelativePose::up_to_scale(r, t).unwrap();
        let e = EssentialMatrix::project(&essential_from_pose(&pose)).unwrap();
        let c = Correspondence::new(a, b);
        let d = sampson_distance(&e, &c);
        let d_swap = sampson_distance(&e.transpose(), &c.swapped());
        prop_assert!(d >= 0.0);
        prop_assert!((d - d_swap).abs() <= 1e-12 * (1.0 + d));
    }

    #[test]
    fn decomposition_contains_the_generator(r in rotation(), t in axis()) {
        let pose = RelativePose::up_to_scale(r, t).unwrap();
        let e = EssentialMatrix::project(&essential_from_pose(&pose)).unwrap();
        let hits = decompose_essential(&e)
            .iter()
            .filter(|c| (c.r() - pose.r()).norm() < 1e-6 && (c.t() - pose.t()).norm() < 1e-6)
            .count();
        prop_assert_eq!(hits, 1);
    }

    #[test]
    fn intrinsics_round_trip(fx in 100.0..2000.0f64, fy in 100.0..2000.0f64, skew in -5.0..5.0f64,
                             x in 0.0..1280.0f64, y in 0.0..960.0f64) {
        let k = CameraIntrinsics::new(fx, fy, 640.0, 480.0, skew).unwrap();
        let px = Point2::new(x, y);
        let back = k.to_pixel(&k.unproject(&px));
        prop_assert!((back - px).norm() < 1e-9);
    }

    #[test]
    fn pose_record_round_trip(r in rotation(), t in axis()) {
        let pose = RelativePose::metric(r, t).unwrap();
        let rec = PoseRecord::from(&pose);
        let json = serde_json::to_string(&rec).unwrap();
        let back: PoseRecord = serde_json::from_str(&json).unwrap();
        prop_assert_eq!(back, rec);
        prop_assert!((back.rotation() - r).norm() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 8, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn reconstructed_maps_survive_serialization(seed in 0u64..1000) {
        let scene = synth_scene(&SynthConfig { n_views: 3, n_points: 60, noise_px: 0.5, seed, ..SynthConfig::default() }).unwrap();
        let views: Vec<_> = (0..3).map(|i| (format!("view_{i}"), *scene.intrinsics())).collect();
        let matches: Vec<_> = scene
            .pairs
            .iter()
            .map(|p| PairMatches {
                view_a: format!("view_{}", p.view_a),
                view_b: format!("view_{}", p.view_b),
                corrs: p.correspondences(),
            })
            .collect();
        let rec = reconstruct(&views, &matches, &ReconstructConfig::default()).unwrap();
        rec.map.validate().unwrap();
        let json = serde_json::to_string(&rec.map.to_record()).unwrap();
        let back = SceneMap::from_record(&serde_json::from_str(&json).unwrap()).unwrap();
        prop_assert_eq!(back, rec.map);
    }
}
