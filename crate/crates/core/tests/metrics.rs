use proptest::prelude::*;
use wsdesc_core::metrics::{correspondence_rmse, feature_match_recall, inlier_ratio, registration_recall};
use wsdesc_core::pointcloud::RigidTransform;
use wsdesc_core::Vec3;

fn point() -> impl Strategy<Value = Vec3> {
    (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64).prop_map(|(x, y, z)| Vec3::new(x, y, z))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn inlier_ratio_is_a_fraction_and_grows_with_tau(
        pairs in prop::collection::vec((point(), point()), 1..50),
        tau in 0.01..1.0f64,
    ) {
        let id = RigidTransform::identity();
        let small = inlier_ratio(&pairs, &id, tau).unwrap().value;
        let large = inlier_ratio(&pairs, &id, tau * 2.0).unwrap().value;
        prop_assert!((0.0..=1.0).contains(&small));
        prop_assert!(small <= large);
    }

    #[test]
    fn recalls_are_monotone(values in prop::collection::vec(0.0..1.0f64, 1..50), t in 0.01..0.9f64) {
        prop_assert!(feature_match_recall(&values, t).unwrap() >= feature_match_recall(&values, t + 0.05).unwrap());
        prop_assert!(registration_recall(&values, t).unwrap() <= registration_recall(&values, t + 0.05).unwrap());
    }

    #[test]
    fn rmse_of_the_true_map_is_zero(pts in prop::collection::vec(point(), 1..30), shift in point()) {
        let gt = RigidTransform::from_euler_xyz_deg(Vec3::new(10.0, 20.0, 30.0), shift);
        let pairs: Vec<_> = pts.iter().map(|p| (*p, gt.rotation() * p + gt.translation())).collect();
        prop_assert!(correspondence_rmse(&pairs, &gt).unwrap() < 1e-12);
        let off = correspondence_rmse(&pairs, &RigidTransform::identity()).unwrap();
        prop_assert!(off >= 0.0);
    }
}
