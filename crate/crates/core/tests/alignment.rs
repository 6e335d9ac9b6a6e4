use proptest::prelude::*;
use wsdesc_core::alignment::{
    fit_affine_weighted, kabsch_rigid, registration_loss, WeightedCorrMatrices, DEFAULT_DAMPING,
};
use wsdesc_core::pointcloud::{RigidTransform, Transform3};
use wsdesc_core::Vec3;

fn point() -> impl Strategy<Value = Vec3> {
    (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64).prop_map(|(x, y, z)| Vec3::new(x, y, z))
}

fn rigid() -> impl Strategy<Value = RigidTransform> {
    (point(), point()).prop_map(|(a, t)| RigidTransform::from_euler_xyz_deg(a * 180.0, t * 2.0))
}

/// Volume spanned by the first four points, to keep away from coplanar draws.
fn spread(pts: &[Vec3]) -> f64 {
    let (a, b, c) = (pts[1] - pts[0], pts[2] - pts[0], pts[3] - pts[0]);
    a.cross(&b).dot(&c).abs()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn exact_correspondences_give_zero_loss(
        t in rigid(),
        src in prop::collection::vec(point(), 4..30),
        w in prop::collection::vec(0.1..1.0f64, 30),
    ) {
        prop_assume!(spread(&src) > 1e-2);
        let dst: Vec<Vec3> = src.iter().map(|p| t.apply_point(p)).collect();
        let w = w[..src.len()].to_vec();
        let fwd = fit_affine_weighted(&WeightedCorrMatrices::new(src.clone(), dst.clone(), w.clone()).unwrap(), 0.0).unwrap();
        let bwd = fit_affine_weighted(&WeightedCorrMatrices::new(dst, src.clone(), w.clone()).unwrap(), 0.0).unwrap();
        prop_assert!((fwd.matrix - t.rotation()).amax() < 1e-8);
        prop_assert!((fwd.translation - t.translation()).amax() < 1e-8);
        prop_assert!(registration_loss(&fwd, &bwd, 1.0, 1.0).l_pcr < 1e-7);
    }

    #[test]
    fn loss_is_non_negative(
        src in prop::collection::vec(point(), 6..20),
        dst in prop::collection::vec(point(), 20),
        w in prop::collection::vec(0.1..1.0f64, 20),
    ) {
        let n = src.len();
        let m = WeightedCorrMatrices::new(src.clone(), dst[..n].to_vec(), w[..n].to_vec()).unwrap();
        let back = WeightedCorrMatrices::new(dst[..n].to_vec(), src, w[..n].to_vec()).unwrap();
        let fwd = fit_affine_weighted(&m, DEFAULT_DAMPING).unwrap();
        let bwd = fit_affine_weighted(&back, DEFAULT_DAMPING).unwrap();
        let r = registration_loss(&fwd, &bwd, 1.0, 1.0);
        prop_assert!(r.l_o >= 0.0 && r.l_c >= 0.0);
        prop_assert!((r.l_pcr - r.l_o - r.l_c).abs() < 1e-9 * (1.0 + r.l_pcr));
    }

    #[test]
    fn kabsch_recovers_rigid_maps(t in rigid(), src in prop::collection::vec(point(), 4..30)) {
        prop_assume!(spread(&src) > 1e-2);
        let dst: Vec<Vec3> = src.iter().map(|p| t.apply_point(p)).collect();
        let est = kabsch_rigid(&src, &dst, &vec![1.0; src.len()]).unwrap();
        prop_assert!((est.rotation() - t.rotation()).amax() < 1e-8, "{}", (est.rotation() - t.rotation()).amax());
        prop_assert!((est.translation() - t.translation()).norm() < 1e-8);
    }
}

#[test]
fn too_few_weights_are_rejected() {
    let src = vec![Vec3::x(), Vec3::y(), Vec3::z(), Vec3::zeros()];
    assert!(WeightedCorrMatrices::new(src.clone(), src.clone(), vec![1.0, 1.0, 1.0, 0.0]).is_err());
    assert!(WeightedCorrMatrices::new(src.clone(), src[..3].to_vec(), vec![1.0; 4]).is_err());
}
