use nalgebra::Point2;

use super::camera::{normalize_correspondences, CameraIntrinsics, Correspondence};
use super::essential::{decompose_essential, sampson_distance, EssentialMatrix};
use super::pose::RelativePose;
use super::ransac::{ransac_essential_normalized, RansacConfig};
use super::triangulate::{depths, select_cheirality, triangulate_point, TriangulatedCloud};
use super::GeometryError;

#[derive(Debug, Clone)]
pub struct TwoViewResult {
    /// Support-to-target pose with unit translation.
    pub pose: RelativePose,
    /// Inliers triangulated in the support frame, in front of both cameras.
    pub cloud: TriangulatedCloud,
    pub inlier_mask: Vec<bool>,
    pub essential: EssentialMatrix,
    pub iterations_used: usize,
    /// Sampson distances of the inliers (normalized units).
    pub inlier_residuals: Vec<f64>,
}

impl TwoViewResult {
    pub fn inlier_count(&self) -> usize {
        self.inlier_mask.iter().filter(|&&b| b).count()
    }
}

/// Relative pose between two calibrated views from pixel correspondences:
/// normalize, robust essential estimate, decomposition, cheirality vote on the
/// inliers, then triangulation of the inliers.
pub fn two_view_pose(
    corrs: &[Correspondence],
    k_support: &CameraIntrinsics,
    k_target: &CameraIntrinsics,
    cfg: &RansacConfig,
) -> Result<TwoViewResult, GeometryError> {
    let normalized = normalize_correspondences(corrs, k_support, k_target);
    let ransac = ransac_essential_normalized(&normalized, cfg)?;
    let inliers: Vec<(usize, Correspondence)> =
        normalized.iter().enumerate().filter(|(i, _)| ransac.inlier_mask[*i]).map(|(i, c)| (i, *c)).collect();
    let inlier_corrs: Vec<Correspondence> = inliers.iter().map(|(_, c)| *c).collect();

    let candidates = decompose_essential(&ransac.essential);
    let choice = select_cheirality(&candidates, &inlier_corrs)?;
    let pose = choice.pose;

    let mut cloud = TriangulatedCloud::default();
    for (i, c) in &inliers {
        if let Ok(p) = triangulate_point(&pose, c) {
            let (za, zb) = depths(&pose, &p);
            if za > 0.0 && zb > 0.0 {
                cloud.push(p, *i);
            }
        }
    }
    let inlier_residuals = inlier_corrs.iter().map(|c| sampson_distance(&ransac.essential, c)).collect();

    Ok(TwoViewResult {
        pose,
        cloud,
        inlier_mask: ransac.inlier_mask,
        essential: ransac.essential,
        iterations_used: ransac.iterations_used,
        inlier_residuals,
    })
}

/// Convenience for building correspondences from two parallel point lists.
pub fn zip_correspondences(a: &[Point2<f64>], b: &[Point2<f64>]) -> Vec<Correspondence> {
    a.iter().zip(b).map(|(a, b)| Correspondence::new(*a, *b)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::pose::{rotation_from_axis_angle, rotation_geodesic_error, translation_direction_error};
    use crate::geometry::test_support::{random_pose, random_scene_points};
    use nalgebra::{Matrix3, Vector3};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn to_pixels(k: &CameraIntrinsics, corrs: &[Correspondence]) -> Vec<Correspondence> {
        corrs.iter().map(|c| Correspondence::new(k.to_pixel(&c.a), k.to_pixel(&c.b))).collect()
    }

    #[test]
    fn noiseless_recovers_generator() {
        let k = CameraIntrinsics::simple(800.0, 800.0, 320.0, 240.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for _ in 0..10 {
            let pose = random_pose(&mut rng, 30.0);
            let (_, corrs) = random_scene_points(&pose, 60, &mut rng);
            let px = to_pixels(&k, &corrs);
            let out = two_view_pose(&px, &k, &k, &RansacConfig::default()).unwrap();
            assert!(rotation_geodesic_error(out.pose.r(), pose.r()) < 1e-6);
            assert!(translation_direction_error(out.pose.t(), pose.t()) < 1e-6);
            assert!(!out.pose.scaled());
            assert_eq!(out.cloud.len(), 60);
        }
    }

    #[test]
    fn zero_baseline_fails() {
        let k = CameraIntrinsics::simple(800.0, 800.0, 320.0, 240.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let pose = random_pose(&mut rng, 10.0);
        let (_, corrs) = random_scene_points(&pose, 50, &mut rng);
        let same: Vec<_> = corrs.iter().map(|c| Correspondence::new(c.a, c.a)).collect();
        let err = two_view_pose(&to_pixels(&k, &same), &k, &k, &RansacConfig::default()).unwrap_err();
        assert!(matches!(err, GeometryError::Degenerate(_) | GeometryError::NoConsensus));
    }

    #[test]
    fn equivariant_under_target_rotation() {
        let k = CameraIntrinsics::simple(800.0, 800.0, 320.0, 240.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let pose = random_pose(&mut rng, 20.0);
        let (pts, _) = random_scene_points(&pose, 60, &mut rng);
        let q = rotation_from_axis_angle(&Vector3::new(0.2, 1.0, -0.3), 0.15);
        let rotated = RelativePose::new(q * pose.r(), q * pose.t(), false).unwrap();
        let project = |p: &RelativePose| -> Vec<Correspondence> {
            pts.iter()
                .map(|x| {
                    let b = p.transform(&x.coords);
                    Correspondence::new(
                        k.to_pixel(&Point2::new(x.x / x.z, x.y / x.z)),
                        k.to_pixel(&Point2::new(b.x / b.z, b.y / b.z)),
                    )
                })
                .collect()
        };
        let a = two_view_pose(&project(&pose), &k, &k, &RansacConfig::default()).unwrap();
        let b = two_view_pose(&project(&rotated), &k, &k, &RansacConfig::default()).unwrap();
        let qa: Matrix3<f64> = q * a.pose.r();
        assert!(rotation_geodesic_error(b.pose.r(), &qa) < 1e-6);
    }

    #[test]
    fn deterministic() {
        let k = CameraIntrinsics::simple(800.0, 800.0, 320.0, 240.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        let pose = random_pose(&mut rng, 20.0);
        let (_, corrs) = random_scene_points(&pose, 40, &mut rng);
        let px = to_pixels(&k, &corrs);
        let cfg = RansacConfig::default().with_seed(5);
        let a = two_view_pose(&px, &k, &k, &cfg).unwrap();
        let b = two_view_pose(&px, &k, &k, &cfg).unwrap();
        assert_eq!(a.pose.r().as_slice(), b.pose.r().as_slice());
        assert_eq!(a.pose.t().as_slice(), b.pose.t().as_slice());
        assert_eq!(a.cloud, b.cloud);
    }
}
