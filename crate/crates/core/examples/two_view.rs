//! Relative pose from noisy matches with outliers, compared with ground truth.

use posekit::evalharness::{inlier_stats, synth_scene, SynthConfig};
use posekit::geometry::{rotation_geodesic_error, translation_direction_error, two_view_pose, RansacConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let scene = synth_scene(&SynthConfig { noise_px: 0.5, outlier_ratio: 0.5, seed: 7, ..SynthConfig::default() })?;
    let pair = scene.pair(0, 1).expect("two-view scene");
    let k = scene.intrinsics();

    // 3 sigma of the pixel noise, in normalized units.
    let cfg = RansacConfig::default().with_seed(1).with_threshold(3.0 * 0.5 / k.fx);
    let est = two_view_pose(&pair.correspondences(), k, k, &cfg)?;

    let gt = scene.relative_pose(0, 1);
    let stats = inlier_stats(&est.inlier_mask, &pair.inlier_labels)?;
    println!("matches: {}, inliers: {}, iterations: {}", pair.matches.len(), est.inlier_count(), est.iterations_used);
    println!("rotation error: {:.4} deg", rotation_geodesic_error(est.pose.r(), gt.r()));
    println!("translation direction error: {:.4} deg", translation_direction_error(est.pose.t(), gt.t()));
    println!("inlier recall {:.3}, false inlier rate {:.3}", stats.recall(), stats.false_inlier_rate());
    Ok(())
}
