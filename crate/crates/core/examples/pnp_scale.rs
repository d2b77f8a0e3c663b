//! Metric scale from a prompt box, then absolute pose of a third view against
//! the support-frame points.

use posekit::evalharness::{synth_scene, SynthConfig};
use posekit::geometry::{
    pnp_solve, projected_bbox, recover_translation_scale, rotation_geodesic_error, two_view_pose, BBox, RansacConfig,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let scene = synth_scene(&SynthConfig { n_views: 3, seed: 11, ..SynthConfig::default() })?;
    let k = scene.intrinsics();
    let cfg = RansacConfig::default().with_seed(0);

    let pair = scene.pair(0, 1).expect("pair 0-1");
    let tv = two_view_pose(&pair.correspondences(), k, k, &cfg)?;

    // s is the ratio of the projected cloud diagonal to the prompt diagonal.
    let cloud_box = projected_bbox(&tv.cloud.points, k).expect("cloud in front of the support camera");
    for factor in [1.0, 2.0, 0.5] {
        let prompt = BBox::new(cloud_box.x, cloud_box.y, cloud_box.w * factor, cloud_box.h * factor);
        let scaled = recover_translation_scale(&tv.pose, &tv.cloud, &prompt, k)?;
        println!(
            "prompt diagonal {:7.1} px -> s = {:.3}, |t| = {:.3}",
            prompt.diagonal(),
            scaled.scale,
            scaled.pose.t().norm()
        );
    }

    // Third view: ground-truth points in the support frame against its pixels.
    let pts3d: Vec<_> = scene.gt_points.iter().map(|p| scene.gt_poses[0].transform(&p.coords).into()).collect();
    let pnp = pnp_solve(&pts3d, &scene.observations[2], k, &RansacConfig::default().with_seed(0).with_threshold(5e-3))?;
    let gt = scene.relative_pose(0, 2);
    println!(
        "pnp: {} inliers, rotation error {:.2e} deg, translation error {:.2e}",
        pnp.inlier_mask.iter().filter(|&&m| m).count(),
        rotation_geodesic_error(pnp.pose.r(), gt.r()),
        (pnp.pose.t() - gt.t()).norm()
    );
    Ok(())
}
