//! Rotation-error metrics over a batch of two-view trials, grouped by the
//! ground-truth rotation magnitude.

use nalgebra::Matrix3;
use posekit::evalharness::{compute_grouped_metrics, compute_pose_metrics, synth_scene, two_view_trial, SynthConfig};
use posekit::geometry::{rotation_geodesic_error, RansacConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut errors = Vec::new();
    let mut grouped = Vec::new();
    for seed in 0..40 {
        let scene = synth_scene(&SynthConfig {
            noise_px: 1.0,
            outlier_ratio: 0.3,
            rotation_range_deg: 60.0,
            seed,
            ..SynthConfig::default()
        })?;
        let cfg = RansacConfig::default().with_seed(seed).with_threshold(3.0 / scene.intrinsics().fx);
        let trial = two_view_trial(&scene, 0, 1, &cfg)?;
        let magnitude = rotation_geodesic_error(scene.relative_pose(0, 1).r(), &Matrix3::identity());
        let group = if magnitude < 30.0 { "small" } else { "large" };
        errors.push(trial.rotation_error_deg);
        grouped.push((group, trial.rotation_error_deg));
    }
    let all = compute_pose_metrics(&errors)?;
    println!("all: {}", serde_json::to_string(&all)?);
    for (g, m) in compute_grouped_metrics(grouped)? {
        println!("{g}: median {:.3} deg over {} pairs", m.median_err_deg, m.n_pairs);
    }
    Ok(())
}
