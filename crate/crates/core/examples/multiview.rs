//! Registers an eight-view scene into one map and refines it.

use posekit::evalharness::{synth_scene, SynthConfig};
use posekit::multiview::{reconstruct, reprojection_rms, view_pose_errors, PairMatches, ReconstructConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let scene = synth_scene(&SynthConfig { n_views: 8, noise_px: 1.0, seed: 5, ..SynthConfig::default() })?;
    let name = |i: usize| format!("view_{i}");
    let views: Vec<_> = (0..8).map(|i| (name(i), *scene.intrinsics())).collect();
    let matches: Vec<_> = scene
        .pairs
        .iter()
        .map(|p| PairMatches { view_a: name(p.view_a), view_b: name(p.view_b), corrs: p.correspondences() })
        .collect();

    let rec = reconstruct(&views, &matches, &ReconstructConfig::default())?;
    println!("initial pair {:?}, registration order {:?}", rec.initial_pair, rec.registered);
    println!(
        "refinement: cost {:.3} -> {:.3} in {} iterations, rms {:.3} px",
        rec.refine.initial_cost,
        rec.refine.final_cost,
        rec.refine.iterations,
        reprojection_rms(&rec.map)
    );

    let gt: Vec<_> = scene.gt_poses.iter().enumerate().map(|(i, p)| (name(i), *p)).collect();
    for e in view_pose_errors(&rec.map, &gt) {
        println!(
            "{}: rotation {:.3} deg, translation {:.3} deg",
            e.view_id, e.rotation_error_deg, e.translation_error_deg
        );
    }
    Ok(())
}
