use super::synth::SynthScene;
use super::EvalError;
use crate::geometry::{rotation_geodesic_error, translation_direction_error, two_view_pose, RansacConfig};

/// Confusion counts of an estimated inlier mask against ground-truth labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct InlierStats {
    pub true_inliers: usize,
    pub recovered_inliers: usize,
    pub true_outliers: usize,
    pub accepted_outliers: usize,
}

impl InlierStats {
    pub fn recall(&self) -> f64 {
        ratio(self.recovered_inliers, self.true_inliers)
    }

    /// Fraction of true outliers that were accepted as inliers.
    pub fn false_inlier_rate(&self) -> f64 {
        ratio(self.accepted_outliers, self.true_outliers)
    }

    pub fn merge(&self, other: &InlierStats) -> InlierStats {
        InlierStats {
            true_inliers: self.true_inliers + other.true_inliers,
            recovered_inliers: self.recovered_inliers + other.recovered_inliers,
            true_outliers: self.true_outliers + other.true_outliers,
            accepted_outliers: self.accepted_outliers + other.accepted_outliers,
        }
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

pub fn inlier_stats(mask: &[bool], labels: &[bool]) -> Result<InlierStats, EvalError> {
    if mask.len() != labels.len() {
        return Err(EvalError::ShapeMismatch(format!("{} mask entries for {} labels", mask.len(), labels.len())));
    }
    let mut s = InlierStats::default();
    for (&m, &l) in mask.iter().zip(labels) {
        if l {
            s.true_inliers += 1;
            s.recovered_inliers += usize::from(m);
        } else {
            s.true_outliers += 1;
            s.accepted_outliers += usize::from(m);
        }
    }
    Ok(s)
}

/// Result of running the two-view pipeline on one synthetic pair.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoViewTrial {
    pub rotation_error_deg: f64,
    pub translation_error_deg: f64,
    pub inliers: InlierStats,
}

/// Estimates the pose between views `a < b` of `scene` and scores it against
/// the generator.
pub fn two_view_trial(scene: &SynthScene, a: usize, b: usize, cfg: &RansacConfig) -> Result<TwoViewTrial, EvalError> {
    let pair = scene.pair(a, b).ok_or_else(|| EvalError::InvalidInput(format!("scene has no pair ({a}, {b})")))?;
    let k = scene.intrinsics();
    let est = two_view_pose(&pair.correspondences(), k, k, cfg)?;
    let gt = scene.relative_pose(a, b);
    Ok(TwoViewTrial {
        rotation_error_deg: rotation_geodesic_error(est.pose.r(), gt.r()),
        translation_error_deg: translation_direction_error(est.pose.t(), gt.t()),
        inliers: inlier_stats(&est.inlier_mask, &pair.inlier_labels)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evalharness::{synth_scene, SynthConfig};

    #[test]
    fn counts() {
        let s = inlier_stats(&[true, true, false, true], &[true, false, true, true]).unwrap();
        assert_eq!(s.recall(), 2.0 / 3.0);
        assert_eq!(s.false_inlier_rate(), 1.0);
        assert!(inlier_stats(&[true], &[]).is_err());
    }

    #[test]
    fn noiseless_trial_is_exact() {
        let scene = synth_scene(&SynthConfig { seed: 11, ..Default::default() }).unwrap();
        let t = two_view_trial(&scene, 0, 1, &RansacConfig::default()).unwrap();
        assert!(t.rotation_error_deg < 1e-6, "{}", t.rotation_error_deg);
        assert!(t.translation_error_deg < 1e-6, "{}", t.translation_error_deg);
        assert_eq!(t.inliers.recall(), 1.0);
    }
}
