use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::camera::{normalize_correspondences, CameraIntrinsics, Correspondence};
use super::essential::{estimate_essential_8pt, refine_essential, sampson_distance, EssentialMatrix};
use super::GeometryError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RansacConfig {
    pub max_iterations: usize,
    /// Residual cutoff in normalized image coordinates (Sampson distance for
    /// essential estimation, reprojection distance for PnP).
    pub inlier_threshold: f64,
    /// Probability of having drawn an all-inlier sample, used for early stopping.
    pub confidence: f64,
    pub seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self { max_iterations: 2048, inlier_threshold: 1e-3, confidence: 0.999, seed: 0 }
    }
}

impl RansacConfig {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_threshold(mut self, threshold: f64) -> Self {
        self.inlier_threshold = threshold;
        self
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if self.max_iterations == 0 {
            return Err(GeometryError::InvalidConfig("max_iterations must be positive".into()));
        }
        if !(self.inlier_threshold > 0.0) || !self.inlier_threshold.is_finite() {
            return Err(GeometryError::InvalidConfig("inlier_threshold must be positive".into()));
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(GeometryError::InvalidConfig("confidence must lie in (0, 1)".into()));
        }
        Ok(())
    }

    pub(crate) fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed)
    }
}

/// Iterations needed to draw one clean sample of `sample_size` with the given
/// confidence, when `inlier_ratio` of the data are inliers.
pub(crate) fn required_iterations(confidence: f64, inlier_ratio: f64, sample_size: usize) -> usize {
    let clean = inlier_ratio.powi(sample_size as i32);
    if clean >= 1.0 {
        return 1;
    }
    if clean <= 0.0 {
        return usize::MAX;
    }
    let n = (1.0 - confidence).ln() / (1.0 - clean).ln();
    if n.is_finite() {
        n.ceil().max(1.0) as usize
    } else {
        usize::MAX
    }
}

/// Model score: more inliers first, then smaller total inlier residual.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Score {
    pub inliers: usize,
    pub residual: f64,
}

impl Score {
    pub fn better_than(&self, other: &Score) -> bool {
        self.inliers > other.inliers || (self.inliers == other.inliers && self.residual < other.residual)
    }
}

#[derive(Debug, Clone)]
pub struct RansacEssential {
    pub essential: EssentialMatrix,
    pub inlier_mask: Vec<bool>,
    pub iterations_used: usize,
}

impl RansacEssential {
    pub fn inlier_count(&self) -> usize {
        self.inlier_mask.iter().filter(|&&b| b).count()
    }
}

fn score_essential(e: &EssentialMatrix, corrs: &[Correspondence], threshold: f64) -> (Score, Vec<bool>) {
    let mut score = Score { inliers: 0, residual: 0.0 };
    let mask = corrs
        .iter()
        .map(|c| {
            let d = sampson_distance(e, c);
            let inlier = d < threshold;
            if inlier {
                score.inliers += 1;
                score.residual += d;
            }
            inlier
        })
        .collect();
    (score, mask)
}

/// Refits of a new best hypothesis on its consensus set, taken at a widened
/// then shrinking threshold: the linear 8-point solution and a nonlinear
/// Sampson refinement. A refit replaces the model only when it scores better
/// at the base threshold.
fn local_optimize(
    mut e: EssentialMatrix,
    mut score: Score,
    mut mask: Vec<bool>,
    corrs: &[Correspondence],
    threshold: f64,
) -> (EssentialMatrix, Score, Vec<bool>) {
    const WIDEN: [f64; 4] = [4.0, 2.0, 1.0, 1.0];
    const LO_ITERS: usize = 10;
    if score.inliers < 8 {
        return (e, score, mask);
    }
    for w in WIDEN {
        let support: Vec<Correspondence> =
            corrs.iter().filter(|c| sampson_distance(&e, c) < w * threshold).copied().collect();
        let mut fits = vec![refine_essential(&e, &support, LO_ITERS)];
        fits.extend(estimate_essential_8pt(&support));
        for refit in fits {
            let (s, m) = score_essential(&refit, corrs, threshold);
            if s.better_than(&score) {
                e = refit;
                score = s;
                mask = m;
            }
        }
    }
    (e, score, mask)
}

/// Robust essential matrix from pixel correspondences.
pub fn ransac_essential(
    corrs: &[Correspondence],
    k_support: &CameraIntrinsics,
    k_target: &CameraIntrinsics,
    cfg: &RansacConfig,
) -> Result<RansacEssential, GeometryError> {
    let normalized = normalize_correspondences(corrs, k_support, k_target);
    ransac_essential_normalized(&normalized, cfg)
}

/// Same as [`ransac_essential`] for correspondences already in normalized coordinates.
pub fn ransac_essential_normalized(
    corrs: &[Correspondence],
    cfg: &RansacConfig,
) -> Result<RansacEssential, GeometryError> {
    const SAMPLE: usize = 8;
    const SAMPLE_REFINE_ITERS: usize = 5;
    cfg.validate()?;
    let n = corrs.len();
    if n < SAMPLE {
        return Err(GeometryError::TooFewCorrespondences { needed: SAMPLE, got: n });
    }
    if let Some(i) = corrs.iter().position(|c| !c.is_finite()) {
        return Err(GeometryError::NonFinite(format!("correspondence {i}")));
    }

    let mut rng = cfg.rng();
    let mut best: Option<(EssentialMatrix, Score, Vec<bool>)> = None;
    let mut budget = cfg.max_iterations;
    let mut iterations = 0;
    let mut sample = Vec::with_capacity(SAMPLE);
    while iterations < budget.min(cfg.max_iterations) {
        iterations += 1;
        sample.clear();
        sample.extend(rand::seq::index::sample(&mut rng, n, SAMPLE).into_iter().map(|i| corrs[i]));
        let Ok(e) = estimate_essential_8pt(&sample) else {
            continue;
        };
        // The linear solution ignores the essential constraints; pull it back
        // onto the manifold against its own sample before scoring.
        let e = refine_essential(&e, &sample, SAMPLE_REFINE_ITERS);
        let (score, mask) = score_essential(&e, corrs, cfg.inlier_threshold);
        if best.as_ref().is_none_or(|(_, s, _)| score.better_than(s)) {
            let (e, score, mask) = local_optimize(e, score, mask, corrs, cfg.inlier_threshold);
            budget = required_iterations(cfg.confidence, score.inliers as f64 / n as f64, SAMPLE);
            best = Some((e, score, mask));
        }
    }

    let Some((mut e, mut score, mut mask)) = best.filter(|(_, s, _)| s.inliers >= SAMPLE) else {
        return Err(GeometryError::NoConsensus);
    };

    // Re-fit on the consensus set; keep the refit while it does not lose inliers.
    for _ in 0..3 {
        let inliers: Vec<_> = corrs.iter().zip(&mask).filter_map(|(c, &m)| m.then_some(*c)).collect();
        let Ok(refit) = estimate_essential_8pt(&inliers) else {
            break;
        };
        let (refit_score, refit_mask) = score_essential(&refit, corrs, cfg.inlier_threshold);
        if refit_score.inliers < score.inliers {
            break;
        }
        let same = refit_mask == mask;
        e = refit;
        score = refit_score;
        mask = refit_mask;
        if same {
            break;
        }
    }

    Ok(RansacEssential { essential: e, inlier_mask: mask, iterations_used: iterations })
}
