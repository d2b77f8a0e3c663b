use std::collections::BTreeMap;

use nalgebra::Matrix3;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::geometry::rotation_geodesic_error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub median_err_deg: f64,
    pub acc30: f64,
    pub acc15: f64,
    pub n_pairs: usize,
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Median error and the fractions strictly below 30 and 15 degrees.
pub fn compute_pose_metrics(errors_deg: &[f64]) -> Result<MetricsReport, EvalError> {
    if errors_deg.is_empty() {
        return Err(EvalError::Empty("error list"));
    }
    if let Some(bad) = errors_deg.iter().find(|e| !e.is_finite()) {
        return Err(EvalError::InvalidInput(format!("non-finite error {bad}")));
    }
    let mut sorted = errors_deg.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let below = |k: f64| sorted.iter().filter(|&&e| e < k).count() as f64 / n;
    Ok(MetricsReport { median_err_deg: median(&sorted), acc30: below(30.0), acc15: below(15.0), n_pairs: sorted.len() })
}

/// Per-group metrics, each computed over the pairs of that group.
pub fn compute_grouped_metrics<'a>(
    errors: impl IntoIterator<Item = (&'a str, f64)>,
) -> Result<BTreeMap<String, MetricsReport>, EvalError> {
    let mut groups: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for (g, e) in errors {
        groups.entry(g.to_string()).or_default().push(e);
    }
    groups.into_iter().map(|(g, errs)| compute_pose_metrics(&errs).map(|m| (g, m))).collect()
}

/// Angle bins for balanced pair sampling; bins are `[lo, hi)` except the last,
/// which also contains `hi`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairSampleSpec {
    pub bins: Vec<(f64, f64)>,
    pub pairs_per_bin: usize,
}

impl PairSampleSpec {
    pub const MAX_ANGLE_DEG: f64 = 30.0;

    /// `n_bins` equal-width bins over `[0, 30]` degrees.
    pub fn uniform(n_bins: usize, pairs_per_bin: usize) -> Self {
        let w = Self::MAX_ANGLE_DEG / n_bins as f64;
        let bins = (0..n_bins)
            .map(|i| {
                let hi = if i + 1 == n_bins { Self::MAX_ANGLE_DEG } else { w * (i + 1) as f64 };
                (w * i as f64, hi)
            })
            .collect();
        Self { bins, pairs_per_bin }
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        let bad = |m: String| Err(EvalError::InvalidConfig(m));
        let Some(first) = self.bins.first() else {
            return bad("at least one bin is required".into());
        };
        if first.0 != 0.0 || self.bins.last().unwrap().1 != Self::MAX_ANGLE_DEG {
            return bad("bins must cover [0, 30] degrees".into());
        }
        for (i, (lo, hi)) in self.bins.iter().enumerate() {
            if !(hi > lo) {
                return bad(format!("bin {i} is empty"));
            }
            if i > 0 && self.bins[i - 1].1 != *lo {
                return bad(format!("bin {i} does not start where bin {} ends", i - 1));
            }
        }
        Ok(())
    }

    pub fn bin_of(&self, angle_deg: f64) -> Option<usize> {
        let last = self.bins.len() - 1;
        self.bins
            .iter()
            .enumerate()
            .position(|(i, &(lo, hi))| angle_deg >= lo && (angle_deg < hi || (i == last && angle_deg <= hi)))
    }
}

/// Draws `pairs_per_bin` view pairs per relative-rotation bin, uniformly among
/// the pairs falling in that bin. Pairs are returned bin by bin with `i < j`.
pub fn sample_balanced_pairs(
    rotations: &[Matrix3<f64>],
    spec: &PairSampleSpec,
    seed: u64,
) -> Result<Vec<(usize, usize)>, EvalError> {
    spec.validate()?;
    let mut per_bin: Vec<Vec<(usize, usize)>> = vec![Vec::new(); spec.bins.len()];
    for i in 0..rotations.len() {
        for j in i + 1..rotations.len() {
            let angle = rotation_geodesic_error(&rotations[j], &rotations[i]);
            if let Some(b) = spec.bin_of(angle) {
                per_bin[b].push((i, j));
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(spec.bins.len() * spec.pairs_per_bin);
    for (b, mut candidates) in per_bin.into_iter().enumerate() {
        if candidates.len() < spec.pairs_per_bin {
            let (lo, hi) = spec.bins[b];
            return Err(EvalError::BinExhausted { lo, hi, available: candidates.len(), needed: spec.pairs_per_bin });
        }
        candidates.shuffle(&mut rng);
        out.extend_from_slice(&candidates[..spec.pairs_per_bin]);
    }
    Ok(out)
}

/// One retrieval query: proposal ids in ranked order plus the correct id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedQuery {
    pub ranking: Vec<usize>,
    pub gt: usize,
}

/// Mean average precision with a single relevant item per query, i.e. the mean
/// reciprocal rank of the ground truth (0 when it is missing).
pub fn retrieval_map(results: &[RankedQuery]) -> Result<f64, EvalError> {
    if results.is_empty() {
        return Err(EvalError::Empty("query list"));
    }
    let total: f64 =
        results.iter().map(|q| q.ranking.iter().position(|&id| id == q.gt).map_or(0.0, |r| 1.0 / (r + 1) as f64)).sum();
    Ok(total / results.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::rotation_from_axis_angle;
    use nalgebra::Vector3;
    use proptest::prelude::*;

    #[test]
    fn hand_counted_metrics() {
        let m = compute_pose_metrics(&[10.0, 20.0, 40.0]).unwrap();
        assert_eq!(m.median_err_deg, 20.0);
        assert_eq!(m.acc30, 2.0 / 3.0);
        assert_eq!(m.acc15, 1.0 / 3.0);
        assert_eq!(m.n_pairs, 3);
    }

    #[test]
    fn zeros_and_thresholds() {
        let m = compute_pose_metrics(&[0.0; 4]).unwrap();
        assert_eq!((m.median_err_deg, m.acc15, m.acc30), (0.0, 1.0, 1.0));
        let m = compute_pose_metrics(&[15.0, 30.0]).unwrap();
        assert_eq!(m.acc15, 0.0);
        assert_eq!(m.acc30, 0.5);
        assert_eq!(m.median_err_deg, 22.5);
        assert!(compute_pose_metrics(&[]).is_err());
        assert!(compute_pose_metrics(&[f64::NAN]).is_err());
    }

    #[test]
    fn grouped_medians() {
        let g = compute_grouped_metrics([("a", 1.0), ("b", 40.0), ("a", 3.0), ("a", 2.0)]).unwrap();
        assert_eq!(g["a"].median_err_deg, 2.0);
        assert_eq!(g["b"].acc30, 0.0);
    }

    #[test]
    fn map_examples() {
        let q = |rank: usize| {
            let mut ranking: Vec<usize> = (10..20).collect();
            ranking[rank - 1] = 99;
            RankedQuery { ranking, gt: 99 }
        };
        assert_eq!(retrieval_map(&[q(1), q(1)]).unwrap(), 1.0);
        assert_eq!(retrieval_map(&[q(2), q(2), q(2)]).unwrap(), 0.5);
        let mixed = retrieval_map(&[q(1), q(2), q(4)]).unwrap();
        assert!((mixed - 1.75 / 3.0).abs() < 1e-15);
        let missing = RankedQuery { ranking: vec![1, 2], gt: 5 };
        assert_eq!(retrieval_map(&[missing]).unwrap(), 0.0);
        assert!(retrieval_map(&[]).is_err());
    }

    fn rotations_about_z(degs: &[f64]) -> Vec<Matrix3<f64>> {
        degs.iter().map(|d| rotation_from_axis_angle(&Vector3::z(), d.to_radians())).collect()
    }

    #[test]
    fn identical_poses_exhaust_upper_bins() {
        let rots = vec![Matrix3::identity(); 10];
        let err = sample_balanced_pairs(&rots, &PairSampleSpec::uniform(3, 1), 0).unwrap_err();
        match err {
            EvalError::BinExhausted { lo, available, .. } => {
                assert_eq!(lo, 10.0);
                assert_eq!(available, 0);
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn balanced_histogram() {
        // Angles 0, 1, ..., 40 about a shared axis: pair angles are differences.
        let degs: Vec<f64> = (0..=40).map(|d| d as f64).collect();
        let rots = rotations_about_z(&degs);
        let spec = PairSampleSpec::uniform(3, 10);
        let pairs = sample_balanced_pairs(&rots, &spec, 3).unwrap();
        assert_eq!(pairs.len(), 30);
        let mut hist = [0usize; 3];
        for (k, &(i, j)) in pairs.iter().enumerate() {
            let angle = rotation_geodesic_error(&rots[j], &rots[i]);
            let bin = spec.bin_of(angle).unwrap();
            assert_eq!(bin, k / 10);
            hist[bin] += 1;
        }
        assert_eq!(hist, [10, 10, 10]);
        assert_eq!(pairs, sample_balanced_pairs(&rots, &spec, 3).unwrap());
    }

    #[test]
    fn spec_validation() {
        let bad = PairSampleSpec { bins: vec![(0.0, 10.0), (12.0, 30.0)], pairs_per_bin: 1 };
        assert!(bad.validate().is_err());
        let bad = PairSampleSpec { bins: vec![(0.0, 20.0)], pairs_per_bin: 1 };
        assert!(bad.validate().is_err());
        assert_eq!(PairSampleSpec::uniform(3, 1).bin_of(30.0), Some(2));
        assert_eq!(PairSampleSpec::uniform(3, 1).bin_of(10.0), Some(1));
        assert_eq!(PairSampleSpec::uniform(3, 1).bin_of(30.5), None);
    }

    proptest! {
        #[test]
        fn metrics_permutation_invariant(mut errs in prop::collection::vec(0.0f64..90.0, 1..30), seed in any::<u64>()) {
            let a = compute_pose_metrics(&errs).unwrap();
            errs.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let b = compute_pose_metrics(&errs).unwrap();
            prop_assert_eq!(&a, &b);
            prop_assert!(a.acc15 <= a.acc30 && a.acc30 <= 1.0);
        }

        #[test]
        fn map_query_order_invariant(ranks in prop::collection::vec(1usize..6, 1..20), seed in any::<u64>()) {
            let mut queries: Vec<RankedQuery> = ranks.iter().map(|&r| {
                let mut ranking: Vec<usize> = (0..6).collect();
                ranking.swap(0, r - 1);
                RankedQuery { ranking, gt: 0 }
            }).collect();
            let a = retrieval_map(&queries).unwrap();
            queries.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let b = retrieval_map(&queries).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&a));
        }
    }
}
