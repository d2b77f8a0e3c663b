//! Synthetic multi-view scenes with known poses, points and match labels.
//!
//! View 0 is the world frame. Every other view orbits the scene center
//! `c = (0, 0, (z_min + z_max) / 2)` by a random rotation, so `c` projects to
//! the principal point in every view. Points are drawn uniformly in view 0's
//! frustum within the depth range and kept only when visible in all views.

use nalgebra::{Point2, Point3, Vector3};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::EvalError;
use crate::geometry::{rotation_from_axis_angle, CameraIntrinsics, Correspondence, RelativePose};
use crate::retrieval::MatchSet;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_points: usize,
    /// Standard deviation of the per-axis pixel noise on inlier observations.
    pub noise_px: f64,
    /// Fraction of outliers in every pairwise match set, in `[0, 1)`.
    pub outlier_ratio: f64,
    pub n_views: usize,
    /// Each non-anchor view is rotated about the scene center by an angle drawn
    /// uniformly from `[0.2, 1] * rotation_range_deg`.
    pub rotation_range_deg: f64,
    pub depth_range: (f64, f64),
    pub intrinsics: CameraIntrinsics,
    pub image_size: (u32, u32),
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_points: 200,
            noise_px: 0.0,
            outlier_ratio: 0.0,
            n_views: 2,
            rotation_range_deg: 30.0,
            depth_range: (4.0, 8.0),
            intrinsics: CameraIntrinsics::simple(800.0, 800.0, 320.0, 240.0).expect("valid default intrinsics"),
            image_size: (640, 480),
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), EvalError> {
        let bad = |m: &str| Err(EvalError::InvalidConfig(m.to_string()));
        if self.n_points == 0 {
            return bad("n_points must be positive");
        }
        if self.n_views < 2 {
            return bad("n_views must be at least 2");
        }
        if !(self.noise_px >= 0.0) || !self.noise_px.is_finite() {
            return bad("noise_px must be finite and non-negative");
        }
        if !(0.0..1.0).contains(&self.outlier_ratio) {
            return bad("outlier_ratio must lie in [0, 1)");
        }
        if !(self.rotation_range_deg > 0.0 && self.rotation_range_deg <= 180.0) {
            return bad("rotation_range_deg must lie in (0, 180]");
        }
        let (z0, z1) = self.depth_range;
        if !(z0 > 0.0 && z1 > z0 && z1.is_finite()) {
            return bad("depth_range must satisfy 0 < z_min < z_max");
        }
        if self.image_size.0 == 0 || self.image_size.1 == 0 {
            return bad("image_size must be positive");
        }
        Ok(())
    }

    /// Number of outliers added to each pairwise match set.
    pub fn outliers_per_pair(&self) -> usize {
        (self.n_points as f64 * self.outlier_ratio / (1.0 - self.outlier_ratio)).round() as usize
    }

    pub fn scene_center(&self) -> Vector3<f64> {
        Vector3::new(0.0, 0.0, 0.5 * (self.depth_range.0 + self.depth_range.1))
    }
}

/// Matches between two synthetic views.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthPair {
    pub view_a: usize,
    pub view_b: usize,
    pub matches: MatchSet,
    pub inlier_labels: Vec<bool>,
    /// Generator point behind each inlier match.
    pub point_ids: Vec<Option<usize>>,
}

impl SynthPair {
    pub fn correspondences(&self) -> Vec<Correspondence> {
        self.matches.correspondences()
    }

    pub fn outlier_count(&self) -> usize {
        self.inlier_labels.iter().filter(|&&l| !l).count()
    }
}

#[derive(Debug, Clone)]
pub struct SynthScene {
    pub config: SynthConfig,
    /// World-to-camera poses, metric, view 0 at identity.
    pub gt_poses: Vec<RelativePose>,
    pub gt_points: Vec<Point3<f64>>,
    /// Noisy pixel observation of every point in every view, `[view][point]`.
    pub observations: Vec<Vec<Point2<f64>>>,
    /// One entry per unordered view pair `(i, j)`, `i < j`, in lexicographic order.
    pub pairs: Vec<SynthPair>,
}

impl SynthScene {
    pub fn pair(&self, a: usize, b: usize) -> Option<&SynthPair> {
        self.pairs.iter().find(|p| p.view_a == a && p.view_b == b)
    }

    /// Ground-truth pose of `b` relative to `a`.
    pub fn relative_pose(&self, a: usize, b: usize) -> RelativePose {
        let (pa, pb) = (&self.gt_poses[a], &self.gt_poses[b]);
        let r = pb.r() * pa.r().transpose();
        let t = pb.t() - r * pa.t();
        RelativePose::metric(r, t).expect("composition of rotations")
    }

    pub fn intrinsics(&self) -> &CameraIntrinsics {
        &self.config.intrinsics
    }
}

fn orbit_pose<R: Rng>(rng: &mut R, cfg: &SynthConfig) -> RelativePose {
    // Axis kept away from the optical axis so the orbit produces a baseline.
    let axis = loop {
        let a = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-0.3..0.3));
        if a.xy().norm() > 0.2 {
            break a;
        }
    };
    let range = cfg.rotation_range_deg;
    let angle = rng.random_range(0.2 * range..=range).to_radians();
    let r = rotation_from_axis_angle(&axis, angle).transpose();
    let c = cfg.scene_center();
    RelativePose::metric(r, c - r * c).expect("rotation from axis-angle")
}

fn in_image(p: &Point2<f64>, size: (u32, u32)) -> bool {
    p.x >= 0.0 && p.y >= 0.0 && p.x < size.0 as f64 && p.y < size.1 as f64
}

fn uniform_pixel<R: Rng>(rng: &mut R, size: (u32, u32)) -> Point2<f64> {
    Point2::new(rng.random_range(0.0..size.0 as f64), rng.random_range(0.0..size.1 as f64))
}

/// Generates a scene; deterministic in `cfg.seed`.
pub fn synth_scene(cfg: &SynthConfig) -> Result<SynthScene, EvalError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let k = &cfg.intrinsics;

    let mut gt_poses = vec![RelativePose::identity()];
    gt_poses.extend((1..cfg.n_views).map(|_| orbit_pose(&mut rng, cfg)));

    let (z0, z1) = cfg.depth_range;
    let max_attempts = 1000 * cfg.n_points;
    let mut gt_points = Vec::with_capacity(cfg.n_points);
    let mut attempts = 0;
    while gt_points.len() < cfg.n_points {
        attempts += 1;
        if attempts > max_attempts {
            return Err(EvalError::InvalidConfig(
                "could not place points visible in every view; reduce rotation_range_deg".into(),
            ));
        }
        let px = uniform_pixel(&mut rng, cfg.image_size);
        let z = rng.random_range(z0..z1);
        let n = k.unproject(&px);
        let p = Point3::new(n.x * z, n.y * z, z);
        let visible = gt_poses
            .iter()
            .all(|pose| k.project(&pose.transform(&p.coords)).is_some_and(|q| in_image(&q, cfg.image_size)));
        if visible {
            gt_points.push(p);
        }
    }

    let noise = Normal::new(0.0, cfg.noise_px.max(f64::MIN_POSITIVE)).expect("finite sigma");
    let observations: Vec<Vec<Point2<f64>>> = gt_poses
        .iter()
        .map(|pose| {
            gt_points
                .iter()
                .map(|p| {
                    let q = k.project(&pose.transform(&p.coords)).expect("visible");
                    if cfg.noise_px > 0.0 {
                        Point2::new(q.x + noise.sample(&mut rng), q.y + noise.sample(&mut rng))
                    } else {
                        q
                    }
                })
                .collect()
        })
        .collect();

    let n_out = cfg.outliers_per_pair();
    let mut pairs = Vec::new();
    for a in 0..cfg.n_views {
        for b in a + 1..cfg.n_views {
            let mut rows: Vec<(Point2<f64>, Point2<f64>, f64, bool, Option<usize>)> =
                Vec::with_capacity(cfg.n_points + n_out);
            for (i, (pa, pb)) in observations[a].iter().zip(&observations[b]).enumerate() {
                rows.push((*pa, *pb, rng.random_range(0.85..=1.0), true, Some(i)));
            }
            for _ in 0..n_out {
                let pa = uniform_pixel(&mut rng, cfg.image_size);
                let pb = uniform_pixel(&mut rng, cfg.image_size);
                rows.push((pa, pb, rng.random_range(0.0..0.9), false, None));
            }
            rows.shuffle(&mut rng);
            let matches = MatchSet::new(
                rows.iter().map(|r| r.0).collect(),
                rows.iter().map(|r| r.1).collect(),
                rows.iter().map(|r| r.2).collect(),
            )
            .expect("equal lengths");
            pairs.push(SynthPair {
                view_a: a,
                view_b: b,
                matches,
                inlier_labels: rows.iter().map(|r| r.3).collect(),
                point_ids: rows.iter().map(|r| r.4).collect(),
            });
        }
    }

    Ok(SynthScene { config: cfg.clone(), gt_poses, gt_points, observations, pairs })
}
