//! Absolute pose from 2D-3D correspondences: DLT inside RANSAC followed by
//! Levenberg-Marquardt refinement of the reprojection error.

use nalgebra::{DMatrix, Matrix3, Matrix4, Matrix6, Point2, Point3, SMatrix, Vector3, Vector6};

use super::camera::CameraIntrinsics;
use super::essential::conditioning_transform;
use super::pose::{nearest_rotation, skew, so3_exp, RelativePose};
use super::ransac::{required_iterations, RansacConfig, Score};
use super::GeometryError;

/// Minimum number of correspondences for the linear solver.
pub const PNP_SAMPLE: usize = 6;

#[derive(Debug, Clone)]
pub struct PnpResult {
    /// World-to-camera pose, `scaled = true`.
    pub pose: RelativePose,
    pub inlier_mask: Vec<bool>,
    pub iterations_used: usize,
}

impl PnpResult {
    pub fn inlier_count(&self) -> usize {
        self.inlier_mask.iter().filter(|&&b| b).count()
    }
}

/// Ratio of the smallest to the largest principal spread of a point set;
/// zero for coplanar or collinear sets.
fn planarity(points: &[Point3<f64>]) -> f64 {
    let n = points.len() as f64;
    let mean = points.iter().fold(Vector3::zeros(), |acc, p| acc + p.coords) / n;
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = p.coords - mean;
        cov += d * d.transpose();
    }
    let ev = cov.symmetric_eigenvalues();
    let max = ev.max();
    if max <= 0.0 {
        return 0.0;
    }
    ev.min().max(0.0) / max
}

fn point_conditioning(points: &[Point3<f64>]) -> Matrix4<f64> {
    let n = points.len() as f64;
    let mean = points.iter().fold(Vector3::zeros(), |acc, p| acc + p.coords) / n;
    let mean_dist = points.iter().map(|p| (p.coords - mean).norm()).sum::<f64>() / n;
    let s = 3f64.sqrt() / mean_dist.max(f64::MIN_POSITIVE);
    let mut t = Matrix4::identity() * s;
    t[(3, 3)] = 1.0;
    for i in 0..3 {
        t[(i, 3)] = -s * mean[i];
    }
    t
}

/// Linear pose from at least six normalized 2D-3D pairs.
pub fn pnp_dlt(points3d: &[Point3<f64>], normalized: &[Point2<f64>]) -> Result<RelativePose, GeometryError> {
    let n = points3d.len();
    if n < PNP_SAMPLE || normalized.len() != n {
        return Err(GeometryError::TooFewCorrespondences { needed: PNP_SAMPLE, got: n.min(normalized.len()) });
    }
    if planarity(points3d) < 1e-10 {
        return Err(GeometryError::Degenerate("3D points are coplanar or collinear".into()));
    }
    let t2 = conditioning_transform(normalized)?;
    let t3 = point_conditioning(points3d);

    let rows = (2 * n).max(12);
    let mut a = DMatrix::<f64>::zeros(rows, 12);
    for (i, (p, x)) in points3d.iter().zip(normalized).enumerate() {
        let xh = t3 * p.to_homogeneous();
        let xn = t2 * Vector3::new(x.x, x.y, 1.0);
        let (u, v) = (xn.x / xn.z, xn.y / xn.z);
        for j in 0..4 {
            a[(2 * i, 4 + j)] = -xh[j];
            a[(2 * i, 8 + j)] = v * xh[j];
            a[(2 * i + 1, j)] = xh[j];
            a[(2 * i + 1, 8 + j)] = -u * xh[j];
        }
    }
    let svd = a.svd(false, true);
    let s = &svd.singular_values;
    if !(s[0] > 0.0) || s[10] <= 1e-12 * s[0] {
        return Err(GeometryError::Degenerate("PnP design matrix is rank deficient".into()));
    }
    let v_t = svd.v_t.unwrap();
    let h = v_t.row(11);
    let pc = SMatrix::<f64, 3, 4>::from_row_slice(h.transpose().as_slice());
    let t2_inv = t2.try_inverse().ok_or(GeometryError::Degenerate("conditioning".into()))?;
    let mut p = t2_inv * pc * t3;

    let m: Matrix3<f64> = p.fixed_view::<3, 3>(0, 0).into_owned();
    if m.determinant() < 0.0 {
        p = -p;
    }
    let m: Matrix3<f64> = p.fixed_view::<3, 3>(0, 0).into_owned();
    let sv = m.singular_values();
    let scale = sv.sum() / 3.0;
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(GeometryError::Degenerate("PnP scale vanished".into()));
    }
    let r = nearest_rotation(&m);
    let t: Vector3<f64> = p.column(3).into_owned() / scale;
    RelativePose::metric(r, t)
}

fn reprojection_error(pose: &RelativePose, p: &Point3<f64>, x: &Point2<f64>) -> f64 {
    let q = pose.transform(&p.coords);
    if q.z <= 0.0 {
        return f64::INFINITY;
    }
    ((q.x / q.z - x.x).powi(2) + (q.y / q.z - x.y).powi(2)).sqrt()
}

fn score(pose: &RelativePose, pts: &[Point3<f64>], obs: &[Point2<f64>], thr: f64) -> (Score, Vec<bool>) {
    let mut s = Score { inliers: 0, residual: 0.0 };
    let mask = pts
        .iter()
        .zip(obs)
        .map(|(p, x)| {
            let e = reprojection_error(pose, p, x);
            let inlier = e < thr;
            if inlier {
                s.inliers += 1;
                s.residual += e;
            }
            inlier
        })
        .collect();
    (s, mask)
}

fn sum_sq(pose: &RelativePose, pts: &[Point3<f64>], obs: &[Point2<f64>]) -> f64 {
    pts.iter().zip(obs).map(|(p, x)| reprojection_error(pose, p, x).powi(2)).sum()
}

/// Levenberg-Marquardt on the normalized-plane reprojection error. Rotation is
/// updated by left-multiplied exponential increments.
pub fn refine_pose(pose: &RelativePose, pts: &[Point3<f64>], obs: &[Point2<f64>], max_iters: usize) -> RelativePose {
    let mut current = *pose;
    let mut cost = sum_sq(&current, pts, obs);
    let mut lambda = 1e-3;
    for _ in 0..max_iters {
        let mut h = Matrix6::<f64>::zeros();
        let mut g = Vector6::<f64>::zeros();
        for (p, x) in pts.iter().zip(obs) {
            let rp = current.r() * p.coords;
            let q = rp + current.t();
            if q.z <= 0.0 {
                continue;
            }
            let iz = 1.0 / q.z;
            let dproj = SMatrix::<f64, 2, 3>::new(
                iz,
                0.0,
                -q.x * iz * iz, //
                0.0,
                iz,
                -q.y * iz * iz,
            );
            let mut dq = SMatrix::<f64, 3, 6>::zeros();
            dq.fixed_view_mut::<3, 3>(0, 0).copy_from(&(-skew(&rp)));
            dq.fixed_view_mut::<3, 3>(0, 3).copy_from(&Matrix3::identity());
            let j = dproj * dq;
            let r = nalgebra::Vector2::new(q.x * iz - x.x, q.y * iz - x.y);
            h += j.transpose() * j;
            g += j.transpose() * r;
        }
        let mut accepted = false;
        while lambda < 1e12 {
            let mut damped = h;
            for i in 0..6 {
                damped[(i, i)] += lambda * h[(i, i)].max(1e-12);
            }
            let Some(step) = damped.cholesky().map(|c| c.solve(&(-g))) else {
                lambda *= 10.0;
                continue;
            };
            let w = Vector3::new(step[0], step[1], step[2]);
            let dt = Vector3::new(step[3], step[4], step[5]);
            let r_new = so3_exp(&w) * current.r();
            let t_new = current.t() + dt;
            let Ok(candidate) = RelativePose::metric(nearest_rotation(&r_new), t_new) else {
                lambda *= 10.0;
                continue;
            };
            let new_cost = sum_sq(&candidate, pts, obs);
            if new_cost <= cost {
                let rel = (cost - new_cost) / cost.max(f64::MIN_POSITIVE);
                current = candidate;
                cost = new_cost;
                lambda = (lambda / 10.0).max(1e-12);
                accepted = true;
                if rel < 1e-12 {
                    return current;
                }
                break;
            }
            lambda *= 10.0;
        }
        if !accepted {
            break;
        }
    }
    current
}

/// Robust absolute pose of a calibrated camera from 3D points and their pixel
/// observations. The threshold in `cfg` is in normalized image units.
pub fn pnp_solve(
    points3d: &[Point3<f64>],
    points2d_px: &[Point2<f64>],
    k: &CameraIntrinsics,
    cfg: &RansacConfig,
) -> Result<PnpResult, GeometryError> {
    cfg.validate()?;
    let n = points3d.len();
    if n != points2d_px.len() {
        return Err(GeometryError::InvalidConfig(format!("{n} 3D points but {} 2D points", points2d_px.len())));
    }
    if n < PNP_SAMPLE {
        return Err(GeometryError::TooFewCorrespondences { needed: PNP_SAMPLE, got: n });
    }
    if planarity(points3d) < 1e-10 {
        return Err(GeometryError::Degenerate("3D points are coplanar or collinear".into()));
    }
    let obs: Vec<Point2<f64>> = points2d_px.iter().map(|p| k.unproject(p)).collect();

    let mut rng = cfg.rng();
    let mut best: Option<(RelativePose, Score, Vec<bool>)> = None;
    let mut budget = cfg.max_iterations;
    let mut iterations = 0;
    let mut sp = Vec::with_capacity(PNP_SAMPLE);
    let mut so = Vec::with_capacity(PNP_SAMPLE);
    while iterations < budget.min(cfg.max_iterations) {
        iterations += 1;
        sp.clear();
        so.clear();
        for i in rand::seq::index::sample(&mut rng, n, PNP_SAMPLE) {
            sp.push(points3d[i]);
            so.push(obs[i]);
        }
        let Ok(pose) = pnp_dlt(&sp, &so) else {
            continue;
        };
        let (s, mask) = score(&pose, points3d, &obs, cfg.inlier_threshold);
        if best.as_ref().is_none_or(|(_, b, _)| s.better_than(b)) {
            budget = required_iterations(cfg.confidence, s.inliers as f64 / n as f64, PNP_SAMPLE);
            best = Some((pose, s, mask));
        }
    }
    let Some((mut pose, mut best_score, mut mask)) = best.filter(|(_, s, _)| s.inliers >= PNP_SAMPLE) else {
        return Err(GeometryError::NoConsensus);
    };

    for _ in 0..3 {
        let (ip, io): (Vec<_>, Vec<_>) =
            points3d.iter().zip(&obs).zip(&mask).filter_map(|((p, x), &m)| m.then_some((*p, *x))).unzip();
        let start = match pnp_dlt(&ip, &io) {
            Ok(linear) if sum_sq(&linear, &ip, &io) < sum_sq(&pose, &ip, &io) => linear,
            _ => pose,
        };
        let refined = refine_pose(&start, &ip, &io, 50);
        let (s, new_mask) = score(&refined, points3d, &obs, cfg.inlier_threshold);
        if s.inliers < best_score.inliers {
            break;
        }
        let same = new_mask == mask;
        pose = refined;
        best_score = s;
        mask = new_mask;
        if same {
            break;
        }
    }

    Ok(PnpResult { pose, inlier_mask: mask, iterations_used: iterations })
}
