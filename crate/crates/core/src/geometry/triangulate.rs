//! Linear triangulation and cheirality-based pose disambiguation.

use nalgebra::{Matrix3, Matrix4, Point2, Point3, Vector3, Vector4};

use super::camera::Correspondence;
use super::pose::RelativePose;
use super::GeometryError;

/// Rays closer to parallel than this are rejected by [`triangulate_point`].
pub const MIN_PARALLAX_DEG: f64 = 0.1;

/// Triangulated points in the support-camera frame, each tagged with the index
/// of the correspondence it came from.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TriangulatedCloud {
    pub points: Vec<Point3<f64>>,
    pub source_indices: Vec<usize>,
}

impl TriangulatedCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn push(&mut self, p: Point3<f64>, source: usize) {
        self.points.push(p);
        self.source_indices.push(source);
    }
}

/// Angle in degrees between the viewing rays of a world point seen from two
/// camera centers.
pub fn parallax_deg(point: &Point3<f64>, center_a: &Vector3<f64>, center_b: &Vector3<f64>) -> f64 {
    let ra = point.coords - center_a;
    let rb = point.coords - center_b;
    ra.cross(&rb).norm().atan2(ra.dot(&rb)).to_degrees()
}

/// Angle in degrees between the two back-projected rays of a normalized
/// correspondence, measured in the support frame.
pub fn ray_angle_deg(pose: &RelativePose, c: &Correspondence) -> f64 {
    let da = Vector3::new(c.a.x, c.a.y, 1.0);
    let db = pose.r().transpose() * Vector3::new(c.b.x, c.b.y, 1.0);
    da.cross(&db).norm().atan2(da.dot(&db)).to_degrees()
}

/// Homogeneous DLT over any number of views. Each entry pairs a world-to-camera
/// transform `(R, t)` with the observed normalized image point.
pub fn triangulate_dlt(views: &[(Matrix3<f64>, Vector3<f64>, Point2<f64>)]) -> Option<Point3<f64>> {
    if views.len() < 2 {
        return None;
    }
    // Accumulate A^T A directly; the 4x4 null vector is the same.
    let mut ata = Matrix4::<f64>::zeros();
    for (r, t, x) in views {
        let row = |i: usize| Vector4::new(r[(i, 0)], r[(i, 1)], r[(i, 2)], t[i]);
        let p0 = row(0);
        let p1 = row(1);
        let p2 = row(2);
        let a0 = p2 * x.x - p0;
        let a1 = p2 * x.y - p1;
        ata += a0 * a0.transpose() + a1 * a1.transpose();
    }
    let eig = ata.symmetric_eigen();
    let (imin, _) = eig.eigenvalues.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1))?;
    let h = eig.eigenvectors.column(imin);
    if h[3].abs() < 1e-14 * h.norm() {
        return None;
    }
    let p = Point3::new(h[0] / h[3], h[1] / h[3], h[2] / h[3]);
    p.coords.iter().all(|v| v.is_finite()).then_some(p)
}

/// [`triangulate_dlt`] followed by an inhomogeneous least-squares re-solve.
pub fn triangulate_views(views: &[(Matrix3<f64>, Vector3<f64>, Point2<f64>)]) -> Option<Point3<f64>> {
    let p = triangulate_dlt(views)?;
    Some(polish(views, p))
}

/// Triangulates one normalized correspondence for the pose `X_b = R X_a + t`,
/// returning the point in the support frame.
pub fn triangulate_point(pose: &RelativePose, c: &Correspondence) -> Result<Point3<f64>, GeometryError> {
    if pose.t().norm() == 0.0 {
        return Err(GeometryError::Degenerate("zero baseline".into()));
    }
    let angle = ray_angle_deg(pose, c);
    if angle < MIN_PARALLAX_DEG {
        return Err(GeometryError::LowParallax { angle_deg: angle });
    }
    let views = [(Matrix3::identity(), Vector3::zeros(), c.a), (*pose.r(), *pose.t(), c.b)];
    // The eigen-solver's round-off is removed by re-solving the same system
    // in inhomogeneous form.
    let p = triangulate_dlt(&views).ok_or(GeometryError::Degenerate("triangulation failed".into()))?;
    Ok(polish(&views, p))
}

/// Linear least-squares solve of the DLT rows with the last coordinate fixed to 1;
/// falls back to `p` when the system is singular.
fn polish(views: &[(Matrix3<f64>, Vector3<f64>, Point2<f64>)], p: Point3<f64>) -> Point3<f64> {
    let mut jtj = Matrix3::<f64>::zeros();
    let mut jtr = Vector3::<f64>::zeros();
    for (r, t, x) in views {
        for (row, obs) in [(0usize, x.x), (1usize, x.y)] {
            let a: Vector3<f64> = r.row(2).transpose() * obs - r.row(row).transpose();
            let b = t[row] - obs * t[2];
            jtj += a * a.transpose();
            jtr += a * b;
        }
    }
    match jtj.try_inverse() {
        Some(inv) => {
            let q = inv * jtr;
            if q.iter().all(|v| v.is_finite()) {
                Point3::from(q)
            } else {
                p
            }
        }
        None => p,
    }
}

/// Depth of `p` in the support camera and in the target camera.
pub fn depths(pose: &RelativePose, p: &Point3<f64>) -> (f64, f64) {
    (p.z, pose.transform(&p.coords).z)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheiralityChoice {
    pub pose: RelativePose,
    pub positive_depth_count: usize,
}

/// Chooses the candidate that places the most triangulated correspondences in
/// front of both cameras.
pub fn select_cheirality(
    candidates: &[RelativePose],
    corrs: &[Correspondence],
) -> Result<CheiralityChoice, GeometryError> {
    if corrs.is_empty() {
        return Err(GeometryError::TooFewCorrespondences { needed: 1, got: 0 });
    }
    if candidates.is_empty() {
        return Err(GeometryError::InvalidConfig("no candidate poses".into()));
    }
    let mut any_triangulated = false;
    let counts: Vec<usize> = candidates
        .iter()
        .map(|pose| {
            corrs
                .iter()
                .filter(|c| match triangulate_point(pose, c) {
                    Ok(p) => {
                        any_triangulated = true;
                        let (za, zb) = depths(pose, &p);
                        za > 0.0 && zb > 0.0
                    }
                    Err(_) => false,
                })
                .count()
        })
        .collect();
    let max = *counts.iter().max().unwrap();
    if max == 0 && any_triangulated {
        return Err(GeometryError::NoPositiveDepth);
    }
    let winners: Vec<usize> = (0..counts.len()).filter(|&i| counts[i] == max).collect();
    if winners.len() > 1 {
        return Err(GeometryError::AmbiguousCheirality { count: max });
    }
    Ok(CheiralityChoice { pose: candidates[winners[0]], positive_depth_count: max })
}
