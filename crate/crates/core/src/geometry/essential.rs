//! Essential matrix estimation (normalized 8-point with manifold refinement),
//! Sampson residual and the four-fold decomposition into rotation and
//! translation direction.

use nalgebra::{DMatrix, Matrix3, Matrix5, Point2, SMatrix, Vector3, Vector5};

use super::camera::Correspondence;
use super::pose::{skew, so3_exp, RelativePose};
use super::GeometryError;

/// Singular-value ratio below which the epipolar design matrix counts as rank deficient.
const RANK_TOLERANCE: f64 = 1e-10;

/// A 3x3 matrix on the essential manifold, Frobenius-normalized.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EssentialMatrix(Matrix3<f64>);

impl EssentialMatrix {
    /// Wraps `e` after checking det = 0, equal nonzero singular values and unit norm.
    pub fn new(e: Matrix3<f64>) -> Result<Self, GeometryError> {
        let norm = e.norm();
        if !norm.is_finite() || (norm - 1.0).abs() > 1e-9 {
            return Err(GeometryError::NotEssential(format!("Frobenius norm {norm}")));
        }
        let det = e.determinant();
        if det.abs() > 1e-8 {
            return Err(GeometryError::NotEssential(format!("det {det:e}")));
        }
        let s = e.singular_values();
        let (hi, lo) = (s.max(), sorted_desc(&s)[1]);
        if (hi - lo) / hi > 1e-6 {
            return Err(GeometryError::NotEssential(format!("singular values {hi} and {lo} differ")));
        }
        Ok(Self(e))
    }

    /// Closest essential matrix to `m`: singular values replaced by `(s, s, 0)`
    /// with `s` the mean of the top two, then normalized so the largest-magnitude
    /// entry is positive.
    pub fn project(m: &Matrix3<f64>) -> Result<Self, GeometryError> {
        let svd = m.svd(true, true);
        let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
        let s = svd.singular_values;
        if !(s[0] > 0.0) || !s[0].is_finite() {
            return Err(GeometryError::Degenerate("zero or non-finite matrix".into()));
        }
        let d = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, 0.0));
        let mut e = u * d * v_t / std::f64::consts::SQRT_2;
        let (mut best, mut best_abs) = (0.0, -1.0);
        for v in e.iter() {
            if v.abs() > best_abs {
                best_abs = v.abs();
                best = *v;
            }
        }
        if best < 0.0 {
            e = -e;
        }
        Ok(Self(e))
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn transpose(&self) -> Self {
        Self(self.0.transpose())
    }

    /// `b^T E a` for homogeneous normalized points.
    pub fn epipolar_residual(&self, c: &Correspondence) -> f64 {
        homog(&c.b).dot(&(self.0 * homog(&c.a)))
    }
}

fn sorted_desc(v: &Vector3<f64>) -> [f64; 3] {
    let mut s = [v[0], v[1], v[2]];
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

fn homog(p: &Point2<f64>) -> Vector3<f64> {
    Vector3::new(p.x, p.y, 1.0)
}

/// Similarity transform moving the centroid to the origin and the mean
/// distance to sqrt(2).
pub(crate) fn conditioning_transform(points: &[Point2<f64>]) -> Result<Matrix3<f64>, GeometryError> {
    let n = points.len() as f64;
    let (sx, sy) = points.iter().fold((0.0, 0.0), |(x, y), p| (x + p.x, y + p.y));
    let (mx, my) = (sx / n, sy / n);
    let mean_dist = points.iter().map(|p| ((p.x - mx).powi(2) + (p.y - my).powi(2)).sqrt()).sum::<f64>() / n;
    if !(mean_dist > 1e-12) || !mean_dist.is_finite() {
        return Err(GeometryError::Degenerate("points coincide".into()));
    }
    let s = std::f64::consts::SQRT_2 / mean_dist;
    Ok(Matrix3::new(
        s,
        0.0,
        -s * mx, //
        0.0,
        s,
        -s * my, //
        0.0,
        0.0,
        1.0,
    ))
}

fn apply(t: &Matrix3<f64>, p: &Point2<f64>) -> Point2<f64> {
    let v = t * homog(p);
    Point2::new(v.x / v.z, v.y / v.z)
}

/// Least-squares essential matrix from at least eight normalized correspondences
/// with Hartley conditioning.
pub fn estimate_essential_8pt(corrs: &[Correspondence]) -> Result<EssentialMatrix, GeometryError> {
    if corrs.len() < 8 {
        return Err(GeometryError::TooFewCorrespondences { needed: 8, got: corrs.len() });
    }
    let pa: Vec<_> = corrs.iter().map(|c| c.a).collect();
    let pb: Vec<_> = corrs.iter().map(|c| c.b).collect();
    let ta = conditioning_transform(&pa)?;
    let tb = conditioning_transform(&pb)?;

    // Pad to nine rows so the SVD always yields a full 9x9 V.
    let rows = corrs.len().max(9);
    let mut a = DMatrix::<f64>::zeros(rows, 9);
    for (i, (p, q)) in pa.iter().zip(&pb).enumerate() {
        let p = apply(&ta, p);
        let q = apply(&tb, q);
        let row = [q.x * p.x, q.x * p.y, q.x, q.y * p.x, q.y * p.y, q.y, p.x, p.y, 1.0];
        for (j, v) in row.iter().enumerate() {
            a[(i, j)] = *v;
        }
    }
    let svd = a.svd(false, true);
    let s = &svd.singular_values;
    if !(s[0] > 0.0) || s[7] <= RANK_TOLERANCE * s[0] {
        return Err(GeometryError::Degenerate(format!(
            "epipolar design matrix is rank deficient (s8/s1 = {:e})",
            s[7] / s[0]
        )));
    }
    let v_t = svd.v_t.unwrap();
    let f = v_t.row(8);
    let fc = Matrix3::new(f[0], f[1], f[2], f[3], f[4], f[5], f[6], f[7], f[8]);
    EssentialMatrix::project(&(tb.transpose() * fc * ta))
}

/// First-order geometric epipolar error, `|b^T E a| / sqrt((Ea)_1^2 + (Ea)_2^2 + (E^T b)_1^2 + (E^T b)_2^2)`.
pub fn sampson_distance(e: &EssentialMatrix, c: &Correspondence) -> f64 {
    let (a, b) = (homog(&c.a), homog(&c.b));
    let ea = e.matrix() * a;
    let etb = e.matrix().transpose() * b;
    let num = b.dot(&ea);
    let den = ea.x * ea.x + ea.y * ea.y + etb.x * etb.x + etb.y * etb.y;
    if den == 0.0 {
        return if num == 0.0 { 0.0 } else { f64::INFINITY };
    }
    num.abs() / den.sqrt()
}

fn signed_sampson(e: &Matrix3<f64>, c: &Correspondence) -> f64 {
    let (a, b) = (homog(&c.a), homog(&c.b));
    let ea = e * a;
    let etb = e.transpose() * b;
    let den = ea.x * ea.x + ea.y * ea.y + etb.x * etb.x + etb.y * etb.y;
    if den > 0.0 {
        b.dot(&ea) / den.sqrt()
    } else {
        0.0
    }
}

/// Unit vectors spanning the plane orthogonal to unit `t`.
fn tangent_basis(t: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let helper = if t.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
    let b1 = t.cross(&helper).normalize();
    (b1, t.cross(&b1))
}

/// Levenberg-Marquardt on the essential manifold (rotation increment plus a
/// tangent step of the unit translation) minimizing the summed squared Sampson
/// distance over `corrs`. Never returns a model with a higher cost than `e`.
pub fn refine_essential(e: &EssentialMatrix, corrs: &[Correspondence], max_iters: usize) -> EssentialMatrix {
    const STEP: f64 = 1e-7;
    if corrs.len() < 5 {
        return *e;
    }
    let start = decompose_essential(e)[0];
    let (mut r, mut t) = (*start.r(), *start.t());
    let apply = |r: &Matrix3<f64>, t: &Vector3<f64>, d: &Vector5<f64>| {
        let (b1, b2) = tangent_basis(t);
        let r = so3_exp(&Vector3::new(d[0], d[1], d[2])) * r;
        let t = (t + b1 * d[3] + b2 * d[4]).normalize();
        (r, t)
    };
    let residuals = |r: &Matrix3<f64>, t: &Vector3<f64>| -> Vec<f64> {
        let m = skew(t) * r;
        corrs.iter().map(|c| signed_sampson(&m, c)).collect()
    };
    let cost = |res: &[f64]| res.iter().map(|x| x * x).sum::<f64>();

    let mut res = residuals(&r, &t);
    let mut current = cost(&res);
    let mut lambda = 1e-3;
    for _ in 0..max_iters {
        let mut jac: Vec<SMatrix<f64, 1, 5>> = vec![SMatrix::zeros(); corrs.len()];
        for k in 0..5 {
            let mut d = Vector5::zeros();
            d[k] = STEP;
            let (rk, tk) = apply(&r, &t, &d);
            for (row, (shifted, base)) in jac.iter_mut().zip(residuals(&rk, &tk).iter().zip(&res)) {
                row[k] = (shifted - base) / STEP;
            }
        }
        let mut jtj = Matrix5::zeros();
        let mut jtr = Vector5::zeros();
        for (row, x) in jac.iter().zip(&res) {
            jtj += row.transpose() * row;
            jtr += row.transpose() * *x;
        }
        let mut accepted = false;
        while lambda < 1e12 {
            let mut damped = jtj;
            for k in 0..5 {
                damped[(k, k)] += lambda * jtj[(k, k)].max(1e-12);
            }
            let Some(delta) = damped.cholesky().map(|c| c.solve(&-jtr)) else {
                lambda *= 10.0;
                continue;
            };
            let (rn, tn) = apply(&r, &t, &delta);
            let res_n = residuals(&rn, &tn);
            let cost_n = cost(&res_n);
            if cost_n < current {
                let gain = (current - cost_n) / current.max(f64::MIN_POSITIVE);
                (r, t, res, current) = (rn, tn, res_n, cost_n);
                lambda = (lambda / 10.0).max(1e-12);
                accepted = gain > 1e-12;
                break;
            }
            lambda *= 10.0;
        }
        if !accepted {
            break;
        }
    }
    EssentialMatrix::project(&(skew(&t) * r)).unwrap_or(*e)
}

/// The four `(R, t)` candidates encoded by `e`, ordered `(R1, t), (R1, -t), (R2, t), (R2, -t)`.
pub fn decompose_essential(e: &EssentialMatrix) -> [RelativePose; 4] {
    let svd = e.matrix().svd(true, true);
    let mut u = svd.u.unwrap();
    let mut v_t = svd.v_t.unwrap();
    if u.determinant() < 0.0 {
        u = -u;
    }
    if v_t.determinant() < 0.0 {
        v_t = -v_t;
    }
    let w = Matrix3::new(
        0.0, -1.0, 0.0, //
        1.0, 0.0, 0.0, //
        0.0, 0.0, 1.0,
    );
    let r1 = u * w * v_t;
    let r2 = u * w.transpose() * v_t;
    let t: Vector3<f64> = u.column(2).into_owned().normalize();
    let mk =
        |r: Matrix3<f64>, t: Vector3<f64>| RelativePose::new(r, t, false).expect("SVD factors give proper rotations");
    [mk(r1, t), mk(r1, -t), mk(r2, t), mk(r2, -t)]
}

/// `[t]x R`, Frobenius-normalized.
pub fn essential_from_pose(pose: &RelativePose) -> Matrix3<f64> {
    let e = skew(pose.t()) * pose.r();
    e / e.norm()
}
