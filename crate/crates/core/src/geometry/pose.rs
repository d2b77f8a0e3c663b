use nalgebra::{Matrix3, Rotation3, Unit, Vector3};
use serde::{Deserialize, Serialize};

use super::GeometryError;

/// Tolerance for the rotation and unit-translation invariants.
pub const POSE_TOLERANCE: f64 = 1e-9;

/// Rigid transform mapping support-camera coordinates into the target camera:
/// `X_target = r * X_support + t`.
///
/// When `scaled` is false the translation is a unit direction only.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelativePose {
    r: Matrix3<f64>,
    t: Vector3<f64>,
    scaled: bool,
}

impl RelativePose {
    pub fn new(r: Matrix3<f64>, t: Vector3<f64>, scaled: bool) -> Result<Self, GeometryError> {
        check_rotation(&r)?;
        if !t.iter().all(|v| v.is_finite()) {
            return Err(GeometryError::InvalidPose("non-finite translation".into()));
        }
        if !scaled && (t.norm() - 1.0).abs() > POSE_TOLERANCE {
            return Err(GeometryError::InvalidPose(format!("unscaled pose needs |t| = 1, got {}", t.norm())));
        }
        Ok(Self { r, t, scaled })
    }

    /// Up-to-scale pose; `t` is normalized here.
    pub fn up_to_scale(r: Matrix3<f64>, t: Vector3<f64>) -> Result<Self, GeometryError> {
        let n = t.norm();
        if n == 0.0 || !n.is_finite() {
            return Err(GeometryError::InvalidPose("zero translation".into()));
        }
        Self::new(r, t / n, false)
    }

    pub fn metric(r: Matrix3<f64>, t: Vector3<f64>) -> Result<Self, GeometryError> {
        Self::new(r, t, true)
    }

    pub fn identity() -> Self {
        Self { r: Matrix3::identity(), t: Vector3::zeros(), scaled: true }
    }

    pub fn r(&self) -> &Matrix3<f64> {
        &self.r
    }

    pub fn t(&self) -> &Vector3<f64> {
        &self.t
    }

    pub fn scaled(&self) -> bool {
        self.scaled
    }

    pub fn transform(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.r * p + self.t
    }

    /// Camera center expressed in the source frame.
    pub fn center(&self) -> Vector3<f64> {
        -(self.r.transpose() * self.t)
    }

    /// Row-major rotation followed by translation, the layout used in JSON records.
    pub fn r_row_major(&self) -> [f64; 9] {
        let r = &self.r;
        [r[(0, 0)], r[(0, 1)], r[(0, 2)], r[(1, 0)], r[(1, 1)], r[(1, 2)], r[(2, 0)], r[(2, 1)], r[(2, 2)]]
    }
}

/// JSON form of a pose: `r` is row-major.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseRecord {
    pub r: [f64; 9],
    pub t: [f64; 3],
}

impl PoseRecord {
    pub fn from_parts(r: &Matrix3<f64>, t: &Vector3<f64>) -> Self {
        let mut out = [0.0; 9];
        for i in 0..3 {
            for j in 0..3 {
                out[3 * i + j] = r[(i, j)];
            }
        }
        Self { r: out, t: [t.x, t.y, t.z] }
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        Matrix3::from_row_slice(&self.r)
    }

    pub fn translation(&self) -> Vector3<f64> {
        Vector3::from_column_slice(&self.t)
    }
}

impl From<&RelativePose> for PoseRecord {
    fn from(p: &RelativePose) -> Self {
        PoseRecord::from_parts(p.r(), p.t())
    }
}

pub fn check_rotation(r: &Matrix3<f64>) -> Result<(), GeometryError> {
    if !r.iter().all(|v| v.is_finite()) {
        return Err(GeometryError::InvalidPose("non-finite rotation".into()));
    }
    let ortho = (r.transpose() * r - Matrix3::identity()).abs().max();
    let det = r.determinant();
    if ortho > POSE_TOLERANCE || (det - 1.0).abs() > POSE_TOLERANCE {
        return Err(GeometryError::InvalidPose(format!("not a rotation: |R^T R - I|_max = {ortho:e}, det = {det}")));
    }
    Ok(())
}

/// Nearest rotation in the Frobenius sense.
pub fn nearest_rotation(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let u = svd.u.unwrap();
    let v_t = svd.v_t.unwrap();
    let mut r = u * v_t;
    if r.determinant() < 0.0 {
        let d = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0));
        r = u * d * v_t;
    }
    r
}

pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(
        0.0, -v.z, v.y, //
        v.z, 0.0, -v.x, //
        -v.y, v.x, 0.0,
    )
}

/// Rotation by `angle_rad` about `axis` (normalized internally).
pub fn rotation_from_axis_angle(axis: &Vector3<f64>, angle_rad: f64) -> Matrix3<f64> {
    Rotation3::from_axis_angle(&Unit::new_normalize(*axis), angle_rad).into_inner()
}

/// Exponential map of a rotation vector.
pub fn so3_exp(w: &Vector3<f64>) -> Matrix3<f64> {
    Rotation3::new(*w).into_inner()
}

/// Angle of `r_gt^T r_est`, in degrees: `acos((tr - 1) / 2)`, evaluated as
/// an `atan2` of the sine and cosine parts so small angles keep full precision.
pub fn rotation_geodesic_error(r_est: &Matrix3<f64>, r_gt: &Matrix3<f64>) -> f64 {
    let d = r_gt.transpose() * r_est;
    let c = ((d.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
    let s = 0.5 * Vector3::new(d[(2, 1)] - d[(1, 2)], d[(0, 2)] - d[(2, 0)], d[(1, 0)] - d[(0, 1)]).norm();
    s.min(1.0).atan2(c).to_degrees()
}

/// Angle between two translation directions in degrees; zero vectors give 0
/// only if both are zero, otherwise 180.
pub fn translation_direction_error(t_est: &Vector3<f64>, t_gt: &Vector3<f64>) -> f64 {
    let (ne, ng) = (t_est.norm(), t_gt.norm());
    if ne == 0.0 || ng == 0.0 {
        return if ne == ng { 0.0 } else { 180.0 };
    }
    // atan2 keeps precision near 0 where acos does not.
    let cross = t_est.cross(t_gt).norm();
    let dot = t_est.dot(t_gt);
    cross.atan2(dot).to_degrees()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_has_zero_error() {
        let r = rotation_from_axis_angle(&Vector3::new(0.3, -1.0, 2.0), 0.7);
        assert_eq!(rotation_geodesic_error(&r, &r), 0.0);
    }

    #[test]
    fn thirty_degrees_about_z() {
        let r = rotation_from_axis_angle(&Vector3::z(), 30f64.to_radians());
        let e = rotation_geodesic_error(&r, &Matrix3::identity());
        assert!((e - 30.0).abs() < 1e-12, "{e}");
    }

    #[test]
    fn random_axis_angles_recovered() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for deg in 1..180 {
            let axis =
                Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let r = rotation_from_axis_angle(&axis, (deg as f64).to_radians());
            let e = rotation_geodesic_error(&r, &Matrix3::identity());
            assert!((e - deg as f64).abs() < 1e-9, "{deg}: {e}");
        }
    }

    #[test]
    fn clamps_trace_overshoot() {
        let mut r = Matrix3::identity();
        r[(0, 0)] += 1e-15;
        assert_eq!(rotation_geodesic_error(&r, &Matrix3::identity()), 0.0);
    }

    #[test]
    fn pose_invariants_enforced() {
        let r = rotation_from_axis_angle(&Vector3::x(), 0.2);
        assert!(RelativePose::new(r, Vector3::new(0.0, 0.0, 2.0), false).is_err());
        assert!(RelativePose::new(r, Vector3::new(0.0, 0.0, 2.0), true).is_ok());
        assert!(RelativePose::new(-r, Vector3::z(), false).is_err());
        assert!(RelativePose::new(r * 1.001, Vector3::z(), false).is_err());
        let p = RelativePose::up_to_scale(r, Vector3::new(3.0, 4.0, 0.0)).unwrap();
        assert!((p.t().norm() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn nearest_rotation_is_rotation() {
        let m = Matrix3::new(1.0, 0.1, 0.0, -0.05, 0.9, 0.2, 0.0, 0.1, 1.1);
        check_rotation(&nearest_rotation(&m)).unwrap();
    }

    #[test]
    fn translation_angle() {
        let e = translation_direction_error(&Vector3::x(), &Vector3::new(1.0, 1.0, 0.0));
        assert!((e - 45.0).abs() < 1e-12);
        assert_eq!(translation_direction_error(&Vector3::x(), &(Vector3::x() * 5.0)), 0.0);
    }
}
