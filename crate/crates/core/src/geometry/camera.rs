use nalgebra::{Matrix3, Point2, Vector3};

use super::GeometryError;

/// Pinhole intrinsics (no distortion).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub skew: f64,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, skew: f64) -> Result<Self, GeometryError> {
        let all_finite = [fx, fy, cx, cy, skew].iter().all(|v| v.is_finite());
        if !all_finite || fx <= 0.0 || fy <= 0.0 {
            return Err(GeometryError::InvalidIntrinsics(format!("fx={fx}, fy={fy}, cx={cx}, cy={cy}, skew={skew}")));
        }
        Ok(Self { fx, fy, cx, cy, skew })
    }

    /// Zero-skew intrinsics.
    pub fn simple(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self, GeometryError> {
        Self::new(fx, fy, cx, cy, 0.0)
    }

    /// Builds intrinsics from a full 3x3 `K`; the last row must be `(0, 0, 1)`
    /// and `K[1][0]` must be zero.
    pub fn from_matrix(k: &Matrix3<f64>) -> Result<Self, GeometryError> {
        if k[(2, 0)] != 0.0 || k[(2, 1)] != 0.0 || k[(2, 2)] != 1.0 || k[(1, 0)] != 0.0 {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "K must be upper triangular with last row (0, 0, 1), got {:?}",
                k.row(2)
            )));
        }
        Self::new(k[(0, 0)], k[(1, 1)], k[(0, 2)], k[(1, 2)], k[(0, 1)])
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(
            self.fx, self.skew, self.cx, //
            0.0, self.fy, self.cy, //
            0.0, 0.0, 1.0,
        )
    }

    /// Pixel to normalized image coordinates (`K^-1 x`).
    pub fn unproject(&self, px: &Point2<f64>) -> Point2<f64> {
        let y = (px.y - self.cy) / self.fy;
        let x = (px.x - self.cx - self.skew * y) / self.fx;
        Point2::new(x, y)
    }

    /// Normalized image coordinates to pixels.
    pub fn to_pixel(&self, n: &Point2<f64>) -> Point2<f64> {
        Point2::new(self.fx * n.x + self.skew * n.y + self.cx, self.fy * n.y + self.cy)
    }

    /// Projects a camera-frame point; `None` when it is not in front of the camera.
    pub fn project(&self, p: &Vector3<f64>) -> Option<Point2<f64>> {
        if p.z <= 0.0 {
            return None;
        }
        Some(self.to_pixel(&Point2::new(p.x / p.z, p.y / p.z)))
    }
}

/// A pixel (or normalized) point pair: `a` in the support view, `b` in the target view.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    pub a: Point2<f64>,
    pub b: Point2<f64>,
}

impl Correspondence {
    pub fn new(a: Point2<f64>, b: Point2<f64>) -> Self {
        Self { a, b }
    }

    pub fn is_finite(&self) -> bool {
        self.a.x.is_finite() && self.a.y.is_finite() && self.b.x.is_finite() && self.b.y.is_finite()
    }

    pub fn swapped(&self) -> Self {
        Self { a: self.b, b: self.a }
    }
}

/// Maps pixel correspondences into normalized image coordinates of their
/// respective cameras.
pub fn normalize_correspondences(
    corrs: &[Correspondence],
    k_support: &CameraIntrinsics,
    k_target: &CameraIntrinsics,
) -> Vec<Correspondence> {
    corrs.iter().map(|c| Correspondence::new(k_support.unproject(&c.a), k_target.unproject(&c.b))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_intrinsics_leave_points_alone() {
        let k = CameraIntrinsics::simple(1.0, 1.0, 0.0, 0.0).unwrap();
        let c = Correspondence::new(Point2::new(3.5, -2.0), Point2::new(0.25, 9.0));
        assert_eq!(normalize_correspondences(&[c], &k, &k), vec![c]);
    }

    #[test]
    fn principal_point_maps_to_origin() {
        let k = CameraIntrinsics::new(500.0, 480.0, 320.0, 240.0, 1.5).unwrap();
        let n = k.unproject(&Point2::new(320.0, 240.0));
        assert_eq!(n, Point2::new(0.0, 0.0));
    }

    #[test]
    fn focal_offset() {
        let k = CameraIntrinsics::simple(500.0, 500.0, 320.0, 240.0).unwrap();
        let n = k.unproject(&Point2::new(820.0, 240.0));
        assert_eq!(n, Point2::new(1.0, 0.0));
    }

    #[test]
    fn pixel_round_trip_with_skew() {
        let k = CameraIntrinsics::new(610.0, 590.0, 300.0, 250.0, 2.0).unwrap();
        let px = Point2::new(123.4, 456.7);
        let back = k.to_pixel(&k.unproject(&px));
        assert!((back - px).norm() < 1e-12);
    }

    #[test]
    fn rejects_bad_focal() {
        assert!(CameraIntrinsics::simple(0.0, 1.0, 0.0, 0.0).is_err());
        assert!(CameraIntrinsics::simple(1.0, -1.0, 0.0, 0.0).is_err());
        let mut k = CameraIntrinsics::simple(1.0, 1.0, 0.0, 0.0).unwrap().matrix();
        k[(2, 2)] = 2.0;
        assert!(CameraIntrinsics::from_matrix(&k).is_err());
    }
}
