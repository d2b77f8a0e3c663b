//! Metric scale for an up-to-scale two-view result from the prompt's bounding box.
//!
//! Scaling the cloud about the support camera center does not change its
//! projection, so the cloud's projected extent is a fixed reference length
//! `d_cloud` (pixels). The prompt box diagonal `d_box` is the extent the object
//! occupies in the uncropped support view, and the scale factor is
//! `s = d_cloud / d_box`: a larger box means a closer object and a shorter
//! baseline. When the two agree, `s = 1`.

use nalgebra::Point3;

use super::camera::CameraIntrinsics;
use super::pose::RelativePose;
use super::triangulate::TriangulatedCloud;
use super::GeometryError;

/// Pixel box `(x, y, w, h)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        Self { x, y, w, h }
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }

    pub fn diagonal(&self) -> f64 {
        self.w.hypot(self.h)
    }

    pub fn is_valid(&self) -> bool {
        [self.x, self.y, self.w, self.h].iter().all(|v| v.is_finite()) && self.w > 0.0 && self.h > 0.0
    }
}

#[derive(Debug, Clone)]
pub struct ScaledResult {
    pub pose: RelativePose,
    pub cloud: TriangulatedCloud,
    pub scale: f64,
}

/// Axis-aligned bounding box of the cloud projected into the support view.
pub fn projected_bbox(cloud: &[Point3<f64>], k: &CameraIntrinsics) -> Option<BBox> {
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for p in cloud {
        let px = k.project(&p.coords)?;
        lo[0] = lo[0].min(px.x);
        lo[1] = lo[1].min(px.y);
        hi[0] = hi[0].max(px.x);
        hi[1] = hi[1].max(px.y);
    }
    if cloud.is_empty() {
        return None;
    }
    Some(BBox::new(lo[0], lo[1], hi[0] - lo[0], hi[1] - lo[1]))
}

pub fn recover_translation_scale(
    pose: &RelativePose,
    cloud: &TriangulatedCloud,
    prompt_bbox: &BBox,
    k_support: &CameraIntrinsics,
) -> Result<ScaledResult, GeometryError> {
    if pose.scaled() {
        return Err(GeometryError::InvalidPose("pose is already metric".into()));
    }
    if cloud.is_empty() {
        return Err(GeometryError::TooFewCorrespondences { needed: 1, got: 0 });
    }
    if !prompt_bbox.is_valid() {
        return Err(GeometryError::InvalidConfig(format!("invalid bbox {prompt_bbox:?}")));
    }
    let projected = projected_bbox(&cloud.points, k_support)
        .ok_or(GeometryError::Degenerate("cloud point behind the support camera".into()))?;
    let d_cloud = projected.diagonal();
    if !(d_cloud > 1e-9) {
        return Err(GeometryError::ZeroExtent);
    }
    let s = d_cloud / prompt_bbox.diagonal();
    let scaled_pose = RelativePose::metric(*pose.r(), pose.t() * s)?;
    let scaled_cloud = TriangulatedCloud {
        points: cloud.points.iter().map(|p| Point3::from(p.coords * s)).collect(),
        source_indices: cloud.source_indices.clone(),
    };
    Ok(ScaledResult { pose: scaled_pose, cloud: scaled_cloud, scale: s })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Matrix3, Vector3};

    fn fixture() -> (RelativePose, TriangulatedCloud, CameraIntrinsics) {
        let pose = RelativePose::up_to_scale(Matrix3::identity(), Vector3::new(1.0, 0.0, 0.2)).unwrap();
        let mut cloud = TriangulatedCloud::default();
        cloud.push(Point3::new(-0.5, -0.25, 5.0), 0);
        cloud.push(Point3::new(0.5, 0.25, 5.0), 1);
        cloud.push(Point3::new(0.1, 0.0, 6.0), 2);
        let k = CameraIntrinsics::simple(800.0, 800.0, 320.0, 240.0).unwrap();
        (pose, cloud, k)
    }

    #[test]
    fn matching_box_gives_unit_scale() {
        let (pose, cloud, k) = fixture();
        let bbox = projected_bbox(&cloud.points, &k).unwrap();
        let out = recover_translation_scale(&pose, &cloud, &bbox, &k).unwrap();
        assert!((out.scale - 1.0).abs() < 1e-12);
        assert!((out.pose.t() - pose.t()).norm() < 1e-12);
        assert!(out.pose.scaled());
    }

    // Oracle: re-project the scaled cloud and compare diagonals directly.
    #[test]
    fn doubling_box_halves_scale() {
        let (pose, cloud, k) = fixture();
        let b = projected_bbox(&cloud.points, &k).unwrap();
        let b2 = BBox::new(b.x, b.y, 2.0 * b.w, 2.0 * b.h);
        let s1 = recover_translation_scale(&pose, &cloud, &b, &k).unwrap();
        let s2 = recover_translation_scale(&pose, &cloud, &b2, &k).unwrap();
        assert!((s2.scale - 0.5 * s1.scale).abs() < 1e-12);
        assert!((s2.pose.t().norm() - 0.5).abs() < 1e-12);
        let reproj = projected_bbox(&s2.cloud.points, &k).unwrap();
        assert!((reproj.diagonal() - b.diagonal()).abs() < 1e-9);
    }

    #[test]
    fn empty_and_degenerate_clouds() {
        let (pose, _, k) = fixture();
        let bbox = BBox::new(0.0, 0.0, 10.0, 10.0);
        assert!(recover_translation_scale(&pose, &TriangulatedCloud::default(), &bbox, &k).is_err());
        let mut single = TriangulatedCloud::default();
        single.push(Point3::new(0.0, 0.0, 4.0), 0);
        single.push(Point3::new(0.0, 0.0, 8.0), 1);
        assert!(matches!(recover_translation_scale(&pose, &single, &bbox, &k), Err(GeometryError::ZeroExtent)));
    }
}
