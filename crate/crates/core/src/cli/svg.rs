//! Overlay of a two-view result on the target image frame: epipolar lines of
//! support points, the matched target points and the reprojected cloud.

use std::fmt::Write;

use nalgebra::{Point2, Vector3};

use crate::geometry::{CameraIntrinsics, EssentialMatrix, RelativePose, TriangulatedCloud};

pub const MAX_EPIPOLAR_LINES: usize = 50;

/// Clips the line `a x + b y + c = 0` to the `[0, w] x [0, h]` rectangle.
fn clip_line(l: &Vector3<f64>, w: f64, h: f64) -> Option<(Point2<f64>, Point2<f64>)> {
    let mut pts: Vec<Point2<f64>> = Vec::with_capacity(4);
    let (a, b, c) = (l.x, l.y, l.z);
    if b.abs() > 1e-12 {
        for x in [0.0, w] {
            let y = -(a * x + c) / b;
            if (0.0..=h).contains(&y) {
                pts.push(Point2::new(x, y));
            }
        }
    }
    if a.abs() > 1e-12 {
        for y in [0.0, h] {
            let x = -(b * y + c) / a;
            if (0.0..=w).contains(&x) {
                pts.push(Point2::new(x, y));
            }
        }
    }
    let first = *pts.first()?;
    let far = pts.iter().copied().max_by(|p, q| (p - first).norm().total_cmp(&(q - first).norm()))?;
    ((far - first).norm() > 0.0).then_some((first, far))
}

pub struct Overlay<'a> {
    pub width: u32,
    pub height: u32,
    pub k_support: &'a CameraIntrinsics,
    pub k_target: &'a CameraIntrinsics,
    pub essential: &'a EssentialMatrix,
    pub pose: &'a RelativePose,
    pub cloud: &'a TriangulatedCloud,
    /// Inlier correspondences in pixels, support then target.
    pub inliers: &'a [(Point2<f64>, Point2<f64>)],
}

/// Renders the overlay; one `<polyline>` per epipolar line, at most
/// [`MAX_EPIPOLAR_LINES`] of them, taken from the first inliers.
pub fn render(o: &Overlay) -> String {
    let (w, h) = (o.width as f64, o.height as f64);
    let ka_inv = o.k_support.matrix().try_inverse().expect("valid intrinsics");
    let kb_inv = o.k_target.matrix().try_inverse().expect("valid intrinsics");
    let f = kb_inv.transpose() * o.essential.matrix() * ka_inv;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{}" viewBox="0 0 {} {}">"#,
        o.width, o.height, o.width, o.height
    );
    let _ = writeln!(s, r#"<rect x="0" y="0" width="{w}" height="{h}" fill="white" stroke="black"/>"#);
    let _ = writeln!(s, r#"<g id="epipolar-lines" stroke="steelblue" stroke-width="0.5" fill="none">"#);
    for (a, _) in o.inliers.iter().take(MAX_EPIPOLAR_LINES) {
        let line = f * Vector3::new(a.x, a.y, 1.0);
        if let Some((p, q)) = clip_line(&line, w, h) {
            let _ = writeln!(s, r#"<polyline points="{:.3},{:.3} {:.3},{:.3}"/>"#, p.x, p.y, q.x, q.y);
        }
    }
    let _ = writeln!(s, "</g>");
    let _ = writeln!(s, r#"<g id="matches" fill="darkorange">"#);
    for (_, b) in o.inliers.iter().take(MAX_EPIPOLAR_LINES) {
        let _ = writeln!(s, r#"<circle cx="{:.3}" cy="{:.3}" r="2"/>"#, b.x, b.y);
    }
    let _ = writeln!(s, "</g>");
    let _ = writeln!(s, r#"<g id="reprojected" stroke="crimson" stroke-width="0.8">"#);
    for p in &o.cloud.points {
        if let Some(q) = o.k_target.project(&o.pose.transform(&p.coords)) {
            let _ = writeln!(s, r#"<path d="M{:.3} {:.3}h4M{:.3} {:.3}v4"/>"#, q.x - 2.0, q.y, q.x, q.y - 2.0);
        }
    }
    let _ = writeln!(s, "</g>");
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clips_to_rectangle() {
        // y = 10
        let (p, q) = clip_line(&Vector3::new(0.0, 1.0, -10.0), 100.0, 50.0).unwrap();
        assert_eq!((p, q), (Point2::new(0.0, 10.0), Point2::new(100.0, 10.0)));
        // Diagonal through the corners.
        let (p, q) = clip_line(&Vector3::new(1.0, -1.0, 0.0), 50.0, 50.0).unwrap();
        assert_eq!((p.x.min(q.x), p.x.max(q.x)), (0.0, 50.0));
        // Entirely outside.
        assert!(clip_line(&Vector3::new(0.0, 1.0, -80.0), 100.0, 50.0).is_none());
    }
}
