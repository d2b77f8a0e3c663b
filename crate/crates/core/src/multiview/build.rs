use nalgebra::Point2;

use super::map::{Gauge, MapView, Observation, ObservationIndex, SceneMap, Track};
use super::MultiviewError;
use crate::geometry::{
    parallax_deg, pnp_solve, triangulate_views, CameraIntrinsics, Correspondence, RansacConfig, RelativePose,
    TwoViewResult, PNP_SAMPLE,
};

/// Radius for associating a pixel with an existing observation.
pub const SNAP_RADIUS_PX: f64 = 1.0;

/// Minimum inliers for a two-view result to seed a map.
pub const MIN_INIT_INLIERS: usize = 8;

/// Pixel correspondences between two views.
#[derive(Debug, Clone, PartialEq)]
pub struct PairMatches {
    pub view_a: String,
    pub view_b: String,
    pub corrs: Vec<Correspondence>,
}

impl PairMatches {
    pub fn links(&self, x: &str, y: &str) -> bool {
        (self.view_a == x && self.view_b == y) || (self.view_a == y && self.view_b == x)
    }

    /// The other view and the matches oriented as `(other, view)`, when this
    /// set involves `view`.
    pub fn towards(&self, view: &str) -> Option<(&str, Vec<(Point2<f64>, Point2<f64>)>)> {
        if self.view_b == view {
            Some((&self.view_a, self.corrs.iter().map(|c| (c.a, c.b)).collect()))
        } else if self.view_a == view {
            Some((&self.view_b, self.corrs.iter().map(|c| (c.b, c.a)).collect()))
        } else {
            None
        }
    }
}

/// Seeds a map from a two-view result over `corrs` (pixels). The support view
/// becomes the anchor and the unit translation fixes the scale.
pub fn init_map(
    two_view: &TwoViewResult,
    corrs: &[Correspondence],
    view_ids: [&str; 2],
    intrinsics: [&CameraIntrinsics; 2],
) -> Result<SceneMap, MultiviewError> {
    let inliers = two_view.inlier_count();
    if inliers < MIN_INIT_INLIERS {
        return Err(MultiviewError::InsufficientAssociations {
            view: view_ids[1].to_string(),
            found: inliers,
            needed: MIN_INIT_INLIERS,
        });
    }
    if view_ids[0] == view_ids[1] {
        return Err(MultiviewError::DuplicateView(view_ids[0].to_string()));
    }
    let second = RelativePose::metric(*two_view.pose.r(), *two_view.pose.t())?;
    let views = vec![
        MapView { view_id: view_ids[0].to_string(), pose: RelativePose::identity(), intrinsics: *intrinsics[0] },
        MapView { view_id: view_ids[1].to_string(), pose: second, intrinsics: *intrinsics[1] },
    ];
    let tracks = two_view
        .cloud
        .points
        .iter()
        .zip(&two_view.cloud.source_indices)
        .map(|(p, &i)| Track {
            point: *p,
            observations: vec![Observation { view: 0, px: corrs[i].a }, Observation { view: 1, px: corrs[i].b }],
        })
        .collect();
    Ok(SceneMap {
        views,
        tracks,
        gauge: Gauge { anchor_view_id: view_ids[0].to_string(), baseline_scale: second.t().norm() },
    })
}

/// 2D-3D associations for an unregistered view, one per track: each match to
/// a registered view is chained through the track observed within the snap
/// radius of its registered endpoint. The first association of a track wins.
pub fn associations(map: &SceneMap, view_id: &str, matches: &[PairMatches]) -> Vec<(usize, Point2<f64>)> {
    let mut seen = vec![false; map.tracks.len()];
    let mut out = Vec::new();
    for m in matches {
        let Some((other, pairs)) = m.towards(view_id) else {
            continue;
        };
        let Some(v) = map.view_index(other) else {
            continue;
        };
        let idx = ObservationIndex::build(map, v, SNAP_RADIUS_PX);
        for (p_other, p_new) in pairs {
            if let Some(t) = idx.nearest(&p_other) {
                if !seen[t] {
                    seen[t] = true;
                    out.push((t, p_new));
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Registration {
    pub view_index: usize,
    pub associations: usize,
    pub inliers: usize,
}

/// Adds a view posed by PnP against the map; PnP inliers become observations.
pub fn register_view(
    map: &mut SceneMap,
    view_id: &str,
    intrinsics: &CameraIntrinsics,
    matches: &[PairMatches],
    cfg: &RansacConfig,
) -> Result<Registration, MultiviewError> {
    if map.view_index(view_id).is_some() {
        return Err(MultiviewError::DuplicateView(view_id.to_string()));
    }
    let assoc = associations(map, view_id, matches);
    if assoc.len() < PNP_SAMPLE {
        return Err(MultiviewError::InsufficientAssociations {
            view: view_id.to_string(),
            found: assoc.len(),
            needed: PNP_SAMPLE,
        });
    }
    let pts: Vec<_> = assoc.iter().map(|(t, _)| map.tracks[*t].point).collect();
    let px: Vec<_> = assoc.iter().map(|(_, p)| *p).collect();
    let pnp = pnp_solve(&pts, &px, intrinsics, cfg)
        .map_err(|source| MultiviewError::Registration { view: view_id.to_string(), source })?;
    let view = map.views.len();
    map.views.push(MapView { view_id: view_id.to_string(), pose: pnp.pose, intrinsics: *intrinsics });
    for ((t, p), &inlier) in assoc.iter().zip(&pnp.inlier_mask) {
        if inlier {
            map.tracks[*t].observations.push(Observation { view, px: *p });
        }
    }
    Ok(Registration { view_index: view, associations: assoc.len(), inliers: pnp.inlier_count() })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackConfig {
    pub min_parallax_deg: f64,
    /// Largest pixel residual accepted for a new track or observation.
    pub max_reprojection_px: f64,
}

impl Default for TrackConfig {
    fn default() -> Self {
        Self { min_parallax_deg: 1.0, max_reprojection_px: 4.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct TrackUpdate {
    pub new_tracks: usize,
    pub extended: usize,
}

fn fits(view: &MapView, point: &nalgebra::Point3<f64>, px: &Point2<f64>, max_px: f64) -> bool {
    view.depth(point) > 0.0 && view.project(point).is_some_and(|q| (q - px).norm() <= max_px)
}

/// Adds matches between registered views to the map: matches with neither
/// endpoint on a track become new tracks, matches with one endpoint on a track
/// extend it. Candidates failing parallax, cheirality or reprojection checks
/// are skipped.
pub fn triangulate_new_tracks(map: &mut SceneMap, matches: &[PairMatches], cfg: &TrackConfig) -> TrackUpdate {
    let mut update = TrackUpdate::default();
    for m in matches {
        let (Some(a), Some(b)) = (map.view_index(&m.view_a), map.view_index(&m.view_b)) else {
            continue;
        };
        if a == b {
            continue;
        }
        let mut idx_a = ObservationIndex::build(map, a, SNAP_RADIUS_PX);
        let mut idx_b = ObservationIndex::build(map, b, SNAP_RADIUS_PX);
        for c in &m.corrs {
            match (idx_a.nearest(&c.a), idx_b.nearest(&c.b)) {
                (None, None) => {
                    let (va, vb) = (&map.views[a], &map.views[b]);
                    let rays = [
                        (*va.pose.r(), *va.pose.t(), va.intrinsics.unproject(&c.a)),
                        (*vb.pose.r(), *vb.pose.t(), vb.intrinsics.unproject(&c.b)),
                    ];
                    let Some(p) = triangulate_views(&rays) else {
                        continue;
                    };
                    if parallax_deg(&p, &va.pose.center(), &vb.pose.center()) < cfg.min_parallax_deg
                        || !fits(va, &p, &c.a, cfg.max_reprojection_px)
                        || !fits(vb, &p, &c.b, cfg.max_reprojection_px)
                    {
                        continue;
                    }
                    let t = map.tracks.len();
                    map.tracks.push(Track {
                        point: p,
                        observations: vec![Observation { view: a, px: c.a }, Observation { view: b, px: c.b }],
                    });
                    idx_a.insert(t, c.a);
                    idx_b.insert(t, c.b);
                    update.new_tracks += 1;
                }
                (Some(t), None) => {
                    if extend(map, t, b, c.b, cfg) {
                        idx_b.insert(t, c.b);
                        update.extended += 1;
                    }
                }
                (None, Some(t)) => {
                    if extend(map, t, a, c.a, cfg) {
                        idx_a.insert(t, c.a);
                        update.extended += 1;
                    }
                }
                (Some(_), Some(_)) => {}
            }
        }
    }
    update
}

fn extend(map: &mut SceneMap, track: usize, view: usize, px: Point2<f64>, cfg: &TrackConfig) -> bool {
    let t = &map.tracks[track];
    if t.observation_in(view).is_some() || !fits(&map.views[view], &t.point, &px, cfg.max_reprojection_px) {
        return false;
    }
    map.tracks[track].observations.push(Observation { view, px });
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evalharness::{synth_scene, SynthConfig, SynthScene};
    use crate::geometry::{rotation_geodesic_error, two_view_pose};
    use crate::multiview::reprojection_rms;

    pub(crate) fn pair_matches(scene: &SynthScene) -> Vec<PairMatches> {
        scene
            .pairs
            .iter()
            .map(|p| PairMatches {
                view_a: format!("view_{}", p.view_a),
                view_b: format!("view_{}", p.view_b),
                corrs: p.correspondences(),
            })
            .collect()
    }

    fn seeded(scene: &SynthScene) -> SceneMap {
        let k = scene.intrinsics();
        let corrs = scene.pair(0, 1).unwrap().correspondences();
        let tv = two_view_pose(&corrs, k, k, &RansacConfig::default()).unwrap();
        init_map(&tv, &corrs, ["view_0", "view_1"], [k, k]).unwrap()
    }

    #[test]
    fn noiseless_init_is_exact() {
        let scene = synth_scene(&SynthConfig { seed: 2, ..Default::default() }).unwrap();
        let map = seeded(&scene);
        map.validate().unwrap();
        assert_eq!(map.tracks.len(), 200);
        assert!(reprojection_rms(&map) < 1e-9);
        assert_eq!(map.views[0].pose, RelativePose::identity());
        assert!((map.views[1].pose.t().norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn third_view_registers_exactly() {
        let scene = synth_scene(&SynthConfig { n_views: 3, seed: 3, ..Default::default() }).unwrap();
        let mut map = seeded(&scene);
        let k = scene.intrinsics();
        let matches = pair_matches(&scene);
        let reg = register_view(&mut map, "view_2", k, &matches, &RansacConfig::default()).unwrap();
        assert_eq!(reg.associations, 200);
        let gt = scene.relative_pose(0, 2);
        let est = &map.views[2].pose;
        assert!(rotation_geodesic_error(est.r(), gt.r()).to_radians() < 1e-6);
        let scale = scene.relative_pose(0, 1).t().norm();
        assert!((est.t() * scale - gt.t()).norm() < 1e-6);
        assert!(matches!(
            register_view(&mut map, "view_2", k, &matches, &RansacConfig::default()),
            Err(MultiviewError::DuplicateView(_))
        ));
    }

    #[test]
    fn unmatched_view_is_rejected() {
        let scene = synth_scene(&SynthConfig { n_views: 3, seed: 4, ..Default::default() }).unwrap();
        let mut map = seeded(&scene);
        let only01: Vec<_> = pair_matches(&scene).into_iter().filter(|m| m.links("view_0", "view_1")).collect();
        let err = register_view(&mut map, "view_2", scene.intrinsics(), &only01, &RansacConfig::default());
        assert!(matches!(err, Err(MultiviewError::InsufficientAssociations { found: 0, .. })));
    }

    #[test]
    fn new_tracks_respect_thresholds() {
        let scene = synth_scene(&SynthConfig { n_views: 3, seed: 5, ..Default::default() }).unwrap();
        let mut map = seeded(&scene);
        let k = scene.intrinsics();
        let matches = pair_matches(&scene);
        register_view(&mut map, "view_2", k, &matches, &RansacConfig::default()).unwrap();
        // Drop half the tracks; triangulation must restore them exactly.
        let scale = scene.relative_pose(0, 1).t().norm();
        map.tracks.truncate(100);
        let up = triangulate_new_tracks(&mut map, &matches, &TrackConfig::default());
        assert_eq!(up.new_tracks, 100);
        for t in &map.tracks {
            assert!(t.observations.len() >= 2);
            let nearest = scene
                .gt_points
                .iter()
                .map(|g| (t.point.coords * scale - g.coords).norm())
                .fold(f64::INFINITY, f64::min);
            assert!(nearest < 1e-9, "{nearest}");
        }
        // Identical rays: below any parallax threshold.
        let px = Point2::new(320.0, 240.0);
        let mut map2 = seeded(&scene);
        let n = map2.tracks.len();
        let lone = PairMatches {
            view_a: "view_0".into(),
            view_b: "view_1".into(),
            corrs: vec![Correspondence::new(px + nalgebra::Vector2::new(0.0, 300.0), px)],
        };
        let strict = TrackConfig { min_parallax_deg: 90.0, ..Default::default() };
        assert_eq!(triangulate_new_tracks(&mut map2, &[lone], &strict).new_tracks, 0);
        assert_eq!(map2.tracks.len(), n);
    }

    #[test]
    fn track_behind_camera_rejected() {
        let scene = synth_scene(&SynthConfig { seed: 6, ..Default::default() }).unwrap();
        let mut map = seeded(&scene);
        let n = map.tracks.len();
        let (va, vb) = (&map.views[0], &map.views[1]);
        // A point behind both cameras projects to valid-looking pixels when
        // negated; build its "observations" from the mirrored point.
        let behind = nalgebra::Point3::new(0.3, 0.2, -5.0);
        let qa = va.intrinsics.to_pixel(&Point2::new(behind.x / behind.z, behind.y / behind.z));
        let pb = vb.pose.transform(&behind.coords);
        let qb = vb.intrinsics.to_pixel(&Point2::new(pb.x / pb.z, pb.y / pb.z));
        let m =
            PairMatches { view_a: "view_0".into(), view_b: "view_1".into(), corrs: vec![Correspondence::new(qa, qb)] };
        let cfg = TrackConfig { min_parallax_deg: 0.0, ..Default::default() };
        assert_eq!(triangulate_new_tracks(&mut map, &[m], &cfg).new_tracks, 0);
        assert_eq!(map.tracks.len(), n);
    }
}
