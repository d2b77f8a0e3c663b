use std::collections::HashMap;

use nalgebra::{Point2, Point3, Vector3};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::MultiviewError;
use crate::geometry::{rotation_from_axis_angle, CameraIntrinsics, PoseRecord, RelativePose};

/// Gauge tolerance for the anchor pose and the first baseline.
pub const GAUGE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct MapView {
    pub view_id: String,
    /// World-to-camera, in map units.
    pub pose: RelativePose,
    pub intrinsics: CameraIntrinsics,
}

impl MapView {
    pub fn project(&self, p: &Point3<f64>) -> Option<Point2<f64>> {
        self.intrinsics.project(&self.pose.transform(&p.coords))
    }

    pub fn depth(&self, p: &Point3<f64>) -> f64 {
        self.pose.transform(&p.coords).z
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    /// Index into [`SceneMap::views`].
    pub view: usize,
    pub px: Point2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub point: Point3<f64>,
    pub observations: Vec<Observation>,
}

impl Track {
    pub fn observation_in(&self, view: usize) -> Option<&Observation> {
        self.observations.iter().find(|o| o.view == view)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gauge {
    pub anchor_view_id: String,
    pub baseline_scale: f64,
}

/// Registered views and the point cloud they observe. The anchor is
/// `views[0]` at identity; `views[1]` is the second initial view and its
/// distance to the anchor is `gauge.baseline_scale`.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneMap {
    pub views: Vec<MapView>,
    pub tracks: Vec<Track>,
    pub gauge: Gauge,
}

impl SceneMap {
    pub fn view_index(&self, id: &str) -> Option<usize> {
        self.views.iter().position(|v| v.view_id == id)
    }

    pub fn view(&self, id: &str) -> Option<&MapView> {
        self.views.iter().find(|v| v.view_id == id)
    }

    pub fn observation_count(&self) -> usize {
        self.tracks.iter().map(|t| t.observations.len()).sum()
    }

    /// Pixel residual of one observation; `None` when the point is behind the camera.
    pub fn residual(&self, track: &Track, obs: &Observation) -> Option<nalgebra::Vector2<f64>> {
        self.views[obs.view].project(&track.point).map(|q| q - obs.px)
    }

    /// Sum of squared pixel residuals; points behind a camera count as infinite.
    pub fn cost(&self) -> f64 {
        self.tracks
            .iter()
            .flat_map(|t| t.observations.iter().map(move |o| (t, o)))
            .map(|(t, o)| self.residual(t, o).map_or(f64::INFINITY, |r| r.norm_squared()))
            .sum()
    }

    /// Checks the gauge and reference invariants.
    pub fn validate(&self) -> Result<(), MultiviewError> {
        let bad = |m: String| Err(MultiviewError::InvalidMap(m));
        if self.views.len() < 2 {
            return bad(format!("{} registered views, need at least 2", self.views.len()));
        }
        if self.views[0].view_id != self.gauge.anchor_view_id {
            return bad("anchor is not the first view".into());
        }
        let anchor = &self.views[0].pose;
        if (anchor.r() - nalgebra::Matrix3::identity()).amax() > GAUGE_TOLERANCE || anchor.t().amax() > GAUGE_TOLERANCE
        {
            return bad("anchor pose is not the identity".into());
        }
        let baseline = self.views[1].pose.center().norm();
        if (baseline - self.gauge.baseline_scale).abs() > GAUGE_TOLERANCE {
            return bad(format!("first baseline is {baseline}, gauge says {}", self.gauge.baseline_scale));
        }
        let mut ids = std::collections::HashSet::new();
        for v in &self.views {
            if !ids.insert(v.view_id.as_str()) {
                return Err(MultiviewError::DuplicateView(v.view_id.clone()));
            }
        }
        for (i, t) in self.tracks.iter().enumerate() {
            if t.observations.len() < 2 {
                return bad(format!("track {i} has {} observations", t.observations.len()));
            }
            if t.observations.iter().any(|o| o.view >= self.views.len()) {
                return bad(format!("track {i} references an unregistered view"));
            }
        }
        Ok(())
    }

    /// Perturbs every non-anchor rotation by `rot_deg` about a random axis,
    /// non-anchor translations and points by `frac` of their norm in a random
    /// direction. The first baseline is renormalized to stay in gauge.
    pub fn perturb<R: Rng>(&mut self, rot_deg: f64, frac: f64, rng: &mut R) {
        for (i, view) in self.views.iter_mut().enumerate().skip(1) {
            let r = rotation_from_axis_angle(&random_direction(rng), rot_deg.to_radians()) * view.pose.r();
            let t = view.pose.t();
            let mut t = t + random_direction(rng) * frac * t.norm();
            if i == 1 {
                t *= self.gauge.baseline_scale / t.norm();
            }
            view.pose = RelativePose::metric(r, t).expect("rotation composition");
        }
        for track in &mut self.tracks {
            let n = track.point.coords.norm();
            track.point += random_direction(rng) * frac * n;
        }
    }

    pub fn to_record(&self) -> MapRecord {
        MapRecord {
            version: MAP_FORMAT_VERSION,
            gauge: self.gauge.clone(),
            views: self
                .views
                .iter()
                .map(|v| ViewRecord {
                    view_id: v.view_id.clone(),
                    pose: PoseRecord::from(&v.pose),
                    intrinsics: matrix_rows(&v.intrinsics),
                })
                .collect(),
            tracks: self
                .tracks
                .iter()
                .map(|t| TrackRecord {
                    point: [t.point.x, t.point.y, t.point.z],
                    observations: t
                        .observations
                        .iter()
                        .map(|o| ObservationRecord {
                            view_id: self.views[o.view].view_id.clone(),
                            px: [o.px.x, o.px.y],
                        })
                        .collect(),
                })
                .collect(),
        }
    }

    pub fn from_record(rec: &MapRecord) -> Result<Self, MultiviewError> {
        if rec.version != MAP_FORMAT_VERSION {
            return Err(MultiviewError::InvalidMap(format!("unsupported map version {}", rec.version)));
        }
        let mut views = Vec::with_capacity(rec.views.len());
        let mut index = HashMap::new();
        for (i, v) in rec.views.iter().enumerate() {
            let k = nalgebra::Matrix3::from_fn(|r, c| v.intrinsics[r][c]);
            let intrinsics = CameraIntrinsics::from_matrix(&k)?;
            let pose = RelativePose::metric(v.pose.rotation(), v.pose.translation())?;
            index.insert(v.view_id.clone(), i);
            views.push(MapView { view_id: v.view_id.clone(), pose, intrinsics });
        }
        let tracks = rec
            .tracks
            .iter()
            .map(|t| {
                let observations = t
                    .observations
                    .iter()
                    .map(|o| {
                        index
                            .get(&o.view_id)
                            .map(|&view| Observation { view, px: Point2::new(o.px[0], o.px[1]) })
                            .ok_or_else(|| MultiviewError::UnknownView(o.view_id.clone()))
                    })
                    .collect::<Result<_, _>>()?;
                Ok(Track { point: Point3::from(t.point), observations })
            })
            .collect::<Result<_, MultiviewError>>()?;
        let map = SceneMap { views, tracks, gauge: rec.gauge.clone() };
        map.validate()?;
        Ok(map)
    }
}

fn random_direction<R: Rng>(rng: &mut R) -> Vector3<f64> {
    let v: Vector3<f64> = Vector3::from_fn(|_, _| StandardNormal.sample(&mut *rng));
    v / v.norm()
}

fn matrix_rows(k: &CameraIntrinsics) -> [[f64; 3]; 3] {
    let m = k.matrix();
    [0, 1, 2].map(|r| [m[(r, 0)], m[(r, 1)], m[(r, 2)]])
}

pub const MAP_FORMAT_VERSION: u32 = 1;

/// JSON form of a [`SceneMap`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapRecord {
    pub version: u32,
    pub gauge: Gauge,
    pub views: Vec<ViewRecord>,
    pub tracks: Vec<TrackRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ViewRecord {
    pub view_id: String,
    pub pose: PoseRecord,
    pub intrinsics: [[f64; 3]; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackRecord {
    pub point: [f64; 3],
    pub observations: Vec<ObservationRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservationRecord {
    pub view_id: String,
    pub px: [f64; 2],
}

/// Root-mean-square pixel residual norm over all observations; 0 for an
/// empty map.
pub fn reprojection_rms(map: &SceneMap) -> f64 {
    let n = map.observation_count();
    if n == 0 {
        return 0.0;
    }
    (map.cost() / n as f64).sqrt()
}

/// Fixed-radius lookup of a view's observations by pixel position.
#[derive(Debug, Default)]
pub(crate) struct ObservationIndex {
    cells: HashMap<(i64, i64), Vec<(usize, Point2<f64>)>>,
    radius: f64,
}

impl ObservationIndex {
    pub fn new(radius: f64) -> Self {
        Self { cells: HashMap::new(), radius }
    }

    pub fn build(map: &SceneMap, view: usize, radius: f64) -> Self {
        let mut idx = Self::new(radius);
        for (ti, t) in map.tracks.iter().enumerate() {
            if let Some(o) = t.observation_in(view) {
                idx.insert(ti, o.px);
            }
        }
        idx
    }

    fn cell(&self, p: &Point2<f64>) -> (i64, i64) {
        ((p.x / self.radius).floor() as i64, (p.y / self.radius).floor() as i64)
    }

    pub fn insert(&mut self, track: usize, px: Point2<f64>) {
        let c = self.cell(&px);
        self.cells.entry(c).or_default().push((track, px));
    }

    /// Nearest indexed track within the radius; ties go to the lower track index.
    pub fn nearest(&self, px: &Point2<f64>) -> Option<usize> {
        let (cx, cy) = self.cell(px);
        let mut best: Option<(f64, usize)> = None;
        for dx in -1..=1 {
            for dy in -1..=1 {
                let Some(list) = self.cells.get(&(cx + dx, cy + dy)) else {
                    continue;
                };
                for &(t, q) in list {
                    let d = (q - px).norm();
                    if d <= self.radius && best.is_none_or(|(bd, bt)| d < bd || (d == bd && t < bt)) {
                        best = Some((d, t));
                    }
                }
            }
        }
        best.map(|(_, t)| t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_map() -> SceneMap {
        let k = CameraIntrinsics::simple(100.0, 100.0, 50.0, 50.0).unwrap();
        let v1 = RelativePose::metric(nalgebra::Matrix3::identity(), Vector3::new(-1.0, 0.0, 0.0)).unwrap();
        let p = Point3::new(0.5, 0.0, 5.0);
        let views = vec![
            MapView { view_id: "a".into(), pose: RelativePose::identity(), intrinsics: k },
            MapView { view_id: "b".into(), pose: v1, intrinsics: k },
        ];
        let mut map =
            SceneMap { views, tracks: vec![], gauge: Gauge { anchor_view_id: "a".into(), baseline_scale: 1.0 } };
        let observations = (0..2).map(|v| Observation { view: v, px: map.views[v].project(&p).unwrap() }).collect();
        map.tracks.push(Track { point: p, observations });
        map
    }

    #[test]
    fn rms_cases() {
        let mut map = tiny_map();
        assert!(reprojection_rms(&map) < 1e-12);
        map.tracks[0].observations[0].px.x += 3.0;
        // Two observations, one off by 3 px.
        assert!((reprojection_rms(&map) - (9.0f64 / 2.0).sqrt()).abs() < 1e-12);
        map.tracks.clear();
        assert_eq!(reprojection_rms(&map), 0.0);
    }

    #[test]
    fn record_round_trip() {
        let map = tiny_map();
        let json = serde_json::to_string(&map.to_record()).unwrap();
        let back: MapRecord = serde_json::from_str(&json).unwrap();
        assert_eq!(SceneMap::from_record(&back).unwrap(), map);
    }

    #[test]
    fn gauge_violations_detected() {
        let mut map = tiny_map();
        map.validate().unwrap();
        map.views[1].pose = RelativePose::metric(nalgebra::Matrix3::identity(), Vector3::new(2.0, 0.0, 0.0)).unwrap();
        assert!(map.validate().is_err());
        let mut map = tiny_map();
        map.tracks[0].observations.pop();
        assert!(map.validate().is_err());
    }

    #[test]
    fn perturb_keeps_gauge() {
        let mut map = tiny_map();
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(1);
        map.perturb(1.0, 0.01, &mut rng);
        map.validate().unwrap();
        assert!(map.cost() > 0.0);
    }

    #[test]
    fn index_snaps_within_radius() {
        let mut idx = ObservationIndex::new(1.0);
        idx.insert(4, Point2::new(10.0, 10.0));
        idx.insert(2, Point2::new(10.5, 10.0));
        assert_eq!(idx.nearest(&Point2::new(10.4, 10.0)), Some(2));
        assert_eq!(idx.nearest(&Point2::new(9.1, 10.0)), Some(4));
        assert_eq!(idx.nearest(&Point2::new(8.9, 10.0)), None);
    }
}
