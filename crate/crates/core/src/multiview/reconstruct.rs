use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::build::{associations, init_map, register_view, triangulate_new_tracks, PairMatches, TrackConfig};
use super::map::SceneMap;
use super::refine::{refine_map, RefineConfig, RefineReport};
use super::MultiviewError;
use crate::geometry::{
    parallax_deg, rotation_geodesic_error, translation_direction_error, two_view_pose, CameraIntrinsics, RansacConfig,
    RelativePose, TwoViewResult, PNP_SAMPLE,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReconstructConfig {
    pub two_view: RansacConfig,
    /// Threshold in normalized units, like the two-view one.
    pub pnp: RansacConfig,
    pub tracks: TrackConfig,
    pub refine: RefineConfig,
    /// Pairs whose median triangulation angle is below this are only used to
    /// seed the map when no other pair qualifies.
    pub min_init_parallax_deg: f64,
}

impl Default for ReconstructConfig {
    fn default() -> Self {
        Self {
            two_view: RansacConfig::default(),
            pnp: RansacConfig::default().with_threshold(5e-3),
            tracks: TrackConfig::default(),
            refine: RefineConfig::default(),
            min_init_parallax_deg: 2.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Reconstruction {
    pub map: SceneMap,
    pub initial_pair: (String, String),
    /// Views in registration order, starting with the initial pair.
    pub registered: Vec<String>,
    /// Views that could not be registered, with the reason.
    pub skipped: Vec<(String, String)>,
    pub refine: RefineReport,
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn median_parallax(tv: &TwoViewResult) -> f64 {
    let c = tv.pose.center();
    median(tv.cloud.points.iter().map(|p| parallax_deg(p, &nalgebra::Vector3::zeros(), &c)).collect())
}

/// Full pipeline over `views` (id and intrinsics) and pairwise pixel matches.
/// The seed pair is the one with the most two-view inliers among pairs with
/// enough parallax; remaining views are registered greedily by association
/// count, each followed by track growth, and the map is refined at the end.
/// Ties go to the earlier view or matchset.
pub fn reconstruct(
    views: &[(String, CameraIntrinsics)],
    matches: &[PairMatches],
    cfg: &ReconstructConfig,
) -> Result<Reconstruction, MultiviewError> {
    if views.len() < 2 {
        return Err(MultiviewError::TooFewViews(views.len()));
    }
    let k_of = |id: &str| views.iter().find(|(v, _)| v == id).map(|(_, k)| k);
    for m in matches {
        for id in [&m.view_a, &m.view_b] {
            if k_of(id).is_none() {
                return Err(MultiviewError::UnknownView(id.clone()));
            }
        }
    }

    let attempts: Vec<Option<(TwoViewResult, f64)>> = matches
        .par_iter()
        .map(|m| {
            if m.view_a == m.view_b {
                return None;
            }
            let (ka, kb) = (k_of(&m.view_a)?, k_of(&m.view_b)?);
            let tv = two_view_pose(&m.corrs, ka, kb, &cfg.two_view).ok()?;
            let par = median_parallax(&tv);
            (tv.cloud.len() >= super::MIN_INIT_INLIERS).then_some((tv, par))
        })
        .collect();
    let pick = |need_parallax: bool| {
        let mut best: Option<usize> = None;
        for (i, a) in attempts.iter().enumerate() {
            let Some((tv, par)) = a else { continue };
            if need_parallax && *par < cfg.min_init_parallax_deg {
                continue;
            }
            let better =
                best.is_none_or(|b| tv.inlier_count() > attempts[b].as_ref().expect("picked").0.inlier_count());
            if better {
                best = Some(i);
            }
        }
        best
    };
    let seed = pick(true).or_else(|| pick(false)).ok_or(MultiviewError::NoInitialPair)?;
    let m0 = &matches[seed];
    let tv = &attempts[seed].as_ref().expect("picked").0;
    let ids = [m0.view_a.as_str(), m0.view_b.as_str()];
    let mut map = init_map(tv, &m0.corrs, ids, [k_of(ids[0]).unwrap(), k_of(ids[1]).unwrap()])?;
    let mut registered = vec![ids[0].to_string(), ids[1].to_string()];
    let mut skipped = Vec::new();

    let mut pending: Vec<&str> = views.iter().map(|(v, _)| v.as_str()).filter(|v| !ids.contains(v)).collect();
    while !pending.is_empty() {
        let counts: Vec<usize> = pending.iter().map(|v| associations(&map, v, matches).len()).collect();
        let (slot, &count) = counts.iter().enumerate().rev().max_by_key(|(_, c)| **c).expect("pending is non-empty");
        if count < PNP_SAMPLE {
            for v in pending.drain(..) {
                skipped.push((
                    v.to_string(),
                    MultiviewError::InsufficientAssociations { view: v.to_string(), found: count, needed: PNP_SAMPLE }
                        .to_string(),
                ));
            }
            break;
        }
        let view = pending.remove(slot);
        match register_view(&mut map, view, k_of(view).unwrap(), matches, &cfg.pnp) {
            Ok(_) => {
                registered.push(view.to_string());
                let touching: Vec<PairMatches> =
                    matches.iter().filter(|m| m.towards(view).is_some()).cloned().collect();
                triangulate_new_tracks(&mut map, &touching, &cfg.tracks);
            }
            Err(e) => skipped.push((view.to_string(), e.to_string())),
        }
    }

    let refine = refine_map(&mut map, &cfg.refine)?;
    Ok(Reconstruction { map, initial_pair: (ids[0].to_string(), ids[1].to_string()), registered, skipped, refine })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewPoseError {
    pub view_id: String,
    pub rotation_error_deg: f64,
    pub translation_error_deg: f64,
}

/// Errors of the non-anchor views against world-to-camera ground truth,
/// compared in the anchor's frame. Views without ground truth are skipped.
pub fn view_pose_errors(map: &SceneMap, gt: &[(String, RelativePose)]) -> Vec<ViewPoseError> {
    let find = |id: &str| gt.iter().find(|(v, _)| v == id).map(|(_, p)| p);
    let Some(anchor) = find(&map.views[0].view_id) else {
        return Vec::new();
    };
    map.views
        .iter()
        .skip(1)
        .filter_map(|v| {
            let g = find(&v.view_id)?;
            let r_rel = g.r() * anchor.r().transpose();
            let t_rel = g.t() - r_rel * anchor.t();
            Some(ViewPoseError {
                view_id: v.view_id.clone(),
                rotation_error_deg: rotation_geodesic_error(v.pose.r(), &r_rel),
                translation_error_deg: translation_direction_error(v.pose.t(), &t_rel),
            })
        })
        .collect()
}
