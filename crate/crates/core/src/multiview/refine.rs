//! Levenberg-Marquardt over all non-anchor poses and all points, solved through
//! the reduced camera system.
//!
//! Rotations take left increments `R <- exp(w) R`, translations additive ones.
//! The anchor is fixed and the second view's translation moves on the sphere
//! of radius `baseline_scale` (two tangent parameters), which pins the gauge.

use nalgebra::{DMatrix, DVector, Matrix3, Matrix6, SMatrix, Vector2, Vector3, Vector6};
use rayon::prelude::*;

use super::map::{SceneMap, Track};
use super::MultiviewError;
use crate::geometry::{nearest_rotation, skew, so3_exp, RelativePose};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefineConfig {
    pub max_iters: usize,
    /// Stop when an accepted step changes the cost by less than this fraction.
    pub convergence_tol: f64,
    pub initial_lambda: f64,
    /// Observations with residual above `prune_factor * RMS` are removed
    /// between rounds; 0 disables pruning.
    pub prune_factor: f64,
    pub max_rounds: usize,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self { max_iters: 100, convergence_tol: 1e-10, initial_lambda: 1e-3, prune_factor: 4.0, max_rounds: 3 }
    }
}

impl RefineConfig {
    pub fn validate(&self) -> Result<(), MultiviewError> {
        let ok = self.max_iters > 0
            && self.convergence_tol >= 0.0
            && self.initial_lambda > 0.0
            && self.prune_factor >= 0.0
            && self.max_rounds > 0;
        if ok {
            Ok(())
        } else {
            Err(MultiviewError::InvalidConfig(format!("{self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefineReport {
    pub initial_cost: f64,
    pub final_cost: f64,
    /// Cost after every accepted step, starting with the initial cost of each round.
    pub cost_history: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub pruned_observations: usize,
    pub pruned_tracks: usize,
}

/// Residuals below this are never pruned, so exact maps stay intact.
const PRUNE_FLOOR_PX: f64 = 1e-6;
const MAX_LAMBDA: f64 = 1e16;

/// Parameter layout of the cameras: anchor 0, second view 5, others 6.
struct Layout {
    offset: Vec<usize>,
    dim: Vec<usize>,
    /// Maps the 6-vector `(w, t)` derivative space onto each view's parameters.
    basis: Vec<SMatrix<f64, 6, 6>>,
    total: usize,
}

fn tangent_basis(t: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let n = t.normalize();
    let helper = if n.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
    let u = n.cross(&helper).normalize();
    (u, n.cross(&u))
}

impl Layout {
    fn new(map: &SceneMap) -> Self {
        let mut offset = Vec::with_capacity(map.views.len());
        let mut dim = Vec::with_capacity(map.views.len());
        let mut basis = Vec::with_capacity(map.views.len());
        let mut total = 0;
        for (i, v) in map.views.iter().enumerate() {
            let mut b = SMatrix::<f64, 6, 6>::zeros();
            let d = match i {
                0 => 0,
                1 => {
                    b.fixed_view_mut::<3, 3>(0, 0).copy_from(&Matrix3::identity());
                    let (u, w) = tangent_basis(v.pose.t());
                    b.fixed_view_mut::<3, 1>(3, 3).copy_from(&u);
                    b.fixed_view_mut::<3, 1>(3, 4).copy_from(&w);
                    5
                }
                _ => {
                    b = Matrix6::identity();
                    6
                }
            };
            offset.push(total);
            dim.push(d);
            basis.push(b);
            total += d;
        }
        Self { offset, dim, basis, total }
    }
}

/// Linearization of one track: point block, gradient and per-observation
/// camera blocks, all in the views' parameter spaces (padded to 6).
struct TrackBlock {
    v: Matrix3<f64>,
    g_p: Vector3<f64>,
    obs: Vec<ObsBlock>,
}

struct ObsBlock {
    view: usize,
    u: Matrix6<f64>,
    w: SMatrix<f64, 6, 3>,
    g_c: Vector6<f64>,
}

fn linearize(map: &SceneMap, layout: &Layout, track: &Track) -> TrackBlock {
    let mut block = TrackBlock { v: Matrix3::zeros(), g_p: Vector3::zeros(), obs: Vec::new() };
    for o in &track.observations {
        let view = &map.views[o.view];
        let k = &view.intrinsics;
        let rp = view.pose.r() * track.point.coords;
        let q = rp + view.pose.t();
        if q.z <= 0.0 {
            continue;
        }
        let iz = 1.0 / q.z;
        let (x, y) = (q.x * iz, q.y * iz);
        let res = Vector2::new(k.fx * x + k.skew * y + k.cx - o.px.x, k.fy * y + k.cy - o.px.y);
        let dpix = SMatrix::<f64, 2, 3>::new(
            k.fx * iz,
            k.skew * iz,
            -(k.fx * x + k.skew * y) * iz, //
            0.0,
            k.fy * iz,
            -k.fy * y * iz,
        );
        let mut dq = SMatrix::<f64, 3, 6>::zeros();
        dq.fixed_view_mut::<3, 3>(0, 0).copy_from(&(-skew(&rp)));
        dq.fixed_view_mut::<3, 3>(0, 3).copy_from(&Matrix3::identity());
        let jc = dpix * dq * layout.basis[o.view];
        let jp = dpix * view.pose.r();
        block.v += jp.transpose() * jp;
        block.g_p += jp.transpose() * res;
        if layout.dim[o.view] > 0 {
            block.obs.push(ObsBlock {
                view: o.view,
                u: jc.transpose() * jc,
                w: jc.transpose() * jp,
                g_c: jc.transpose() * res,
            });
        }
    }
    block
}

fn damp3(m: &Matrix3<f64>, lambda: f64) -> Matrix3<f64> {
    let mut d = *m;
    for i in 0..3 {
        d[(i, i)] += lambda * m[(i, i)].max(1e-12);
    }
    d
}

/// Solves the damped normal equations; returns camera and point steps.
fn solve(layout: &Layout, blocks: &[TrackBlock], lambda: f64) -> Option<(DVector<f64>, Vec<Vector3<f64>>)> {
    let n = layout.total;
    let mut s = DMatrix::<f64>::zeros(n, n);
    let mut rhs = DVector::<f64>::zeros(n);
    let mut u_diag = DVector::<f64>::zeros(n);
    let mut v_inv = Vec::with_capacity(blocks.len());
    for b in blocks {
        for o in &b.obs {
            let (off, d) = (layout.offset[o.view], layout.dim[o.view]);
            for i in 0..d {
                for j in 0..d {
                    s[(off + i, off + j)] += o.u[(i, j)];
                }
                rhs[off + i] -= o.g_c[i];
                u_diag[off + i] += o.u[(i, i)];
            }
        }
    }
    for i in 0..n {
        s[(i, i)] += lambda * u_diag[i].max(1e-12);
    }
    for b in blocks {
        let vi = damp3(&b.v, lambda).try_inverse()?;
        for oa in &b.obs {
            let (oa_off, da) = (layout.offset[oa.view], layout.dim[oa.view]);
            let wv = oa.w * vi;
            let r = wv * b.g_p;
            for i in 0..da {
                rhs[oa_off + i] += r[i];
            }
            for ob in &b.obs {
                let (ob_off, db) = (layout.offset[ob.view], layout.dim[ob.view]);
                let m = wv * ob.w.transpose();
                for i in 0..da {
                    for j in 0..db {
                        s[(oa_off + i, ob_off + j)] -= m[(i, j)];
                    }
                }
            }
        }
        v_inv.push(vi);
    }
    let dc = if n == 0 { DVector::zeros(0) } else { s.cholesky()?.solve(&rhs) };
    let dp = blocks
        .iter()
        .zip(&v_inv)
        .map(|(b, vi)| {
            let mut r = -b.g_p;
            for o in &b.obs {
                let off = layout.offset[o.view];
                let mut step = Vector6::zeros();
                for i in 0..layout.dim[o.view] {
                    step[i] = dc[off + i];
                }
                r -= o.w.transpose() * step;
            }
            vi * r
        })
        .collect();
    Some((dc, dp))
}

fn apply(map: &SceneMap, layout: &Layout, dc: &DVector<f64>, dp: &[Vector3<f64>]) -> Option<SceneMap> {
    let mut out = map.clone();
    for (i, view) in out.views.iter_mut().enumerate().skip(1) {
        let off = layout.offset[i];
        let mut step = Vector6::zeros();
        for k in 0..layout.dim[i] {
            step[k] = dc[off + k];
        }
        let full = layout.basis[i] * step;
        let w = Vector3::new(full[0], full[1], full[2]);
        let r = nearest_rotation(&(so3_exp(&w) * view.pose.r()));
        let mut t = view.pose.t() + Vector3::new(full[3], full[4], full[5]);
        if i == 1 {
            t *= map.gauge.baseline_scale / t.norm();
        }
        view.pose = RelativePose::metric(r, t).ok()?;
    }
    for (track, d) in out.tracks.iter_mut().zip(dp) {
        track.point += d;
    }
    Some(out)
}

/// One LM run to convergence or `max_iters`; returns whether it converged.
fn levenberg_marquardt(map: &mut SceneMap, cfg: &RefineConfig, report: &mut RefineReport) -> bool {
    let mut cost = map.cost();
    report.cost_history.push(cost);
    let mut lambda = cfg.initial_lambda;
    for _ in 0..cfg.max_iters {
        if cost == 0.0 {
            return true;
        }
        report.iterations += 1;
        let layout = Layout::new(map);
        let blocks: Vec<TrackBlock> = map.tracks.par_iter().map(|t| linearize(map, &layout, t)).collect();
        loop {
            if lambda > MAX_LAMBDA {
                // No downhill step exists at any damping: a local minimum.
                return true;
            }
            let candidate = solve(&layout, &blocks, lambda).and_then(|(dc, dp)| apply(map, &layout, &dc, &dp));
            let Some(candidate) = candidate else {
                lambda *= 10.0;
                continue;
            };
            let new_cost = candidate.cost();
            if new_cost <= cost {
                let rel = (cost - new_cost) / cost;
                *map = candidate;
                cost = new_cost;
                report.cost_history.push(cost);
                lambda = (lambda / 10.0).max(1e-15);
                if rel < cfg.convergence_tol {
                    return true;
                }
                break;
            }
            lambda *= 10.0;
        }
    }
    false
}

/// Removes observations behind their camera or above the residual cutoff,
/// then tracks left with fewer than two observations.
fn prune(map: &mut SceneMap, factor: f64) -> (usize, usize) {
    let rms = super::reprojection_rms(map);
    let cutoff = (factor * rms).max(PRUNE_FLOOR_PX);
    let mut removed_obs = 0;
    let views = map.views.clone();
    for track in &mut map.tracks {
        let before = track.observations.len();
        let point = track.point;
        track.observations.retain(|o| {
            let v = &views[o.view];
            v.depth(&point) > 0.0 && v.project(&point).is_some_and(|q| (q - o.px).norm() <= cutoff)
        });
        removed_obs += before - track.observations.len();
    }
    let before = map.tracks.len();
    map.tracks.retain(|t| t.observations.len() >= 2);
    (removed_obs, before - map.tracks.len())
}

/// Jointly refines poses and points. Runs LM, prunes outliers and violators of
/// cheirality, and repeats while pruning changes the map. Non-convergence
/// within `max_iters` is reported through the flag, with the best iterate kept.
pub fn refine_map(map: &mut SceneMap, cfg: &RefineConfig) -> Result<RefineReport, MultiviewError> {
    cfg.validate()?;
    map.validate()?;
    let mut report = RefineReport {
        initial_cost: map.cost(),
        final_cost: 0.0,
        cost_history: Vec::new(),
        iterations: 0,
        converged: false,
        pruned_observations: 0,
        pruned_tracks: 0,
    };
    if !report.initial_cost.is_finite() {
        // Points behind a camera: drop them before optimizing.
        let (o, t) = prune(map, f64::INFINITY);
        report.pruned_observations += o;
        report.pruned_tracks += t;
    }
    for _ in 0..cfg.max_rounds {
        report.converged = levenberg_marquardt(map, cfg, &mut report);
        if cfg.prune_factor == 0.0 {
            break;
        }
        let (o, t) = prune(map, cfg.prune_factor);
        report.pruned_observations += o;
        report.pruned_tracks += t;
        if o == 0 {
            break;
        }
    }
    report.final_cost = map.cost();
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evalharness::{synth_scene, SynthConfig};
    use crate::geometry::{rotation_geodesic_error, two_view_pose, RansacConfig};
    use crate::multiview::{init_map, register_view, reprojection_rms, PairMatches};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn build(n_views: usize, noise: f64, seed: u64) -> (SceneMap, crate::evalharness::SynthScene) {
        let scene = synth_scene(&SynthConfig { n_views, noise_px: noise, seed, ..Default::default() }).unwrap();
        let k = scene.intrinsics();
        let matches: Vec<PairMatches> = scene
            .pairs
            .iter()
            .map(|p| PairMatches {
                view_a: format!("view_{}", p.view_a),
                view_b: format!("view_{}", p.view_b),
                corrs: p.correspondences(),
            })
            .collect();
        let cfg = RansacConfig::default().with_threshold(5e-3);
        let corrs = scene.pair(0, 1).unwrap().correspondences();
        let tv = two_view_pose(&corrs, k, k, &cfg).unwrap();
        let mut map = init_map(&tv, &corrs, ["view_0", "view_1"], [k, k]).unwrap();
        for v in 2..n_views {
            register_view(&mut map, &format!("view_{v}"), k, &matches, &cfg).unwrap();
        }
        (map, scene)
    }

    #[test]
    fn exact_map_is_a_fixed_point() {
        let (mut map, _) = build(4, 0.0, 1);
        let before = map.cost();
        let report = refine_map(&mut map, &RefineConfig::default()).unwrap();
        assert!(before < 1e-12);
        assert!((report.final_cost - report.initial_cost).abs() <= 1e-12);
        assert_eq!(report.pruned_observations, 0);
    }

    #[test]
    fn recovers_from_perturbation() {
        let (mut map, scene) = build(8, 0.0, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        map.perturb(1.0, 0.01, &mut rng);
        assert!(reprojection_rms(&map) > 1.0);
        let report = refine_map(&mut map, &RefineConfig::default()).unwrap();
        map.validate().unwrap();
        assert!(reprojection_rms(&map) < 0.1, "{}", reprojection_rms(&map));
        assert!(report.final_cost <= report.initial_cost);
        assert!(report.cost_history.windows(2).all(|w| w[1] <= w[0]));
        for (i, v) in map.views.iter().enumerate() {
            let gt = scene.relative_pose(0, i);
            assert!(rotation_geodesic_error(v.pose.r(), gt.r()) < 0.1);
        }
    }

    #[test]
    fn noisy_refinement_reduces_cost() {
        let (mut map, _) = build(6, 1.0, 3);
        let report = refine_map(&mut map, &RefineConfig::default()).unwrap();
        assert!(report.final_cost <= report.initial_cost);
        assert!(report.converged);
        map.validate().unwrap();
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (mut map, _) = build(3, 0.5, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        map.perturb(0.5, 0.005, &mut rng);
        let layout = Layout::new(&map);
        let blocks: Vec<TrackBlock> = map.tracks.iter().map(|t| linearize(&map, &layout, t)).collect();
        // Camera gradient: 0.5 * d(cost)/d(param) = sum of g_c.
        let mut g = DVector::<f64>::zeros(layout.total);
        for b in &blocks {
            for o in &b.obs {
                for i in 0..layout.dim[o.view] {
                    g[layout.offset[o.view] + i] += o.g_c[i];
                }
            }
        }
        let h = 1e-6;
        for p in 0..layout.total {
            let mut dc = DVector::zeros(layout.total);
            dc[p] = h;
            let zero = vec![Vector3::zeros(); map.tracks.len()];
            let plus = apply(&map, &layout, &dc, &zero).unwrap().cost();
            dc[p] = -h;
            let minus = apply(&map, &layout, &dc, &zero).unwrap().cost();
            let fd = (plus - minus) / (4.0 * h);
            assert!((fd - g[p]).abs() < 1e-4 * (1.0 + g[p].abs()), "param {p}: {fd} vs {}", g[p]);
        }
    }
}
