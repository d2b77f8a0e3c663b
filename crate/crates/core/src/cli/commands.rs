use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::Instant;

use nalgebra::Point2;
use rayon::prelude::*;
use serde::Serialize;

use super::reports::*;
use super::svg::{self, Overlay};
use super::{CliError, EvalArgs, OutputArgs, Pose2vArgs, PoseMvArgs, RetrieveArgs, SynthArgs};
use crate::evalharness::{
    compute_grouped_metrics, compute_pose_metrics, export_scene, inlier_stats, retrieval_map, synth_scene,
    ExportConfig, RankedQuery, SynthConfig,
};
use crate::geometry::{
    recover_translation_scale, rotation_geodesic_error, translation_direction_error, two_view_pose, BBox,
    CameraIntrinsics, Correspondence, PoseRecord, RansacConfig, RelativePose,
};
use crate::multiview::{reconstruct, reprojection_rms, view_pose_errors, PairMatches, ReconstructConfig};
use crate::retrieval::{hierarchical_retrieve, top_k_proposals, RetrievalConfig, RetrievalRecord};
use crate::tensorio::{load_manifest, MatchsetEntry, SceneManifest, ViewEntry};

struct Stopwatch {
    start: Instant,
    last: Instant,
    timing: Timing,
}

impl Stopwatch {
    fn new() -> Self {
        let now = Instant::now();
        Self { start: now, last: now, timing: Timing::new() }
    }

    fn lap(&mut self, stage: &str) {
        let now = Instant::now();
        self.timing.insert(stage.to_string(), ms(now - self.last));
        self.last = now;
    }

    fn finish(mut self) -> Timing {
        self.timing.insert("total".to_string(), ms(self.start.elapsed()));
        self.timing
    }
}

fn ms(d: std::time::Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

fn emit<T: Serialize>(report: &T, out: &OutputArgs) -> Result<(), CliError> {
    let mut json = serde_json::to_string_pretty(report).map_err(|e| CliError::Pipeline(e.to_string()))?;
    json.push('\n');
    match &out.report {
        Some(path) => {
            fs::write(path, json).map_err(|e| CliError::Pipeline(format!("cannot write {}: {e}", path.display())))
        }
        None => {
            print!("{json}");
            Ok(())
        }
    }
}

fn gt_pose(view: &ViewEntry) -> Result<Option<RelativePose>, CliError> {
    view.gt_pose
        .as_ref()
        .map(|p| RelativePose::metric(p.rotation(), p.translation()).map_err(|e| CliError::Usage(e.to_string())))
        .transpose()
}

pub fn synth(a: &SynthArgs) -> Result<(), CliError> {
    let mut clock = Stopwatch::new();
    let (w, h) = (a.width, a.height);
    let intrinsics = CameraIntrinsics::simple(a.focal, a.focal, w as f64 / 2.0, h as f64 / 2.0)?;
    let cfg = SynthConfig {
        n_points: a.points,
        noise_px: a.noise_px,
        outlier_ratio: a.outlier_ratio,
        n_views: a.views,
        rotation_range_deg: a.rotation_range_deg,
        depth_range: (a.depth_min, a.depth_max),
        intrinsics,
        image_size: (w, h),
        seed: a.seed,
    };
    let export = ExportConfig { embedding_dim: a.embedding_dim, n_proposals: a.proposals };
    let scene = synth_scene(&cfg)?;
    clock.lap("synth");
    fs::create_dir_all(&a.out).map_err(|e| CliError::Pipeline(format!("cannot create {}: {e}", a.out.display())))?;
    let exported = export_scene(&scene, &export, &a.out)?;
    clock.lap("export");
    let report = SynthReport {
        version: REPORT_VERSION,
        kind: "synth".into(),
        manifest: exported.manifest_path.display().to_string(),
        n_views: exported.manifest.views.len(),
        n_matchsets: exported.manifest.matchsets.len(),
        gt_proposal: exported.gt_proposal,
        timing_ms: clock.finish(),
    };
    emit(&report, &a.output)
}

pub fn retrieve(a: &RetrieveArgs) -> Result<(), CliError> {
    let cfg = RetrievalConfig::new(a.top_k, a.sigma)?;
    let mut clock = Stopwatch::new();
    let manifest = load_manifest(&a.manifest)?;
    let prompt = manifest.prompt(&a.prompt)?;
    let target_view = match &a.view {
        Some(v) => {
            manifest.view(v)?;
            v.clone()
        }
        None => {
            let candidates: Vec<&String> = manifest.proposals.keys().filter(|v| **v != prompt.view_id).collect();
            match candidates.as_slice() {
                [only] => (*only).clone(),
                [] => return Err(CliError::Usage("manifest has no proposals outside the prompt view".into())),
                _ => return Err(CliError::Usage("several views hold proposals; pass --view".into())),
            }
        }
    };
    let proposals = manifest
        .proposals
        .get(&target_view)
        .filter(|p| !p.is_empty())
        .ok_or_else(|| CliError::Usage(format!("view {target_view} has no proposals")))?;
    let prompt_emb = manifest.load_embedding(&prompt.embedding_path)?;
    let embeddings =
        proposals.iter().map(|p| manifest.load_embedding(&p.embedding_path)).collect::<Result<Vec<_>, _>>()?;
    clock.lap("load");
    let matcher = |i: usize| -> Result<_, CliError> {
        let entry = manifest
            .prompt_matchset(&prompt.prompt_id, &target_view, i)
            .ok_or_else(|| CliError::Pipeline(format!("no matchset for proposal {i}")))?;
        Ok(manifest.load_matchset(entry)?)
    };
    let outcome = hierarchical_retrieve(&prompt_emb, &embeddings, matcher, &cfg)?;
    clock.lap("retrieve");
    let mut ranking = vec![outcome.best_index];
    ranking.extend(
        top_k_proposals(&outcome.similarity_row, embeddings.len()).into_iter().filter(|&i| i != outcome.best_index),
    );
    let report = RetrieveReport {
        version: REPORT_VERSION,
        kind: "retrieve".into(),
        target_view,
        top_k: cfg.top_k,
        sigma: cfg.sigma,
        ranking,
        retrieval: RetrievalRecord::new(&prompt.prompt_id, &outcome),
        gt_proposal: prompt.gt_proposal,
        timing_ms: clock.finish(),
    };
    emit(&report, &a.output)
}

fn residual_stats(residuals: &[f64]) -> ResidualStats {
    if residuals.is_empty() {
        return ResidualStats { mean: 0.0, median: 0.0, max: 0.0 };
    }
    let mut v = residuals.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let median = if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) };
    ResidualStats { mean: v.iter().sum::<f64>() / n as f64, median, max: v[n - 1] }
}

/// A view-pair matchset oriented as requested.
struct PairJob<'a> {
    view_a: String,
    view_b: String,
    entry: &'a MatchsetEntry,
    flipped: bool,
}

fn pair_jobs<'a>(manifest: &'a SceneManifest, pair: &Option<(String, String)>) -> Result<Vec<PairJob<'a>>, CliError> {
    match pair {
        Some((a, b)) => {
            manifest.view(a)?;
            manifest.view(b)?;
            let (entry, flipped) = manifest
                .view_pair_matchset(a, b)
                .ok_or_else(|| CliError::Usage(format!("no matchset between {a} and {b}")))?;
            Ok(vec![PairJob { view_a: a.clone(), view_b: b.clone(), entry, flipped }])
        }
        None => {
            let jobs: Vec<PairJob> = manifest
                .matchsets
                .iter()
                .filter(|m| m.is_view_pair())
                .map(|m| PairJob {
                    view_a: m.view_a.clone(),
                    view_b: m.view_b.clone().expect("view pair"),
                    entry: m,
                    flipped: false,
                })
                .collect();
            if jobs.is_empty() {
                return Err(CliError::Usage("manifest has no view-pair matchsets".into()));
            }
            Ok(jobs)
        }
    }
}

struct PairOutput {
    record: PairPoseRecord,
    svg: Option<String>,
}

fn solve_pair(
    manifest: &SceneManifest,
    job: &PairJob,
    cfg: &RansacConfig,
    scale_prompt: Option<&str>,
    want_svg: bool,
) -> Result<PairOutput, CliError> {
    let va = manifest.view(&job.view_a)?;
    let vb = manifest.view(&job.view_b)?;
    let (ka, kb) = (va.camera()?, vb.camera()?);
    let mut corrs = manifest.load_matchset(job.entry)?.correspondences();
    if job.flipped {
        corrs = corrs.iter().map(Correspondence::swapped).collect();
    }
    let tv = two_view_pose(&corrs, &ka, &kb, cfg)
        .map_err(|e| CliError::Pipeline(format!("{} -> {}: {e}", job.view_a, job.view_b)))?;

    let (pose, cloud, scale) = match scale_prompt {
        Some(id) => {
            let prompt = manifest.prompt(id)?;
            if prompt.view_id != job.view_a {
                return Err(CliError::Usage(format!(
                    "prompt {id} lies in {}, not in support view {}",
                    prompt.view_id, job.view_a
                )));
            }
            let s = recover_translation_scale(&tv.pose, &tv.cloud, &BBox::from_array(prompt.bbox_px), &ka)?;
            (s.pose, s.cloud, Some(s.scale))
        }
        None => (tv.pose, tv.cloud.clone(), None),
    };

    let (mut rotation_error_deg, mut translation_error_deg) = (None, None);
    if let (Some(ga), Some(gb)) = (gt_pose(va)?, gt_pose(vb)?) {
        let r = gb.r() * ga.r().transpose();
        let t = gb.t() - r * ga.t();
        rotation_error_deg = Some(rotation_geodesic_error(pose.r(), &r));
        translation_error_deg = Some(translation_direction_error(pose.t(), &t));
    }
    let inlier_labels = match manifest.load_inlier_labels(job.entry)? {
        Some(labels) => {
            let s = inlier_stats(&tv.inlier_mask, &labels)?;
            Some(InlierSummary { recall: s.recall(), false_inlier_rate: s.false_inlier_rate() })
        }
        None => None,
    };

    let svg = want_svg.then(|| {
        let inliers: Vec<(Point2<f64>, Point2<f64>)> =
            corrs.iter().zip(&tv.inlier_mask).filter(|(_, &m)| m).map(|(c, _)| (c.a, c.b)).collect();
        svg::render(&Overlay {
            width: vb.image_size[0],
            height: vb.image_size[1],
            k_support: &ka,
            k_target: &kb,
            essential: &tv.essential,
            pose: &pose,
            cloud: &cloud,
            inliers: &inliers,
        })
    });

    let rec = PoseRecord::from(&pose);
    Ok(PairOutput {
        record: PairPoseRecord {
            view_a: job.view_a.clone(),
            view_b: job.view_b.clone(),
            r: rec.r,
            t: rec.t,
            scaled: pose.scaled(),
            scale,
            matches: corrs.len(),
            inliers: tv.inlier_mask.iter().filter(|&&m| m).count(),
            triangulated: cloud.len(),
            residual_stats: residual_stats(&tv.inlier_residuals),
            rotation_error_deg,
            translation_error_deg,
            inlier_labels,
        },
        svg,
    })
}

pub fn pose2v(a: &Pose2vArgs) -> Result<(), CliError> {
    let mut cfg = RansacConfig::default().with_seed(a.seed).with_threshold(a.threshold);
    cfg.max_iterations = a.max_iterations;
    cfg.validate()?;
    let mut clock = Stopwatch::new();
    let manifest = load_manifest(&a.manifest)?;
    let jobs = pair_jobs(&manifest, &a.pair)?;
    if a.svg.is_some() && jobs.len() != 1 {
        return Err(CliError::Usage("--svg needs a single pair; pass --pair".into()));
    }
    clock.lap("load");
    let outputs = jobs
        .par_iter()
        .map(|job| solve_pair(&manifest, job, &cfg, a.scale_prompt.as_deref(), a.svg.is_some()))
        .collect::<Result<Vec<_>, _>>()?;
    clock.lap("solve");
    if let (Some(path), Some(svg)) = (&a.svg, outputs.first().and_then(|o| o.svg.as_ref())) {
        fs::write(path, svg).map_err(|e| CliError::Pipeline(format!("cannot write {}: {e}", path.display())))?;
    }
    let report = Pose2vReport {
        version: REPORT_VERSION,
        kind: "pose2v".into(),
        seed: a.seed,
        threshold: a.threshold,
        pairs: outputs.into_iter().map(|o| o.record).collect(),
        timing_ms: clock.finish(),
    };
    emit(&report, &a.output)
}

pub fn pose_mv(a: &PoseMvArgs) -> Result<(), CliError> {
    if let Some(n) = a.views {
        if n < 2 {
            return Err(CliError::Usage(format!("--views must be at least 2, got {n}")));
        }
    }
    let mut cfg = ReconstructConfig::default();
    cfg.two_view = cfg.two_view.with_seed(a.seed).with_threshold(a.threshold);
    cfg.pnp = cfg.pnp.with_seed(a.seed).with_threshold(a.pnp_threshold);
    cfg.two_view.validate()?;
    cfg.pnp.validate()?;
    let mut clock = Stopwatch::new();
    let manifest = load_manifest(&a.manifest)?;
    let n = a.views.unwrap_or(manifest.views.len());
    if n > manifest.views.len() {
        return Err(CliError::Usage(format!("--views {n} exceeds the {} views in the manifest", manifest.views.len())));
    }
    let selected = &manifest.views[..n];
    let views = selected.iter().map(|v| Ok((v.view_id.clone(), v.camera()?))).collect::<Result<Vec<_>, CliError>>()?;
    let in_selection = |id: &str| selected.iter().any(|v| v.view_id == id);
    let mut matches = Vec::new();
    for m in manifest.matchsets.iter().filter(|m| m.is_view_pair()) {
        let b = m.view_b.as_deref().expect("view pair");
        if in_selection(&m.view_a) && in_selection(b) {
            matches.push(PairMatches {
                view_a: m.view_a.clone(),
                view_b: b.to_string(),
                corrs: manifest.load_matchset(m)?.correspondences(),
            });
        }
    }
    let gt = selected
        .iter()
        .filter_map(|v| gt_pose(v).transpose().map(|p| p.map(|p| (v.view_id.clone(), p))))
        .collect::<Result<Vec<_>, _>>()?;
    clock.lap("load");
    let rec = reconstruct(&views, &matches, &cfg)?;
    clock.lap("reconstruct");
    let view_errors = (!gt.is_empty()).then(|| view_pose_errors(&rec.map, &gt));
    let report = PoseMvReport {
        version: REPORT_VERSION,
        kind: "pose-mv".into(),
        seed: a.seed,
        initial_pair: [rec.initial_pair.0.clone(), rec.initial_pair.1.clone()],
        registered: rec.registered.clone(),
        skipped: rec.skipped.iter().map(|(v, r)| SkippedView { view_id: v.clone(), reason: r.clone() }).collect(),
        reprojection_rms_px: reprojection_rms(&rec.map),
        refine: RefineSummary {
            initial_cost: rec.refine.initial_cost,
            final_cost: rec.refine.final_cost,
            iterations: rec.refine.iterations,
            converged: rec.refine.converged,
            pruned_observations: rec.refine.pruned_observations,
        },
        view_errors,
        map: rec.map.to_record(),
        timing_ms: clock.finish(),
    };
    emit(&report, &a.output)
}

fn read_report(path: &Path) -> Result<(String, serde_json::Value), CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{} is not JSON: {e}", path.display())))?;
    let kind = value
        .get("kind")
        .and_then(|k| k.as_str())
        .ok_or_else(|| CliError::Usage(format!("{} has no report kind", path.display())))?
        .to_string();
    Ok((kind, value))
}

fn parse_as<T: serde::de::DeserializeOwned>(path: &Path, value: serde_json::Value) -> Result<T, CliError> {
    serde_json::from_value(value).map_err(|e| CliError::Usage(format!("malformed report {}: {e}", path.display())))
}

pub fn eval(a: &EvalArgs) -> Result<(), CliError> {
    if a.reports.is_empty() {
        return Err(CliError::Usage("no reports given".into()));
    }
    let clock = Stopwatch::new();
    let mut rotation: Vec<(String, f64)> = Vec::new();
    let mut translation: Vec<f64> = Vec::new();
    let mut queries: Vec<RankedQuery> = Vec::new();
    for path in &a.reports {
        let (kind, value) = read_report(path)?;
        match kind.as_str() {
            "pose2v" => {
                let r: Pose2vReport = parse_as(path, value)?;
                for p in &r.pairs {
                    if let (Some(re), Some(te)) = (p.rotation_error_deg, p.translation_error_deg) {
                        rotation.push((format!("{}/{}", p.view_a, p.view_b), re));
                        translation.push(te);
                    }
                }
            }
            "pose-mv" => {
                let r: PoseMvReport = parse_as(path, value)?;
                for e in r.view_errors.iter().flatten() {
                    rotation.push((e.view_id.clone(), e.rotation_error_deg));
                    translation.push(e.translation_error_deg);
                }
            }
            "retrieve" => {
                let r: RetrieveReport = parse_as(path, value)?;
                if let Some(gt) = r.gt_proposal {
                    queries.push(RankedQuery { ranking: r.ranking, gt });
                }
            }
            other => return Err(CliError::Usage(format!("{}: cannot evaluate a `{other}` report", path.display()))),
        }
    }
    if rotation.is_empty() && queries.is_empty() {
        return Err(CliError::Usage("reports carry no ground-truth errors or labelled queries".into()));
    }
    let rot_errs: Vec<f64> = rotation.iter().map(|(_, e)| *e).collect();
    let (rot, trans, groups) = if rotation.is_empty() {
        (None, None, BTreeMap::new())
    } else {
        (
            Some(compute_pose_metrics(&rot_errs)?),
            Some(compute_pose_metrics(&translation)?),
            compute_grouped_metrics(rotation.iter().map(|(g, e)| (g.as_str(), *e)))?,
        )
    };
    let map = if queries.is_empty() { None } else { Some(retrieval_map(&queries)?) };
    let report = EvalReport {
        version: REPORT_VERSION,
        kind: "eval".into(),
        inputs: a.reports.len(),
        rotation: rot,
        translation: trans,
        rotation_by_group: groups,
        retrieval_map: map,
        timing_ms: clock.finish(),
    };
    emit(&report, &a.output)
}
