//! Writes a synthetic scene as a manifest bundle so every pipeline stage can be
//! driven from files.
//!
//! Views are `view_0 .. view_{n-1}` with ground-truth poses. One prompt
//! (`prompt_0`) is cut from `view_0` around the projected object. `view_1`
//! carries the proposals: the true object, a look-alike whose embedding is
//! closer to the prompt but whose local matches are weak, and unrelated
//! clutter. Each proposal has a prompt matchset, so global retrieval prefers
//! the look-alike while the confidence criterion recovers the true object.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DVector, Point2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::masks::Mask;
use super::synth::SynthScene;
use super::EvalError;
use crate::geometry::{projected_bbox, BBox, PoseRecord};
use crate::tensorio::{
    save_manifest, write_tensor, MatchsetEntry, PromptEntry, ProposalEntry, SceneManifest, Tensor, ViewEntry,
};

pub const MANIFEST_FILE: &str = "manifest.json";
const TENSOR_DIR: &str = "tensors";

#[derive(Debug, Clone, PartialEq)]
pub struct ExportConfig {
    pub embedding_dim: usize,
    /// Proposals in the target view, at least 2 (object and look-alike).
    pub n_proposals: usize,
}

impl Default for ExportConfig {
    fn default() -> Self {
        Self { embedding_dim: 32, n_proposals: 3 }
    }
}

#[derive(Debug, Clone)]
pub struct ExportedScene {
    pub manifest_path: PathBuf,
    pub manifest: SceneManifest,
    pub gt_proposal: usize,
}

struct Writer {
    root: PathBuf,
}

impl Writer {
    fn put(&self, name: &str, t: &Tensor) -> Result<String, EvalError> {
        let rel = format!("{TENSOR_DIR}/{name}.ptns");
        write_tensor(self.root.join(&rel), t)?;
        Ok(rel)
    }

    fn points(&self, name: &str, pts: &[Point2<f64>]) -> Result<String, EvalError> {
        let flat = pts.iter().flat_map(|p| [p.x, p.y]).collect();
        self.put(name, &Tensor::from_f64(vec![pts.len(), 2], flat)?)
    }

    fn vector(&self, name: &str, v: &[f64]) -> Result<String, EvalError> {
        self.put(name, &Tensor::from_f64(vec![v.len()], v.to_vec())?)
    }

    fn embedding(&self, name: &str, v: &DVector<f64>) -> Result<String, EvalError> {
        let f: Vec<f32> = v.iter().map(|&x| x as f32).collect();
        self.put(name, &Tensor::from_f32(vec![f.len()], f)?)
    }

    fn labels(&self, name: &str, l: &[bool]) -> Result<String, EvalError> {
        let b = l.iter().map(|&x| u8::from(x)).collect();
        self.put(name, &Tensor::from_u8(vec![l.len()], b)?)
    }

    fn matchset(
        &self,
        stem: &str,
        a: &[Point2<f64>],
        b: &[Point2<f64>],
        conf: &[f64],
        labels: Option<&[bool]>,
    ) -> Result<(String, String, String, Option<String>), EvalError> {
        Ok((
            self.points(&format!("{stem}_points_a"), a)?,
            self.points(&format!("{stem}_points_b"), b)?,
            self.vector(&format!("{stem}_confidence"), conf)?,
            labels.map(|l| self.labels(&format!("{stem}_labels"), l)).transpose()?,
        ))
    }
}

fn view_id(i: usize) -> String {
    format!("view_{i}")
}

fn perturbed<R: Rng>(rng: &mut R, base: &DVector<f64>, sigma: f64) -> DVector<f64> {
    base.map(|x| {
        let n: f64 = StandardNormal.sample(rng);
        x + sigma * n
    })
}

fn gaussian<R: Rng>(rng: &mut R, dim: usize) -> DVector<f64> {
    DVector::from_fn(dim, |_, _| StandardNormal.sample(&mut *rng))
}

/// Integer pixel box covering `b`, clipped to the image.
fn pixel_box(b: &BBox, size: (u32, u32)) -> (usize, usize, usize, usize) {
    let x0 = b.x.floor().max(0.0) as usize;
    let y0 = b.y.floor().max(0.0) as usize;
    let x1 = ((b.x + b.w).ceil() as usize).clamp(x0 + 1, size.0 as usize);
    let y1 = ((b.y + b.h).ceil() as usize).clamp(y0 + 1, size.1 as usize);
    (x0, y0, x1, y1)
}

fn random_box<R: Rng>(rng: &mut R, size: (u32, u32)) -> (usize, usize, usize, usize) {
    let (w, h) = (size.0 as usize, size.1 as usize);
    let bw = rng.random_range(w / 8..=w / 3).max(1);
    let bh = rng.random_range(h / 8..=h / 3).max(1);
    let x0 = rng.random_range(0..=w - bw);
    let y0 = rng.random_range(0..=h - bh);
    (x0, y0, x0 + bw, y0 + bh)
}

fn box_array((x0, y0, x1, y1): (usize, usize, usize, usize)) -> [f64; 4] {
    [x0 as f64, y0 as f64, (x1 - x0) as f64, (y1 - y0) as f64]
}

/// Random matches with confidences drawn from `conf_range`.
fn weak_matches<R: Rng>(
    rng: &mut R,
    n: usize,
    size: (u32, u32),
    conf_range: (f64, f64),
) -> (Vec<Point2<f64>>, Vec<Point2<f64>>, Vec<f64>) {
    let pixel = |rng: &mut R| Point2::new(rng.random_range(0.0..size.0 as f64), rng.random_range(0.0..size.1 as f64));
    let mut a = Vec::with_capacity(n);
    let mut b = Vec::with_capacity(n);
    let mut c = Vec::with_capacity(n);
    for _ in 0..n {
        a.push(pixel(rng));
        b.push(pixel(rng));
        c.push(rng.random_range(conf_range.0..conf_range.1));
    }
    (a, b, c)
}

/// Writes `scene` under `dir` (created if missing) and returns the manifest.
/// Output bytes depend only on the scene and `cfg`.
pub fn export_scene(scene: &SynthScene, cfg: &ExportConfig, dir: &Path) -> Result<ExportedScene, EvalError> {
    if cfg.n_proposals < 2 || cfg.embedding_dim == 0 {
        return Err(EvalError::InvalidConfig(
            "export needs at least 2 proposals and a positive embedding dimension".into(),
        ));
    }
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| EvalError::Io { path, source }
    };
    let tensor_dir = dir.join(TENSOR_DIR);
    fs::create_dir_all(&tensor_dir).map_err(io(&tensor_dir))?;
    let w = Writer { root: dir.to_path_buf() };
    let scfg = &scene.config;
    let k = &scfg.intrinsics;
    let size = scfg.image_size;
    let mut rng = ChaCha8Rng::seed_from_u64(scfg.seed ^ 0x5eed_e4f0_a7e0_0001);

    let mut m = SceneManifest::new(dir);
    for (i, pose) in scene.gt_poses.iter().enumerate() {
        let mut v = ViewEntry {
            view_id: view_id(i),
            image_size: [size.0, size.1],
            intrinsics: [[0.0; 3]; 3],
            gt_pose: Some(PoseRecord::from_parts(pose.r(), pose.t())),
        };
        v.set_intrinsics(k);
        m.views.push(v);
    }

    for pair in &scene.pairs {
        let stem = format!("{}__{}", view_id(pair.view_a), view_id(pair.view_b));
        let (pa, pb, c, l) = w.matchset(
            &stem,
            pair.matches.points_a(),
            pair.matches.points_b(),
            pair.matches.confidences(),
            Some(&pair.inlier_labels),
        )?;
        m.matchsets.push(MatchsetEntry {
            view_a: view_id(pair.view_a),
            view_b: Some(view_id(pair.view_b)),
            prompt_id: None,
            proposal: None,
            points_a_path: pa,
            points_b_path: pb,
            confidence_path: c,
            inlier_labels_path: l,
        });
    }

    // Object boxes from the noiseless projection of the generator points.
    let object_box = |view: usize| -> Result<BBox, EvalError> {
        let pose = &scene.gt_poses[view];
        let cam: Vec<_> = scene.gt_points.iter().map(|p| pose.transform(&p.coords).into()).collect();
        projected_bbox(&cam, k).ok_or(EvalError::InvalidInput("object projects outside the image".into()))
    };
    let prompt_box = box_array(pixel_box(&object_box(0)?, size));
    let target_box = pixel_box(&object_box(1)?, size);

    let prompt_emb = gaussian(&mut rng, cfg.embedding_dim);
    m.prompts.push(PromptEntry {
        prompt_id: "prompt_0".into(),
        view_id: view_id(0),
        embedding_path: w.embedding("prompt_0_embedding", &prompt_emb)?,
        bbox_px: prompt_box,
        gt_proposal: None,
    });

    // Slot 0 is the object, 1 the look-alike, the rest clutter; then shuffled.
    let mut order: Vec<usize> = (0..cfg.n_proposals).collect();
    order.shuffle(&mut rng);
    let gt_proposal = order.iter().position(|&s| s == 0).expect("slot 0 present");
    let pair01 = scene.pair(0, 1).expect("scenes have at least two views");
    let n_weak = pair01.matches.len().max(1);
    let mut proposals = Vec::with_capacity(cfg.n_proposals);
    for (idx, &slot) in order.iter().enumerate() {
        let (emb, bx, (pa, pb, conf)) = match slot {
            0 => (
                perturbed(&mut rng, &prompt_emb, 0.5),
                target_box,
                (
                    pair01.matches.points_a().to_vec(),
                    pair01.matches.points_b().to_vec(),
                    pair01.matches.confidences().to_vec(),
                ),
            ),
            1 => {
                let e = perturbed(&mut rng, &prompt_emb, 0.2);
                let b = random_box(&mut rng, size);
                (e, b, weak_matches(&mut rng, n_weak, size, (0.5, 0.92)))
            }
            _ => {
                let e = gaussian(&mut rng, cfg.embedding_dim);
                let b = random_box(&mut rng, size);
                (e, b, weak_matches(&mut rng, n_weak, size, (0.0, 0.6)))
            }
        };
        let stem = format!("prompt_0__view_1_proposal_{idx}");
        let mask = Mask::rect(size.1 as usize, size.0 as usize, bx.0, bx.1, bx.2, bx.3);
        proposals.push(ProposalEntry {
            mask_path: w.put(&format!("view_1_proposal_{idx}_mask"), &mask.to_tensor())?,
            embedding_path: w.embedding(&format!("view_1_proposal_{idx}_embedding"), &emb)?,
            bbox_px: box_array(bx),
        });
        let (a, b, c, _) = w.matchset(&stem, &pa, &pb, &conf, None)?;
        m.matchsets.push(MatchsetEntry {
            view_a: view_id(0),
            view_b: Some(view_id(1)),
            prompt_id: Some("prompt_0".into()),
            proposal: Some(idx),
            points_a_path: a,
            points_b_path: b,
            confidence_path: c,
            inlier_labels_path: None,
        });
    }
    m.proposals.insert(view_id(1), proposals);
    m.prompts[0].gt_proposal = Some(gt_proposal);

    let manifest_path = dir.join(MANIFEST_FILE);
    save_manifest(&manifest_path, &m)?;
    Ok(ExportedScene { manifest_path, manifest: m, gt_proposal })
}
