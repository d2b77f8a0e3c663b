//! JSON scene manifest. Tensor paths are relative to the manifest's directory.
//!
//! ```json
//! {
//!   "version": 1,
//!   "views": [{"view_id": "view_0", "image_size": [640, 480],
//!              "intrinsics": [[800, 0, 320], [0, 800, 240], [0, 0, 1]],
//!              "gt_pose": {"r": [9 floats, row-major], "t": [3 floats]}}],
//!   "prompts": [{"prompt_id": "p0", "view_id": "view_0", "embedding_path": "...",
//!                "bbox_px": [x, y, w, h], "gt_proposal": 2}],
//!   "proposals": {"view_1": [{"mask_path": "...", "embedding_path": "...", "bbox_px": [x, y, w, h]}]},
//!   "matchsets": [{"view_a": "view_0", "view_b": "view_1",
//!                  "points_a_path": "...", "points_b_path": "...", "confidence_path": "...",
//!                  "inlier_labels_path": "..."}]
//! }
//! ```
//!
//! A matchset either links two views (`view_b`) or a prompt to one proposal of
//! a target view (`prompt_id`, `view_b` and `proposal`). `gt_pose` is
//! world-to-camera. `gt_proposal` and `inlier_labels_path` are optional
//! ground truth used by evaluation.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Point2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::tensor::{read_tensor, DType, Tensor, TensorData, TensorError};
use crate::geometry::{check_rotation, BBox, CameraIntrinsics, PoseRecord};
use crate::retrieval::{Embedding, MatchSet};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("malformed manifest: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("unsupported manifest version {0}")]
    UnsupportedVersion(u32),
    #[error("dangling tensor path {path}: {source}")]
    DanglingPath {
        path: PathBuf,
        #[source]
        source: TensorError,
    },
    #[error("tensor {path} is invalid: {reason}")]
    BadTensor { path: PathBuf, reason: String },
    #[error("view {view}: invalid intrinsics: {reason}")]
    InvalidIntrinsics { view: String, reason: String },
    #[error("{what} bbox {bbox:?} lies outside the {width}x{height} image of view {view}")]
    BboxOutOfBounds { what: String, view: String, bbox: [f64; 4], width: u32, height: u32 },
    #[error("unknown view id {0}")]
    UnknownView(String),
    #[error("unknown prompt id {0}")]
    UnknownPrompt(String),
    #[error("duplicate id {0}")]
    DuplicateId(String),
    #[error("invalid manifest: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ViewEntry {
    pub view_id: String,
    pub image_size: [u32; 2],
    pub intrinsics: [[f64; 3]; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_pose: Option<PoseRecord>,
}

impl ViewEntry {
    pub fn intrinsics_matrix(&self) -> Matrix3<f64> {
        let k = &self.intrinsics;
        Matrix3::new(k[0][0], k[0][1], k[0][2], k[1][0], k[1][1], k[1][2], k[2][0], k[2][1], k[2][2])
    }

    pub fn camera(&self) -> Result<CameraIntrinsics, ManifestError> {
        CameraIntrinsics::from_matrix(&self.intrinsics_matrix())
            .map_err(|e| ManifestError::InvalidIntrinsics { view: self.view_id.clone(), reason: e.to_string() })
    }

    pub fn set_intrinsics(&mut self, k: &CameraIntrinsics) {
        let m = k.matrix();
        for i in 0..3 {
            for j in 0..3 {
                self.intrinsics[i][j] = m[(i, j)];
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptEntry {
    pub prompt_id: String,
    /// Support view the prompt was cut from; its bbox is in this view's pixels.
    pub view_id: String,
    pub embedding_path: String,
    pub bbox_px: [f64; 4],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_proposal: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProposalEntry {
    pub mask_path: String,
    pub embedding_path: String,
    pub bbox_px: [f64; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatchsetEntry {
    pub view_a: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub view_b: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub proposal: Option<usize>,
    pub points_a_path: String,
    pub points_b_path: String,
    pub confidence_path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inlier_labels_path: Option<String>,
}

impl MatchsetEntry {
    pub fn is_view_pair(&self) -> bool {
        self.prompt_id.is_none() && self.view_b.is_some()
    }

    pub fn links(&self, a: &str, b: &str) -> bool {
        self.is_view_pair() && self.view_a == a && self.view_b.as_deref() == Some(b)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneManifest {
    pub version: u32,
    pub views: Vec<ViewEntry>,
    #[serde(default)]
    pub prompts: Vec<PromptEntry>,
    #[serde(default)]
    pub proposals: BTreeMap<String, Vec<ProposalEntry>>,
    #[serde(default)]
    pub matchsets: Vec<MatchsetEntry>,
    /// Directory relative paths are resolved against.
    #[serde(skip)]
    pub root: PathBuf,
}

impl SceneManifest {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self {
            version: MANIFEST_VERSION,
            views: Vec::new(),
            prompts: Vec::new(),
            proposals: BTreeMap::new(),
            matchsets: Vec::new(),
            root: root.into(),
        }
    }

    pub fn resolve(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn view(&self, id: &str) -> Result<&ViewEntry, ManifestError> {
        self.views.iter().find(|v| v.view_id == id).ok_or_else(|| ManifestError::UnknownView(id.to_string()))
    }

    pub fn prompt(&self, id: &str) -> Result<&PromptEntry, ManifestError> {
        self.prompts.iter().find(|p| p.prompt_id == id).ok_or_else(|| ManifestError::UnknownPrompt(id.to_string()))
    }

    pub fn camera(&self, view_id: &str) -> Result<CameraIntrinsics, ManifestError> {
        self.view(view_id)?.camera()
    }

    /// Matchset linking two views, in either direction; the flag is true when
    /// the stored orientation is `(b, a)`.
    pub fn view_pair_matchset(&self, a: &str, b: &str) -> Option<(&MatchsetEntry, bool)> {
        self.matchsets
            .iter()
            .find(|m| m.links(a, b))
            .map(|m| (m, false))
            .or_else(|| self.matchsets.iter().find(|m| m.links(b, a)).map(|m| (m, true)))
    }

    pub fn prompt_matchset(&self, prompt_id: &str, view_id: &str, proposal: usize) -> Option<&MatchsetEntry> {
        self.matchsets.iter().find(|m| {
            m.prompt_id.as_deref() == Some(prompt_id)
                && m.view_b.as_deref() == Some(view_id)
                && m.proposal == Some(proposal)
        })
    }

    pub fn load_tensor(&self, rel: &str) -> Result<Tensor, ManifestError> {
        let path = self.resolve(rel);
        read_tensor(&path).map_err(|source| ManifestError::DanglingPath { path, source })
    }

    pub fn load_points(&self, rel: &str) -> Result<Vec<Point2<f64>>, ManifestError> {
        let t = self.load_tensor(rel)?;
        t.expect_matrix(2).map_err(|e| self.bad(rel, e.to_string()))?;
        let v = t.to_f64_vec();
        Ok(v.chunks_exact(2).map(|c| Point2::new(c[0], c[1])).collect())
    }

    pub fn load_vector(&self, rel: &str) -> Result<Vec<f64>, ManifestError> {
        let t = self.load_tensor(rel)?;
        t.expect_vector().map_err(|e| self.bad(rel, e.to_string()))?;
        Ok(t.to_f64_vec())
    }

    pub fn load_embedding(&self, rel: &str) -> Result<Embedding, ManifestError> {
        let v = self.load_vector(rel)?;
        Embedding::new(v).map_err(|e| self.bad(rel, e.to_string()))
    }

    pub fn load_mask(&self, rel: &str) -> Result<Tensor, ManifestError> {
        let t = self.load_tensor(rel)?;
        if t.dtype() != DType::U8 || t.shape().len() != 2 {
            return Err(self.bad(rel, format!("mask must be u8 [h, w], got {:?} {:?}", t.dtype(), t.shape())));
        }
        if let TensorData::U8(v) = t.data() {
            if v.iter().any(|&x| x > 1) {
                return Err(self.bad(rel, "mask values must be 0 or 1".into()));
            }
        }
        Ok(t)
    }

    pub fn load_matchset(&self, entry: &MatchsetEntry) -> Result<MatchSet, ManifestError> {
        let a = self.load_points(&entry.points_a_path)?;
        let b = self.load_points(&entry.points_b_path)?;
        let c = self.load_vector(&entry.confidence_path)?;
        MatchSet::new(a, b, c).map_err(|e| self.bad(&entry.points_a_path, e.to_string()))
    }

    pub fn load_inlier_labels(&self, entry: &MatchsetEntry) -> Result<Option<Vec<bool>>, ManifestError> {
        let Some(rel) = &entry.inlier_labels_path else {
            return Ok(None);
        };
        let t = self.load_tensor(rel)?;
        t.expect_vector().map_err(|e| self.bad(rel, e.to_string()))?;
        match t.data() {
            TensorData::U8(v) => Ok(Some(v.iter().map(|&x| x != 0).collect())),
            _ => Err(self.bad(rel, "inlier labels must be u8".into())),
        }
    }

    fn bad(&self, rel: &str, reason: String) -> ManifestError {
        ManifestError::BadTensor { path: self.resolve(rel), reason }
    }

    fn check_bbox(&self, what: &str, view_id: &str, bbox: [f64; 4]) -> Result<(), ManifestError> {
        let view = self.view(view_id)?;
        let [w, h] = view.image_size;
        let b = BBox::from_array(bbox);
        let inside = bbox.iter().all(|v| v.is_finite())
            && b.x >= 0.0
            && b.y >= 0.0
            && b.w >= 0.0
            && b.h >= 0.0
            && b.x + b.w <= w as f64
            && b.y + b.h <= h as f64;
        if inside {
            Ok(())
        } else {
            Err(ManifestError::BboxOutOfBounds {
                what: what.to_string(),
                view: view_id.to_string(),
                bbox,
                width: w,
                height: h,
            })
        }
    }

    /// Checks every invariant, including that each referenced tensor exists,
    /// parses and has the expected shape.
    pub fn validate(&self) -> Result<(), ManifestError> {
        if self.version != MANIFEST_VERSION {
            return Err(ManifestError::UnsupportedVersion(self.version));
        }
        let mut ids = HashSet::new();
        for v in &self.views {
            if !ids.insert(v.view_id.as_str()) {
                return Err(ManifestError::DuplicateId(v.view_id.clone()));
            }
            v.camera()?;
            if let Some(p) = &v.gt_pose {
                check_rotation(&p.rotation())
                    .map_err(|e| ManifestError::Invalid(format!("view {}: gt_pose: {e}", v.view_id)))?;
            }
        }
        let mut prompt_ids = HashSet::new();
        for p in &self.prompts {
            if !prompt_ids.insert(p.prompt_id.as_str()) {
                return Err(ManifestError::DuplicateId(p.prompt_id.clone()));
            }
            self.check_bbox(&format!("prompt {}", p.prompt_id), &p.view_id, p.bbox_px)?;
            self.load_embedding(&p.embedding_path)?;
        }
        for (view_id, list) in &self.proposals {
            let view = self.view(view_id)?;
            for (i, prop) in list.iter().enumerate() {
                self.check_bbox(&format!("proposal {i}"), view_id, prop.bbox_px)?;
                self.load_embedding(&prop.embedding_path)?;
                let mask = self.load_mask(&prop.mask_path)?;
                let [w, h] = view.image_size;
                if mask.shape() != [h as usize, w as usize] {
                    return Err(
                        self.bad(&prop.mask_path, format!("mask shape {:?} differs from image {h}x{w}", mask.shape()))
                    );
                }
            }
        }
        for m in &self.matchsets {
            self.view(&m.view_a)?;
            if let Some(b) = &m.view_b {
                self.view(b)?;
            }
            match (&m.prompt_id, &m.view_b, m.proposal) {
                (None, None, _) => return Err(ManifestError::Invalid("matchset needs view_b or prompt_id".into())),
                (Some(p), _, _) => {
                    self.prompt(p)?;
                }
                (None, Some(_), Some(_)) => {
                    return Err(ManifestError::Invalid("matchset proposal index requires prompt_id".into()))
                }
                _ => {}
            }
            if let (Some(k), Some(view)) = (m.proposal, &m.view_b) {
                let count = self.proposals.get(view).map_or(0, |l| l.len());
                if k >= count {
                    return Err(ManifestError::Invalid(format!(
                        "matchset refers to proposal {k} of view {view}, which has {count}"
                    )));
                }
            }
            let ms = self.load_matchset(m)?;
            if let Some(labels) = self.load_inlier_labels(m)? {
                if labels.len() != ms.len() {
                    return Err(ManifestError::Invalid(format!(
                        "inlier labels have {} entries for {} matches",
                        labels.len(),
                        ms.len()
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }
}

/// Reads and eagerly validates a manifest.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<SceneManifest, ManifestError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| ManifestError::Io { path: path.to_path_buf(), source })?;
    let mut manifest: SceneManifest = serde_json::from_str(&text)?;
    manifest.root = path.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."));
    manifest.validate()?;
    Ok(manifest)
}

/// Writes the manifest JSON to `path`; tensors must already exist under its directory.
pub fn save_manifest(path: impl AsRef<Path>, manifest: &SceneManifest) -> Result<(), ManifestError> {
    let path = path.as_ref();
    fs::write(path, manifest.to_json() + "\n").map_err(|source| ManifestError::Io { path: path.to_path_buf(), source })
}
