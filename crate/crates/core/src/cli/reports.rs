use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::evalharness::MetricsReport;
use crate::multiview::{MapRecord, ViewPoseError};
use crate::retrieval::RetrievalRecord;

/// Schema version shared by every report.
pub const REPORT_VERSION: u32 = 1;

/// Wall-clock milliseconds per stage. Kept in its own top-level field so that
/// reports compare byte-for-byte once it is removed.
pub type Timing = BTreeMap<String, f64>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthReport {
    pub version: u32,
    pub kind: String,
    pub manifest: String,
    pub n_views: usize,
    pub n_matchsets: usize,
    pub gt_proposal: usize,
    pub timing_ms: Timing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrieveReport {
    pub version: u32,
    pub kind: String,
    pub target_view: String,
    pub top_k: usize,
    pub sigma: f64,
    /// Proposal indices ranked by similarity.
    pub ranking: Vec<usize>,
    pub retrieval: RetrievalRecord,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_proposal: Option<usize>,
    pub timing_ms: Timing,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidualStats {
    pub mean: f64,
    pub median: f64,
    pub max: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InlierSummary {
    pub recall: f64,
    pub false_inlier_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairPoseRecord {
    pub view_a: String,
    pub view_b: String,
    /// Row-major rotation of `X_b = r X_a + t`.
    pub r: [f64; 9],
    pub t: [f64; 3],
    pub scaled: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale: Option<f64>,
    pub matches: usize,
    pub inliers: usize,
    pub triangulated: usize,
    /// Sampson distances of the inliers, normalized image units.
    pub residual_stats: ResidualStats,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rotation_error_deg: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub translation_error_deg: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inlier_labels: Option<InlierSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pose2vReport {
    pub version: u32,
    pub kind: String,
    pub seed: u64,
    pub threshold: f64,
    pub pairs: Vec<PairPoseRecord>,
    pub timing_ms: Timing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefineSummary {
    pub initial_cost: f64,
    pub final_cost: f64,
    pub iterations: usize,
    pub converged: bool,
    pub pruned_observations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedView {
    pub view_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseMvReport {
    pub version: u32,
    pub kind: String,
    pub seed: u64,
    pub initial_pair: [String; 2],
    pub registered: Vec<String>,
    pub skipped: Vec<SkippedView>,
    pub reprojection_rms_px: f64,
    pub refine: RefineSummary,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub view_errors: Option<Vec<ViewPoseError>>,
    pub map: MapRecord,
    pub timing_ms: Timing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub version: u32,
    pub kind: String,
    pub inputs: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rotation: Option<MetricsReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub translation: Option<MetricsReport>,
    /// Rotation metrics per view pair (`view_a/view_b`) or registered view.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub rotation_by_group: BTreeMap<String, MetricsReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retrieval_map: Option<f64>,
    pub timing_ms: Timing,
}
