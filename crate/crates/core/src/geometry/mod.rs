//! Calibrated two-view geometry and absolute pose.
//!
//! All computation is in `f64`. Poses map source-frame points into the
//! target camera (`X' = R X + t`); pixel inputs are converted to normalized
//! image coordinates with the camera intrinsics before any estimation.

mod camera;
mod essential;
mod pnp;
mod pose;
mod ransac;
mod scale;
mod triangulate;
mod twoview;

use thiserror::Error;

pub use camera::{normalize_correspondences, CameraIntrinsics, Correspondence};
pub use essential::{
    decompose_essential, essential_from_pose, estimate_essential_8pt, refine_essential, sampson_distance,
    EssentialMatrix,
};
pub use pnp::{pnp_dlt, pnp_solve, refine_pose, PnpResult, PNP_SAMPLE};
pub use pose::{
    check_rotation, nearest_rotation, rotation_from_axis_angle, rotation_geodesic_error, skew, so3_exp,
    translation_direction_error, PoseRecord, RelativePose, POSE_TOLERANCE,
};
pub use ransac::{ransac_essential, ransac_essential_normalized, RansacConfig, RansacEssential};
pub use scale::{projected_bbox, recover_translation_scale, BBox, ScaledResult};
pub use triangulate::{
    depths, parallax_deg, ray_angle_deg, select_cheirality, triangulate_dlt, triangulate_point, triangulate_views,
    CheiralityChoice, TriangulatedCloud, MIN_PARALLAX_DEG,
};
pub use twoview::{two_view_pose, zip_correspondences, TwoViewResult};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("invalid pose: {0}")]
    InvalidPose(String),
    #[error("not an essential matrix: {0}")]
    NotEssential(String),
    #[error("need at least {needed} correspondences, got {got}")]
    TooFewCorrespondences { needed: usize, got: usize },
    #[error("degenerate configuration: {0}")]
    Degenerate(String),
    #[error("RANSAC found no consensus")]
    NoConsensus,
    #[error("rays nearly parallel ({angle_deg:.4} deg)")]
    LowParallax { angle_deg: f64 },
    #[error("cheirality is ambiguous ({count} points in front for several candidates)")]
    AmbiguousCheirality { count: usize },
    #[error("no candidate places any point in front of both cameras")]
    NoPositiveDepth,
    #[error("projected cloud has zero extent")]
    ZeroExtent,
    #[error("non-finite input: {0}")]
    NonFinite(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}
