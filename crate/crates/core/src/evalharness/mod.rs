//! Synthetic oracle scenes, balanced pair sampling and evaluation metrics.

mod export;
mod masks;
mod metrics;
mod synth;
mod trials;

use std::io;
use std::path::PathBuf;

use thiserror::Error;

use crate::geometry::GeometryError;
use crate::retrieval::RetrievalError;
use crate::tensorio::{ManifestError, TensorError};

pub use export::{export_scene, ExportConfig, ExportedScene, MANIFEST_FILE};
pub use masks::{crop_masked_object, mask_accuracy, mask_iou, CropTransform, Mask, MaskedCrop};
pub use metrics::{
    compute_grouped_metrics, compute_pose_metrics, retrieval_map, sample_balanced_pairs, MetricsReport, PairSampleSpec,
    RankedQuery,
};
pub use synth::{synth_scene, SynthConfig, SynthPair, SynthScene};
pub use trials::{inlier_stats, two_view_trial, InlierStats, TwoViewTrial};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("empty {0}")]
    Empty(&'static str),
    #[error("angle bin [{lo}, {hi}) holds {available} pairs, {needed} needed")]
    BinExhausted { lo: f64, hi: f64, available: usize, needed: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("mask is empty")]
    EmptyMask,
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error(transparent)]
    Manifest(#[from] ManifestError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
}
