//! Incremental multi-view reconstruction: seed a map from the best two-view
//! pair, register further views by PnP against the cloud, grow tracks, and
//! refine poses and points by minimizing reprojection error.

mod build;
mod map;
mod reconstruct;
mod refine;

use thiserror::Error;

use crate::geometry::GeometryError;

pub use build::{
    associations, init_map, register_view, triangulate_new_tracks, PairMatches, Registration, TrackConfig, TrackUpdate,
    MIN_INIT_INLIERS, SNAP_RADIUS_PX,
};
pub use map::{
    reprojection_rms, Gauge, MapRecord, MapView, Observation, ObservationRecord, SceneMap, Track, TrackRecord,
    ViewRecord, GAUGE_TOLERANCE, MAP_FORMAT_VERSION,
};
pub use reconstruct::{reconstruct, view_pose_errors, ReconstructConfig, Reconstruction, ViewPoseError};
pub use refine::{refine_map, RefineConfig, RefineReport};

#[derive(Debug, Error)]
pub enum MultiviewError {
    #[error("view {0} is already registered")]
    DuplicateView(String),
    #[error("unknown view {0}")]
    UnknownView(String),
    #[error("view {view}: {found} 2D-3D associations, at least {needed} needed")]
    InsufficientAssociations { view: String, found: usize, needed: usize },
    #[error("registering view {view}: {source}")]
    Registration {
        view: String,
        #[source]
        source: GeometryError,
    },
    #[error("no view pair yields an initial reconstruction")]
    NoInitialPair,
    #[error("need at least 2 views, got {0}")]
    TooFewViews(usize),
    #[error("invalid map: {0}")]
    InvalidMap(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}
