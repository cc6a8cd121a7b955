//! Vision agent: detector backends, passive tracking, dwell triggers and
//! annotated snapshots.

pub mod agent;
pub mod backend;
pub mod geometry;
pub mod snapshot;
pub mod tracker;

pub use agent::{VisionAgent, VisionSettings};
pub use backend::{
    replay_backend, synthetic_backend, BackendError, DetectorBackend, Frame, ReplayBackend,
    ReplayRecording, SyntheticBackend, SyntheticScript, Trajectory,
};
pub use geometry::{iou, GeometryError};
pub use snapshot::{SnapshotError, SnapshotStore};
pub use tracker::{evaluate_triggers, passive_tracker_update, TrackerConfigError};
