//! Event-driven multi-agent runtime for edge object detection.
//!
//! A central [`router::Router`] connects four agents: vision (detector,
//! passive IoU tracker, dwell triggers), reporting (LLM captions off the
//! dispatch path), communication (posts reports to a chat channel) and
//! control (parses operator commands). The [`harness`] module wires them
//! together for daemon and simulated-clock scenario runs.
//!
//! Geometry and tracking are generic over [`Scalar`]; the aliases below fix
//! the scalar to `f64`, which is what the agents use.

pub mod channel;
pub mod clock;
pub mod flatfile;
pub mod harness;
pub mod metrics;
pub mod reporting;
pub mod router;
pub mod scalar;
pub mod vision;

pub use scalar::Scalar;

/// Scalar used by the runtime agents.
pub type Real = f64;

pub type BBox = vision::geometry::BBox<Real>;
pub type Detection = vision::geometry::Detection<Real>;
pub type Track = vision::tracker::Track<Real>;
pub type TrackerState = vision::tracker::TrackerState<Real>;
pub type TrackerConfig = vision::tracker::TrackerConfig<Real>;
pub type Match = vision::tracker::Match<Real>;

pub type BBox32 = vision::geometry::BBox<f32>;
pub type Detection32 = vision::geometry::Detection<f32>;
pub type TrackerState32 = vision::tracker::TrackerState<f32>;
pub type TrackerConfig32 = vision::tracker::TrackerConfig<f32>;
