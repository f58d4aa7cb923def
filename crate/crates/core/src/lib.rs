//! Multi-object tracking that fuses 2D detections with class-agnostic 3D
//! proposals and filters them with a coupled 2D-3D Kalman filter.

pub mod crf;
pub mod error;
pub mod fusion;
pub mod geometry;
pub mod io;
pub mod kalman;
pub mod metrics;
pub mod observations;
pub mod pipeline;
pub mod sim;
pub mod tracker;

pub use error::{Error, Result};
pub use io::Sequence;
pub use geometry::{BBox2D, CameraIntrinsics, EgoPose, GroundPlane, Size3};
pub use kalman::{CoupledState, CouplingWeights, NoiseConfig};
pub use metrics::{evaluate, GtTrajectory, MetricsConfig, MotReport};
pub use observations::{Category, Detection2D, FrameContext, Observation, Proposal3D, SizeStats};
pub use pipeline::{run_sequence, Ablation, Pipeline, PipelineConfig};
pub use sim::{simulate, ScenarioSpec, Simulation};
pub use tracker::{FrameReport, ReportedTrack, Tracker, TrackerConfig, TrackerSettings};
