//! Crop-scheduled pedestrian detection for aerial video.
//!
//! The pipeline runs a detector on square crops around the previous frame's
//! pedestrians, refreshes with a full-frame pass on a fixed cadence, keeps
//! faint detections alive when they overlap last frame's accepted boxes, and
//! drops to a single full-frame pass when the frame rate sags. A simulated
//! resolution-dependent detector and synthetic scenarios make the whole loop
//! testable without video or model weights.

pub mod cli;
pub mod detector;
pub mod evaluation;
pub mod gate;
pub mod geometry;
pub mod io;
pub mod pipeline;
pub mod proposer;
pub mod scheduler;
pub mod simulation;

pub use detector::{DetectError, DetectRequest, DetectorBackend, SimDetectorConfig, SimulatedDetector};
pub use evaluation::{EvalConfig, EvalReport};
pub use gate::{GateConfig, GateMemory};
pub use geometry::{BBox, Detection, FrameDims};
pub use pipeline::{FrameResult, Pipeline, PipelineConfig, RunMode};
pub use proposer::{Crop, Proposal, ProposerConfig};
pub use scheduler::{FpsMonitor, Mode, Plan, PlanKind, SchedulerConfig};
pub use simulation::{Scenario, ScenarioParams};
