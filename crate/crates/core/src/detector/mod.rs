//! Detector backends.
//!
//! A backend receives a frame-space region and the square input size that
//! region is resized to, and returns detections in that input space.

mod external;
mod sim;

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

pub use external::{ExternalDetector, WireBox, WireRegion, WireRequest, WireResponse};
pub use sim::{occluded_fraction, sim_detect_probability, SimDetectorConfig, SimulatedDetector};

use crate::geometry::{BBox, Detection, InputTransform};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectRequest {
    pub frame_idx: u64,
    /// Frame-space region: the whole frame or a crop rectangle.
    pub region: BBox,
    pub input_size: u32,
}

impl DetectRequest {
    pub fn transform(&self) -> InputTransform {
        InputTransform::for_region(&self.region, self.input_size)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("detector failed on frame {frame_idx}: {message}")]
pub struct DetectError {
    pub frame_idx: u64,
    pub message: String,
}

impl DetectError {
    pub fn new(frame_idx: u64, message: impl Into<String>) -> Self {
        Self {
            frame_idx,
            message: message.into(),
        }
    }
}

/// Inference backend. Implementations must tolerate concurrent calls for
/// different crops of the same frame.
pub trait DetectorBackend: Send + Sync {
    fn detect(&self, request: &DetectRequest) -> Result<Vec<Detection>, DetectError>;
}

impl<T: DetectorBackend + ?Sized> DetectorBackend for &T {
    fn detect(&self, request: &DetectRequest) -> Result<Vec<Detection>, DetectError> {
        (**self).detect(request)
    }
}

impl<T: DetectorBackend + ?Sized> DetectorBackend for Box<T> {
    fn detect(&self, request: &DetectRequest) -> Result<Vec<Detection>, DetectError> {
        (**self).detect(request)
    }
}

/// Replays fixed frame-space detections. A detection is reported by every
/// request whose region contains its centre.
#[derive(Debug, Clone, Default)]
pub struct ScriptedDetector {
    frames: BTreeMap<u64, Vec<Detection>>,
    failing: BTreeSet<u64>,
}

impl ScriptedDetector {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, frame_idx: u64, det: Detection) -> Self {
        self.frames.entry(frame_idx).or_default().push(det);
        self
    }

    /// Every request on `frame_idx` fails.
    pub fn failing_on(mut self, frame_idx: u64) -> Self {
        self.failing.insert(frame_idx);
        self
    }
}

impl DetectorBackend for ScriptedDetector {
    fn detect(&self, request: &DetectRequest) -> Result<Vec<Detection>, DetectError> {
        if self.failing.contains(&request.frame_idx) {
            return Err(DetectError::new(request.frame_idx, "scripted failure"));
        }
        let t = request.transform();
        Ok(self
            .frames
            .get(&request.frame_idx)
            .into_iter()
            .flatten()
            .filter(|d| {
                let (cx, cy) = d.bbox.center();
                request.region.contains_point(cx, cy)
            })
            .map(|d| Detection {
                bbox: t.to_input(&d.bbox),
                ..*d
            })
            .collect())
    }
}
