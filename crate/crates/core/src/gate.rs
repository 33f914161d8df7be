//! Two-threshold confidence gating with one frame of memory.
//!
//! Confident detections are accepted outright. Detections in the band
//! `[tau_lo, tau_hi)` are accepted only when they overlap something accepted
//! on the previous frame, which keeps briefly faint objects alive.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{iou, Detection};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GateError {
    #[error("frame order violation: frame {next} does not follow frame {prev}")]
    FrameOrder { prev: i64, next: i64 },
    #[error("invalid gate config: {0}")]
    InvalidConfig(&'static str),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GateConfig {
    pub tau_hi: f64,
    pub tau_lo: f64,
    /// Minimum IoU with a remembered box for a low-confidence rescue.
    pub tau_overlap: f64,
}

impl Default for GateConfig {
    fn default() -> Self {
        Self {
            tau_hi: 0.5,
            tau_lo: 0.2,
            tau_overlap: 0.3,
        }
    }
}

impl GateConfig {
    /// Gate with an empty rescue band: a single threshold at `tau`.
    pub fn single_threshold(tau: f64) -> Self {
        Self {
            tau_hi: tau,
            tau_lo: tau,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), GateError> {
        if !(0.0..=1.0).contains(&self.tau_lo) || !(0.0..=1.0).contains(&self.tau_hi) {
            return Err(GateError::InvalidConfig("thresholds must lie in [0, 1]"));
        }
        if self.tau_lo > self.tau_hi {
            return Err(GateError::InvalidConfig("tau_lo must not exceed tau_hi"));
        }
        if !(self.tau_overlap > 0.0 && self.tau_overlap <= 1.0) {
            return Err(GateError::InvalidConfig("tau_overlap must lie in (0, 1]"));
        }
        Ok(())
    }
}

/// Accepted detections of the previous frame. `frame_idx` is `-1` before the
/// first update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateMemory {
    pub prev_accepted: Vec<Detection>,
    pub frame_idx: i64,
}

impl Default for GateMemory {
    fn default() -> Self {
        Self {
            prev_accepted: Vec::new(),
            frame_idx: -1,
        }
    }
}

impl GateMemory {
    /// Replaces the remembered set with this frame's accepted detections.
    pub fn update(&self, accepted: Vec<Detection>, frame_idx: i64) -> Result<GateMemory, GateError> {
        if frame_idx <= self.frame_idx {
            return Err(GateError::FrameOrder {
                prev: self.frame_idx,
                next: frame_idx,
            });
        }
        Ok(GateMemory {
            prev_accepted: accepted,
            frame_idx,
        })
    }
}

/// Filters `dets` by the accept/rescue/reject rule, preserving input order.
///
/// With `tau_lo == tau_hi` the rescue band is empty and this reduces to a
/// plain confidence threshold.
pub fn gate(dets: &[Detection], memory: &GateMemory, cfg: &GateConfig) -> Vec<Detection> {
    dets.iter()
        .filter(|d| {
            if d.confidence >= cfg.tau_hi {
                return true;
            }
            if d.confidence < cfg.tau_lo {
                return false;
            }
            memory
                .prev_accepted
                .iter()
                .any(|m| iou(&d.bbox, &m.bbox) >= cfg.tau_overlap)
        })
        .copied()
        .collect()
}
