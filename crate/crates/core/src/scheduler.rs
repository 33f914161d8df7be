//! Per-frame choice between a full-frame refresh, crop inference, and the
//! degraded fast mode, driven by an EWMA frame-rate monitor.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::proposer::{Crop, Proposal};

/// Samples required before the monitor may trigger fast mode.
pub const WARMUP_SAMPLES: u64 = 3;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SchedulerError {
    #[error("frame latency must be positive, got {0}")]
    NonPositiveLatency(f64),
    #[error("unwarmed monitor")]
    Unwarmed,
    #[error("invalid scheduler config: {0}")]
    InvalidConfig(&'static str),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SchedulerConfig {
    /// A full-frame pass runs on every frame index divisible by this.
    pub refresh_period: u64,
    pub fps_target: f64,
    pub base_input_size: u32,
    pub crop_input_size: u32,
    pub ewma_alpha: f64,
    /// Fast mode is left only once the estimate reaches `fps_target + hysteresis`.
    pub hysteresis: f64,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        Self {
            refresh_period: 5,
            fps_target: 5.0,
            base_input_size: 416,
            crop_input_size: 416,
            ewma_alpha: 0.3,
            hysteresis: 0.5,
        }
    }
}

impl SchedulerConfig {
    pub fn validate(&self) -> Result<(), SchedulerError> {
        if self.refresh_period < 1 {
            return Err(SchedulerError::InvalidConfig("refresh_period must be >= 1"));
        }
        if !(self.fps_target.is_finite() && self.fps_target > 0.0) {
            return Err(SchedulerError::InvalidConfig("fps_target must be > 0"));
        }
        if self.base_input_size == 0 || self.crop_input_size == 0 {
            return Err(SchedulerError::InvalidConfig("input sizes must be > 0"));
        }
        if !(self.ewma_alpha > 0.0 && self.ewma_alpha <= 1.0) {
            return Err(SchedulerError::InvalidConfig("ewma_alpha must lie in (0, 1]"));
        }
        if !(self.hysteresis.is_finite() && self.hysteresis >= 0.0) {
            return Err(SchedulerError::InvalidConfig("hysteresis must be >= 0"));
        }
        Ok(())
    }
}

/// Exponentially weighted moving average of per-frame latency.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct FpsMonitor {
    pub ewma_latency: f64,
    pub samples: u64,
}

impl FpsMonitor {
    pub fn record(&self, frame_latency: f64, alpha: f64) -> Result<FpsMonitor, SchedulerError> {
        if !(frame_latency.is_finite() && frame_latency > 0.0) {
            return Err(SchedulerError::NonPositiveLatency(frame_latency));
        }
        let ewma_latency = if self.samples == 0 {
            frame_latency
        } else {
            alpha * frame_latency + (1.0 - alpha) * self.ewma_latency
        };
        Ok(FpsMonitor {
            ewma_latency,
            samples: self.samples + 1,
        })
    }

    pub fn estimated_fps(&self) -> Result<f64, SchedulerError> {
        if self.samples == 0 {
            return Err(SchedulerError::Unwarmed);
        }
        Ok(1.0 / self.ewma_latency)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    #[default]
    Normal,
    Fast,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Plan {
    FullFrame(u32),
    /// Never empty.
    CropSet(Vec<Crop>),
    FastFull(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanKind {
    FullFrame,
    CropSet,
    FastFull,
}

impl Plan {
    pub fn kind(&self) -> PlanKind {
        match self {
            Plan::FullFrame(_) => PlanKind::FullFrame,
            Plan::CropSet(_) => PlanKind::CropSet,
            Plan::FastFull(_) => PlanKind::FastFull,
        }
    }

    pub fn num_crops(&self) -> usize {
        match self {
            Plan::CropSet(c) => c.len(),
            _ => 0,
        }
    }
}

/// Picks this frame's plan and the mode carried into the next frame.
///
/// Mode switches first: once warmed up, an estimate below `fps_target` enters
/// fast mode, and only an estimate at or above `fps_target + hysteresis`
/// leaves it. Fast mode always runs one full-frame pass at the base size.
/// Normal mode refreshes on the configured cadence and whenever there is no
/// usable crop set.
pub fn plan(
    frame_idx: u64,
    proposal: &Proposal,
    monitor: &FpsMonitor,
    cfg: &SchedulerConfig,
    mode: Mode,
) -> (Plan, Mode) {
    let next_mode = match (mode, monitor.estimated_fps()) {
        (_, Err(_)) => mode,
        (Mode::Normal, Ok(fps)) if monitor.samples >= WARMUP_SAMPLES && fps < cfg.fps_target => Mode::Fast,
        (Mode::Fast, Ok(fps)) if fps >= cfg.fps_target + cfg.hysteresis => Mode::Normal,
        (m, Ok(_)) => m,
    };

    let plan = match next_mode {
        Mode::Fast => Plan::FastFull(cfg.base_input_size),
        Mode::Normal => match proposal {
            Proposal::Crops(crops) if !frame_idx.is_multiple_of(cfg.refresh_period) && !crops.is_empty() => {
                Plan::CropSet(crops.clone())
            }
            _ => Plan::FullFrame(cfg.base_input_size),
        },
    };
    (plan, next_mode)
}
