//! The per-frame loop: propose crops, plan, detect, merge, gate, remember,
//! and account for latency.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detector::{DetectError, DetectRequest, DetectorBackend, SimDetectorConfig};
use crate::gate::{gate, GateConfig, GateMemory};
use crate::geometry::{nms, Detection, FrameDims, InputTransform};
use crate::proposer::{propose_crops, Crop, Proposal, ProposerConfig};
use crate::scheduler::{plan, FpsMonitor, Mode, Plan, PlanKind, SchedulerConfig};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PipelineError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("frame order violation: expected frame {expected}, got {got}")]
    FrameOrder { expected: u64, got: u64 },
}

/// Per-pass inference cost, in seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LatencyModel {
    pub t_full_416: f64,
    pub t_full_608: f64,
    pub t_crop: f64,
    pub t_overhead: f64,
}

impl Default for LatencyModel {
    fn default() -> Self {
        // 6.6 FPS at 416 and 3 FPS at 608 on the reference embedded board
        Self {
            t_full_416: 0.152,
            t_full_608: 0.333,
            t_crop: 0.04,
            t_overhead: 0.01,
        }
    }
}

impl LatencyModel {
    pub fn validate(&self) -> Result<(), &'static str> {
        let all = [self.t_full_416, self.t_full_608, self.t_crop, self.t_overhead];
        if all.iter().all(|t| t.is_finite() && *t > 0.0) {
            Ok(())
        } else {
            Err("latency model times must be > 0")
        }
    }

    /// Full-frame pass time. Sizes other than 416 and 608 scale with input
    /// area from the 416 figure.
    pub fn full_frame(&self, input_size: u32) -> f64 {
        match input_size {
            416 => self.t_full_416,
            608 => self.t_full_608,
            s => self.t_full_416 * (f64::from(s) / 416.0).powi(2),
        }
    }
}

pub fn synthetic_latency(plan: &Plan, model: &LatencyModel) -> f64 {
    match plan {
        Plan::FullFrame(size) | Plan::FastFull(size) => model.full_frame(*size) + model.t_overhead,
        Plan::CropSet(crops) => crops.len() as f64 * model.t_crop + model.t_overhead,
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    #[default]
    Simulated,
    External,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorSection {
    pub backend: BackendKind,
    /// Program started for the external backend.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub command: Option<String>,
    pub sim: SimDetectorConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub cross_crop_nms_iou: f64,
    pub proposer: ProposerConfig,
    pub gate: GateConfig,
    pub scheduler: SchedulerConfig,
    pub detector: DetectorSection,
    pub latency: LatencyModel,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            cross_crop_nms_iou: 0.5,
            proposer: ProposerConfig::default(),
            gate: GateConfig::default(),
            scheduler: SchedulerConfig::default(),
            detector: DetectorSection::default(),
            latency: LatencyModel::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let cfg = |e: &dyn std::fmt::Display| PipelineError::Config(e.to_string());
        if !(self.cross_crop_nms_iou > 0.0 && self.cross_crop_nms_iou <= 1.0) {
            return Err(PipelineError::Config("cross_crop_nms_iou must lie in (0, 1]".into()));
        }
        self.proposer.validate().map_err(|e| cfg(&e))?;
        self.gate.validate().map_err(|e| cfg(&e))?;
        self.scheduler.validate().map_err(|e| cfg(&e))?;
        self.detector.sim.validate().map_err(|e| cfg(&e))?;
        self.latency.validate().map_err(|e| cfg(&e))?;
        Ok(())
    }
}

/// What runs on each frame.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunMode {
    /// Crops, gating and the FPS governor.
    #[default]
    Pipeline,
    /// One full-frame pass per frame behind a single confidence threshold
    /// at `tau_lo`, with no temporal memory.
    FullframeOnly,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LatencySource {
    Synthetic,
    WallClock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameResult {
    pub frame_idx: u64,
    pub plan_kind: PlanKind,
    pub num_crops: usize,
    pub accepted: Vec<Detection>,
    pub latency: f64,
    pub estimated_fps: f64,
    /// Detector failure that caused this frame to be skipped.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Maps per-crop detections (crop input space) into the frame, clips them,
/// and removes cross-crop duplicates. The result does not depend on the order
/// of `per_crop`.
pub fn merge_crop_detections(
    per_crop: &[(Crop, Vec<Detection>)],
    dims: FrameDims,
    iou_threshold: f64,
) -> Vec<Detection> {
    let merged: Vec<Detection> = per_crop
        .iter()
        .flat_map(|(crop, dets)| to_frame(dets, &crop.transform(), dims))
        .collect();
    nms(&merged, iou_threshold)
}

fn to_frame(dets: &[Detection], t: &InputTransform, dims: FrameDims) -> Vec<Detection> {
    dets.iter()
        .filter_map(|d| t.to_frame(&d.bbox).clip_to(dims).map(|bbox| Detection { bbox, ..*d }))
        .collect()
}

#[derive(Debug, Clone)]
pub struct Pipeline {
    cfg: PipelineConfig,
    dims: FrameDims,
    run_mode: RunMode,
    latency_source: LatencySource,
    baseline_gate: GateConfig,
    memory: GateMemory,
    monitor: FpsMonitor,
    mode: Mode,
    next_frame: u64,
}

impl Pipeline {
    pub fn new(
        cfg: PipelineConfig,
        dims: FrameDims,
        run_mode: RunMode,
        latency_source: LatencySource,
    ) -> Result<Self, PipelineError> {
        cfg.validate()?;
        if !dims.is_valid() {
            return Err(PipelineError::Config("frame dimensions must be positive".into()));
        }
        let baseline_gate = GateConfig::single_threshold(cfg.gate.tau_lo);
        Ok(Self {
            cfg,
            dims,
            run_mode,
            latency_source,
            baseline_gate,
            memory: GateMemory::default(),
            monitor: FpsMonitor::default(),
            mode: Mode::Normal,
            next_frame: 0,
        })
    }

    pub fn memory(&self) -> &GateMemory {
        &self.memory
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    /// Processes `frame_idx`, which must directly follow the previous frame.
    pub fn step(&mut self, frame_idx: u64, backend: &dyn DetectorBackend) -> Result<FrameResult, PipelineError> {
        if frame_idx != self.next_frame {
            return Err(PipelineError::FrameOrder {
                expected: self.next_frame,
                got: frame_idx,
            });
        }
        let started = Instant::now();
        let sched = &self.cfg.scheduler;

        let (frame_plan, next_mode) = match self.run_mode {
            RunMode::FullframeOnly => (Plan::FullFrame(sched.base_input_size), Mode::Normal),
            RunMode::Pipeline => {
                let proposal = if frame_idx.is_multiple_of(sched.refresh_period) {
                    Proposal::Crops(Vec::new())
                } else {
                    propose_crops(
                        &self.memory.prev_accepted,
                        self.dims,
                        &self.cfg.proposer,
                        sched.crop_input_size,
                    )
                };
                plan(frame_idx, &proposal, &self.monitor, sched, self.mode)
            }
        };

        let outcome = self.execute(&frame_plan, frame_idx, backend);
        let (accepted, error) = match outcome {
            Ok(dets) => {
                let gate_cfg = match self.run_mode {
                    RunMode::Pipeline => &self.cfg.gate,
                    RunMode::FullframeOnly => &self.baseline_gate,
                };
                let accepted = gate(&dets, &self.memory, gate_cfg);
                // frame_idx strictly increases, so this cannot fail
                if let Ok(m) = self.memory.update(accepted.clone(), frame_idx as i64) {
                    self.memory = m;
                }
                (accepted, None)
            }
            Err(e) => {
                log::warn!("skipping frame {frame_idx}: {e}");
                (Vec::new(), Some(e.to_string()))
            }
        };

        let latency = match self.latency_source {
            LatencySource::Synthetic => synthetic_latency(&frame_plan, &self.cfg.latency),
            LatencySource::WallClock => started.elapsed().as_secs_f64().max(1e-9),
        };
        if let Ok(m) = self.monitor.record(latency, sched.ewma_alpha) {
            self.monitor = m;
        }
        self.mode = next_mode;
        self.next_frame = frame_idx + 1;

        Ok(FrameResult {
            frame_idx,
            plan_kind: frame_plan.kind(),
            num_crops: frame_plan.num_crops(),
            accepted,
            latency,
            estimated_fps: self.monitor.estimated_fps().unwrap_or(0.0),
            error,
        })
    }

    fn execute(
        &self,
        frame_plan: &Plan,
        frame_idx: u64,
        backend: &dyn DetectorBackend,
    ) -> Result<Vec<Detection>, DetectError> {
        match frame_plan {
            Plan::FullFrame(size) | Plan::FastFull(size) => {
                let req = DetectRequest {
                    frame_idx,
                    region: self.dims.rect(),
                    input_size: *size,
                };
                let mut dets = to_frame(&backend.detect(&req)?, &req.transform(), self.dims);
                dets.sort_by(crate::geometry::confidence_order);
                Ok(dets)
            }
            Plan::CropSet(crops) => {
                let per_crop = crops
                    .par_iter()
                    .map(|crop| {
                        let req = DetectRequest {
                            frame_idx,
                            region: crop.rect(),
                            input_size: crop.input_size,
                        };
                        backend.detect(&req).map(|d| (*crop, d))
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                Ok(merge_crop_detections(&per_crop, self.dims, self.cfg.cross_crop_nms_iou))
            }
        }
    }

    /// Runs frames `0..num_frames` in order.
    pub fn run(&mut self, num_frames: u64, backend: &dyn DetectorBackend) -> Result<Vec<FrameResult>, PipelineError> {
        (0..num_frames).map(|f| self.step(f, backend)).collect()
    }
}

/// Convenience: fresh pipeline over `num_frames` frames with synthetic latency.
pub fn run(
    cfg: &PipelineConfig,
    dims: FrameDims,
    num_frames: u64,
    run_mode: RunMode,
    backend: &dyn DetectorBackend,
) -> Result<Vec<FrameResult>, PipelineError> {
    Pipeline::new(cfg.clone(), dims, run_mode, LatencySource::Synthetic)?.run(num_frames, backend)
}
