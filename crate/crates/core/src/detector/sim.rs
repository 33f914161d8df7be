//! Geometry-driven stand-in for a single-shot detector.
//!
//! Recall depends on an object's apparent height at the detector input, so
//! small pedestrians that vanish in a downscaled full frame become visible
//! again inside a magnified crop. All randomness comes from ChaCha8 streams
//! keyed by `(seed, frame_idx, object)`, which makes each outcome
//! independent of request order and of which crop asked.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{DetectError, DetectRequest, DetectorBackend};
use crate::geometry::{area, nms, BBox, Detection};
use crate::simulation::Scenario;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimDetectorConfig {
    /// Apparent height (input pixels) at or below which nothing is detected.
    pub s_min: f64,
    /// Apparent height at which detection probability saturates.
    pub s_sat: f64,
    pub p_max: f64,
    /// Probability lost per unit of occluded fraction.
    pub occlusion_penalty: f64,
    /// Localisation noise, as a fraction of box size.
    pub jitter_sigma: f64,
    /// Confidence of a just-visible object.
    pub conf_base: f64,
    /// Confidence gained between `s_min` and `s_sat`.
    pub conf_slope: f64,
    /// Standard deviation of confidence noise.
    pub conf_noise: f64,
    /// Expected false positives per pass.
    pub fp_rate: f64,
    /// Confidence range of false positives.
    pub fp_conf_range: (f64, f64),
    /// IoU threshold of the backend's own NMS.
    pub nms_iou: f64,
    pub seed: u64,
}

impl Default for SimDetectorConfig {
    fn default() -> Self {
        Self {
            s_min: 4.0,
            s_sat: 10.0,
            p_max: 0.95,
            occlusion_penalty: 0.3,
            jitter_sigma: 0.04,
            conf_base: 0.3,
            conf_slope: 0.6,
            conf_noise: 0.05,
            fp_rate: 0.2,
            fp_conf_range: (0.05, 0.45),
            nms_iou: 0.45,
            seed: 0,
        }
    }
}

impl SimDetectorConfig {
    pub fn validate(&self) -> Result<(), &'static str> {
        if !(self.s_min > 0.0 && self.s_min < self.s_sat && self.s_sat.is_finite()) {
            return Err("need 0 < s_min < s_sat");
        }
        if !(self.p_max > 0.0 && self.p_max <= 1.0) {
            return Err("p_max must lie in (0, 1]");
        }
        if !(self.occlusion_penalty >= 0.0 && self.occlusion_penalty.is_finite()) {
            return Err("occlusion_penalty must be >= 0");
        }
        if !(self.jitter_sigma >= 0.0 && self.jitter_sigma.is_finite()) {
            return Err("jitter_sigma must be >= 0");
        }
        if !(self.conf_noise >= 0.0 && self.conf_noise.is_finite()) {
            return Err("conf_noise must be >= 0");
        }
        if !(self.fp_rate >= 0.0 && self.fp_rate.is_finite()) {
            return Err("fp_rate must be >= 0");
        }
        let (lo, hi) = self.fp_conf_range;
        if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
            return Err("fp_conf_range must be an ordered sub-range of [0, 1]");
        }
        if !(self.nms_iou > 0.0 && self.nms_iou <= 1.0) {
            return Err("nms_iou must lie in (0, 1]");
        }
        Ok(())
    }

    /// Position of `apparent_height` between the floor and saturation, in [0, 1].
    fn visibility(&self, apparent_height: f64) -> f64 {
        ((apparent_height - self.s_min) / (self.s_sat - self.s_min)).clamp(0.0, 1.0)
    }
}

/// Piecewise-linear detection probability, reduced by occlusion.
pub fn sim_detect_probability(apparent_height: f64, occluded_fraction: f64, cfg: &SimDetectorConfig) -> f64 {
    let p = if apparent_height < cfg.s_min {
        0.0
    } else if apparent_height < cfg.s_sat {
        cfg.p_max * (apparent_height - cfg.s_min) / (cfg.s_sat - cfg.s_min)
    } else {
        cfg.p_max
    };
    (p - cfg.occlusion_penalty * occluded_fraction).max(0.0)
}

/// Fraction of `target` covered by the union of `others`, computed exactly
/// over the grid induced by all box edges.
pub fn occluded_fraction(target: &BBox, others: &[BBox]) -> f64 {
    let covers: Vec<BBox> = others.iter().filter_map(|o| o.intersection(target)).collect();
    if covers.is_empty() {
        return 0.0;
    }
    let mut xs = vec![target.x, target.right()];
    let mut ys = vec![target.y, target.bottom()];
    for c in &covers {
        xs.extend([c.x, c.right()]);
        ys.extend([c.y, c.bottom()]);
    }
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    ys.sort_by(f64::total_cmp);
    ys.dedup();

    let mut covered = 0.0;
    for xw in xs.windows(2) {
        let mx = 0.5 * (xw[0] + xw[1]);
        for yw in ys.windows(2) {
            let my = 0.5 * (yw[0] + yw[1]);
            if covers.iter().any(|c| c.contains_point(mx, my)) {
                covered += (xw[1] - xw[0]) * (yw[1] - yw[0]);
            }
        }
    }
    (covered / area(target)).clamp(0.0, 1.0)
}

/// Ground-truth object as the simulated detector sees it.
#[derive(Debug, Clone, Copy)]
struct Visible {
    track_id: u32,
    bbox: BBox,
    occluded: f64,
}

/// Draws detections from a scenario's ground truth.
#[derive(Debug, Clone)]
pub struct SimulatedDetector {
    cfg: SimDetectorConfig,
    frames: Arc<Vec<Vec<Visible>>>,
}

const FALSE_POSITIVE_KEY: u64 = 1 << 63;

fn keyed_rng(seed: u64, frame_idx: u64, key: u64) -> ChaCha8Rng {
    let mut bytes = [0u8; 32];
    bytes[0..8].copy_from_slice(&seed.to_le_bytes());
    bytes[8..16].copy_from_slice(&frame_idx.to_le_bytes());
    bytes[16..24].copy_from_slice(&key.to_le_bytes());
    ChaCha8Rng::from_seed(bytes)
}

/// SplitMix64 finaliser.
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn region_key(req: &DetectRequest) -> u64 {
    let r = &req.region;
    let mut h = u64::from(req.input_size);
    for v in [r.x, r.y, r.w, r.h] {
        h = mix(h ^ v.to_bits());
    }
    FALSE_POSITIVE_KEY | (h >> 1)
}

impl SimulatedDetector {
    pub fn new(scenario: &Scenario, cfg: SimDetectorConfig) -> Self {
        let frames = scenario
            .frames()
            .into_iter()
            .map(|gts| {
                gts.iter()
                    .map(|&(track_id, bbox)| {
                        let others: Vec<BBox> = gts
                            .iter()
                            .filter(|(id, o)| *id != track_id && o.intersection(&bbox).is_some())
                            .map(|(_, o)| *o)
                            .collect();
                        Visible {
                            track_id,
                            bbox,
                            occluded: occluded_fraction(&bbox, &others),
                        }
                    })
                    .collect()
            })
            .collect();
        Self {
            cfg,
            frames: Arc::new(frames),
        }
    }

    pub fn config(&self) -> &SimDetectorConfig {
        &self.cfg
    }

    fn object_detection(&self, obj: &Visible, req: &DetectRequest, scale: f64) -> Option<Detection> {
        let cfg = &self.cfg;
        let apparent = obj.bbox.h * scale;
        let p = sim_detect_probability(apparent, obj.occluded, cfg);
        let mut rng = keyed_rng(cfg.seed, req.frame_idx, u64::from(obj.track_id));
        let u: f64 = rng.random();
        if u >= p {
            return None;
        }
        let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };
        let b = obj.bbox;
        let s = cfg.jitter_sigma;
        let (dx, dy, dw, dh) = (normal() * s, normal() * s, normal() * s, normal() * s);
        let w = b.w * (1.0 + dw).max(0.1);
        let h = b.h * (1.0 + dh).max(0.1);
        let cx = b.x + 0.5 * b.w + dx * b.w;
        let cy = b.y + 0.5 * b.h + dy * b.h;
        let bbox = BBox::new(cx - 0.5 * w, cy - 0.5 * h, w, h);
        bbox.intersection(&req.region)?;
        let confidence =
            (cfg.conf_base + cfg.conf_slope * cfg.visibility(apparent) + cfg.conf_noise * normal()).clamp(0.0, 1.0);
        Some(Detection::new(bbox, confidence))
    }

    fn false_positives(&self, req: &DetectRequest, scale: f64) -> Vec<Detection> {
        let cfg = &self.cfg;
        if cfg.fp_rate <= 0.0 {
            return Vec::new();
        }
        let mut rng = keyed_rng(cfg.seed, req.frame_idx, region_key(req));
        let count = Poisson::new(cfg.fp_rate)
            .map(|d| d.sample(&mut rng) as usize)
            .unwrap_or(0);
        let (in_w, in_h) = (req.region.w * scale, req.region.h * scale);
        (0..count)
            .filter_map(|_| {
                let h = rng.random_range(cfg.s_min..=2.0 * cfg.s_sat).min(in_h);
                let w = (0.4 * h).min(in_w);
                let x = rng.random_range(0.0..=(in_w - w));
                let y = rng.random_range(0.0..=(in_h - h));
                let (lo, hi) = cfg.fp_conf_range;
                let confidence = rng.random_range(lo..=hi);
                let input_box = BBox::new(x, y, w, h);
                input_box.is_valid().then_some(Detection::new(input_box, confidence))
            })
            .collect()
    }
}

impl DetectorBackend for SimulatedDetector {
    fn detect(&self, req: &DetectRequest) -> Result<Vec<Detection>, DetectError> {
        let objects = self
            .frames
            .get(req.frame_idx as usize)
            .ok_or_else(|| DetectError::new(req.frame_idx, "frame outside scenario"))?;
        let t = req.transform();
        let mut dets: Vec<Detection> = objects
            .iter()
            .filter(|o| {
                let (cx, cy) = o.bbox.center();
                req.region.contains_point(cx, cy)
            })
            .filter_map(|o| self.object_detection(o, req, t.scale))
            .map(|d| Detection {
                bbox: t.to_input(&d.bbox),
                ..d
            })
            .collect();
        dets.extend(self.false_positives(req, t.scale));
        Ok(nms(&dets, self.cfg.nms_iou))
    }
}
