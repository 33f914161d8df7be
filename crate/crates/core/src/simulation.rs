//! Synthetic aerial pedestrian scenarios: constant-size walkers on
//! piecewise-linear paths, some of them packed into drifting crowds.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{BBox, FrameDims};

/// Frames between consecutive trajectory waypoints.
pub const WAYPOINT_INTERVAL: u64 = 30;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScenarioError {
    #[error("frame {frame_idx} out of range (scenario has {num_frames} frames)")]
    FrameOutOfRange { frame_idx: u64, num_frames: u64 },
    #[error("invalid scenario parameters: {0}")]
    InvalidParams(&'static str),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Track {
    pub track_id: u32,
    /// `(frame_idx, box)` with strictly increasing frame indices.
    pub spans: Vec<(u64, BBox)>,
}

impl Track {
    pub fn box_at(&self, frame_idx: u64) -> Option<BBox> {
        self.spans
            .binary_search_by_key(&frame_idx, |(f, _)| *f)
            .ok()
            .map(|i| self.spans[i].1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub dims: FrameDims,
    pub num_frames: u64,
    pub seed: u64,
    pub tracks: Vec<Track>,
}

impl Scenario {
    /// Boxes of every track alive at `frame_idx`, sorted by track id.
    pub fn ground_truth_at(&self, frame_idx: u64) -> Result<Vec<(u32, BBox)>, ScenarioError> {
        if frame_idx >= self.num_frames {
            return Err(ScenarioError::FrameOutOfRange {
                frame_idx,
                num_frames: self.num_frames,
            });
        }
        let mut out: Vec<(u32, BBox)> = self
            .tracks
            .iter()
            .filter_map(|t| t.box_at(frame_idx).map(|b| (t.track_id, b)))
            .collect();
        out.sort_by_key(|(id, _)| *id);
        Ok(out)
    }

    /// Ground-truth boxes for every frame, indexed by frame.
    pub fn frames(&self) -> Vec<Vec<(u32, BBox)>> {
        let mut frames = vec![Vec::new(); self.num_frames as usize];
        let mut tracks: Vec<&Track> = self.tracks.iter().collect();
        tracks.sort_by_key(|t| t.track_id);
        for t in tracks {
            for (f, b) in &t.spans {
                if let Some(slot) = frames.get_mut(*f as usize) {
                    slot.push((t.track_id, *b));
                }
            }
        }
        frames
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioParams {
    pub num_tracks: u32,
    /// Inclusive pedestrian height range in pixels.
    pub height_range: (f64, f64),
    /// Width as a fraction of height.
    pub aspect_ratio: f64,
    /// Inclusive walking speed range in pixels per frame.
    pub speed_range: (f64, f64),
    pub cluster_fraction: f64,
    pub num_clusters: u32,
    /// Crowd members stay within this distance of their crowd's centre.
    pub cluster_radius: f64,
    pub seed: u64,
}

impl Default for ScenarioParams {
    fn default() -> Self {
        Self {
            num_tracks: 30,
            height_range: (8.0, 40.0),
            aspect_ratio: 0.4,
            speed_range: (0.5, 2.0),
            cluster_fraction: 0.6,
            num_clusters: 2,
            cluster_radius: 60.0,
            seed: 0,
        }
    }
}

impl ScenarioParams {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let (hmin, hmax) = self.height_range;
        if !(hmin > 0.0 && hmin <= hmax && hmax.is_finite()) {
            return Err(ScenarioError::InvalidParams(
                "height_range must be positive and ordered",
            ));
        }
        let (smin, smax) = self.speed_range;
        if !(smin >= 0.0 && smin <= smax && smax.is_finite()) {
            return Err(ScenarioError::InvalidParams(
                "speed_range must be non-negative and ordered",
            ));
        }
        if !(self.aspect_ratio > 0.0 && self.aspect_ratio.is_finite()) {
            return Err(ScenarioError::InvalidParams("aspect_ratio must be positive"));
        }
        if !(0.0..=1.0).contains(&self.cluster_fraction) {
            return Err(ScenarioError::InvalidParams("cluster_fraction must lie in [0, 1]"));
        }
        if self.cluster_fraction > 0.0 && self.num_tracks > 0 && self.num_clusters == 0 {
            return Err(ScenarioError::InvalidParams(
                "cluster_fraction > 0 needs num_clusters >= 1",
            ));
        }
        if !(self.cluster_radius >= 0.0 && self.cluster_radius.is_finite()) {
            return Err(ScenarioError::InvalidParams("cluster_radius must be >= 0"));
        }
        Ok(())
    }
}

/// Reflects `v` back into `[lo, hi]`.
fn reflect(v: f64, lo: f64, hi: f64) -> f64 {
    if hi <= lo {
        return lo;
    }
    let span = hi - lo;
    let period = 2.0 * span;
    let t = (v - lo).rem_euclid(period);
    lo + if t > span { period - t } else { t }
}

/// Waypoints of a random walk with one leg per [`WAYPOINT_INTERVAL`] frames.
fn walk(
    rng: &mut ChaCha8Rng,
    start: (f64, f64),
    legs: usize,
    speed: (f64, f64),
    bounds: (f64, f64, f64, f64),
) -> Vec<(f64, f64)> {
    let (x_lo, y_lo, x_hi, y_hi) = bounds;
    let mut points = Vec::with_capacity(legs + 1);
    let mut p = start;
    points.push(p);
    for _ in 0..legs {
        let angle = rng.random_range(0.0..std::f64::consts::TAU);
        let s = rng.random_range(speed.0..=speed.1) * WAYPOINT_INTERVAL as f64;
        p = (
            reflect(p.0 + s * angle.cos(), x_lo, x_hi),
            reflect(p.1 + s * angle.sin(), y_lo, y_hi),
        );
        points.push(p);
    }
    points
}

fn interpolate(points: &[(f64, f64)], frame: u64) -> (f64, f64) {
    let leg = (frame / WAYPOINT_INTERVAL) as usize;
    let t = (frame % WAYPOINT_INTERVAL) as f64 / WAYPOINT_INTERVAL as f64;
    let a = points[leg.min(points.len() - 1)];
    let b = points[(leg + 1).min(points.len() - 1)];
    (a.0 + (b.0 - a.0) * t, a.1 + (b.1 - a.1) * t)
}

fn in_disk(rng: &mut ChaCha8Rng, radius: f64) -> (f64, f64) {
    let r = radius * rng.random::<f64>().sqrt();
    let a = rng.random_range(0.0..std::f64::consts::TAU);
    (r * a.cos(), r * a.sin())
}

/// Generates a scenario deterministically from `params.seed`.
///
/// The first `round(cluster_fraction * num_tracks)` tracks join crowds
/// (round-robin); each crowd centre random-walks and its members re-sample
/// their offset inside `cluster_radius` at every waypoint. Remaining tracks
/// walk independently. Paths reflect off the frame edges, so every box stays
/// inside the frame.
pub fn generate_scenario(params: &ScenarioParams, dims: FrameDims, num_frames: u64) -> Result<Scenario, ScenarioError> {
    params.validate()?;
    if num_frames < 1 {
        return Err(ScenarioError::InvalidParams("num_frames must be >= 1"));
    }
    if !dims.is_valid() {
        return Err(ScenarioError::InvalidParams("frame dimensions must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let (fw, fh) = (f64::from(dims.width), f64::from(dims.height));
    let legs = ((num_frames - 1) / WAYPOINT_INTERVAL + 1) as usize;

    let centres: Vec<Vec<(f64, f64)>> = (0..params.num_clusters)
        .map(|_| {
            let r = params.cluster_radius.min(fw / 2.0).min(fh / 2.0);
            let start = (rng.random_range(r..=fw - r), rng.random_range(r..=fh - r));
            walk(&mut rng, start, legs, params.speed_range, (r, r, fw - r, fh - r))
        })
        .collect();

    let clustered = (params.cluster_fraction * f64::from(params.num_tracks)).round() as u32;
    let mut tracks = Vec::with_capacity(params.num_tracks as usize);
    for track_id in 0..params.num_tracks {
        let h = rng.random_range(params.height_range.0..=params.height_range.1).min(fh);
        let w = (params.aspect_ratio * h).min(fw);
        let (x_hi, y_hi) = (fw - w, fh - h);

        // top-left corner waypoints
        let points: Vec<(f64, f64)> = if track_id < clustered {
            let centre = &centres[(track_id % params.num_clusters) as usize];
            centre
                .iter()
                .map(|c| {
                    let (ox, oy) = in_disk(&mut rng, params.cluster_radius);
                    (
                        (c.0 + ox - w / 2.0).clamp(0.0, x_hi),
                        (c.1 + oy - h / 2.0).clamp(0.0, y_hi),
                    )
                })
                .collect()
        } else {
            let start = (rng.random_range(0.0..=x_hi), rng.random_range(0.0..=y_hi));
            walk(&mut rng, start, legs, params.speed_range, (0.0, 0.0, x_hi, y_hi))
        };

        let spans = (0..num_frames)
            .filter_map(|f| {
                let (x, y) = interpolate(&points, f);
                BBox::new(x, y, w, h).clip_to(dims).map(|b| (f, b))
            })
            .collect();
        tracks.push(Track { track_id, spans });
    }

    Ok(Scenario {
        dims,
        num_frames,
        seed: params.seed,
        tracks,
    })
}
