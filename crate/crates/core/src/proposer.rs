//! Crop proposal: cluster the previous frame's accepted boxes and cover each
//! cluster with one integer-aligned square crop.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{gap, union_rect, BBox, Detection, FrameDims, InputTransform};

/// Square sub-rectangle of the frame, resized to `input_size` before
/// inference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Crop {
    pub x: u32,
    pub y: u32,
    pub side: u32,
    pub input_size: u32,
}

impl Crop {
    pub fn rect(&self) -> BBox {
        BBox::new(
            f64::from(self.x),
            f64::from(self.y),
            f64::from(self.side),
            f64::from(self.side),
        )
    }

    pub fn transform(&self) -> InputTransform {
        InputTransform::for_region(&self.rect(), self.input_size)
    }

    pub fn is_inside(&self, dims: FrameDims) -> bool {
        u64::from(self.x) + u64::from(self.side) <= u64::from(dims.width)
            && u64::from(self.y) + u64::from(self.side) <= u64::from(dims.height)
    }

    fn contains(&self, other: &Crop) -> bool {
        self.rect().contains(&other.rect())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("invalid proposer config: {0}")]
    Invalid(&'static str),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProposerConfig {
    /// Boxes whose Chebyshev gap is at most this are linked into one cluster.
    pub merge_gap: f64,
    /// Context padding added on every side of a cluster.
    pub margin: f64,
    pub min_crop_side: u32,
    /// More crops than this and the proposer gives up in favour of a full
    /// frame pass.
    pub max_crops: usize,
}

impl Default for ProposerConfig {
    fn default() -> Self {
        Self {
            merge_gap: 32.0,
            margin: 16.0,
            min_crop_side: 128,
            max_crops: 8,
        }
    }
}

impl ProposerConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.merge_gap.is_finite() && self.merge_gap >= 0.0) {
            return Err(ConfigError::Invalid("merge_gap must be >= 0"));
        }
        if !(self.margin.is_finite() && self.margin >= 0.0) {
            return Err(ConfigError::Invalid("margin must be >= 0"));
        }
        if self.min_crop_side < 32 {
            return Err(ConfigError::Invalid("min_crop_side must be >= 32"));
        }
        if self.max_crops < 1 {
            return Err(ConfigError::Invalid("max_crops must be >= 1"));
        }
        Ok(())
    }
}

/// Outcome of crop proposal.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Proposal {
    Crops(Vec<Crop>),
    /// Too many crops; the caller should run a full-frame pass instead.
    FallbackFullFrame,
}

impl Proposal {
    pub fn crops(&self) -> &[Crop] {
        match self {
            Proposal::Crops(c) => c,
            Proposal::FallbackFullFrame => &[],
        }
    }
}

/// Single-link clustering under `gap(a, b) <= merge_gap`. Clusters are
/// ordered by their smallest member (`x`, then `y`); members keep input order.
pub fn cluster_boxes(boxes: &[BBox], merge_gap: f64) -> Vec<Vec<BBox>> {
    cluster_indices(boxes, merge_gap)
        .into_iter()
        .map(|members| members.into_iter().map(|i| boxes[i]).collect())
        .collect()
}

fn cluster_indices(boxes: &[BBox], merge_gap: f64) -> Vec<Vec<usize>> {
    let n = boxes.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    for i in 0..n {
        for j in (i + 1)..n {
            if gap(&boxes[i], &boxes[j]) <= merge_gap {
                let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                if ri != rj {
                    parent[ri.max(rj)] = ri.min(rj);
                }
            }
        }
    }
    let mut by_root: Vec<Vec<usize>> = vec![Vec::new(); n];
    for i in 0..n {
        let r = find(&mut parent, i);
        by_root[r].push(i);
    }
    let mut clusters: Vec<Vec<usize>> = by_root.into_iter().filter(|c| !c.is_empty()).collect();
    let key = |c: &Vec<usize>| {
        c.iter()
            .map(|&i| (boxes[i].x, boxes[i].y))
            .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)))
            .unwrap_or((0.0, 0.0))
    };
    clusters.sort_by(|a, b| {
        let (ka, kb) = (key(a), key(b));
        ka.0.total_cmp(&kb.0).then(ka.1.total_cmp(&kb.1)).then(a[0].cmp(&b[0]))
    });
    clusters
}

/// Proposes square crops covering the previous frame's accepted detections.
///
/// Each cluster's enclosing rectangle is padded by `cfg.margin`, clipped to
/// the frame and snapped outward to whole pixels. The crop side is the larger
/// of that rectangle's extents and `cfg.min_crop_side`; the square is centred
/// on the rectangle and shifted (never shrunk) to fit inside the frame. A
/// cluster longer than the frame's short side is split along its long axis
/// into windows that each fit one square. Crops nested in other crops are
/// dropped. A detection whose padded extent alone exceeds the short side
/// cannot be covered by any square, so it forces the full-frame fallback.
pub fn propose_crops(prev_accepted: &[Detection], dims: FrameDims, cfg: &ProposerConfig, input_size: u32) -> Proposal {
    let boxes: Vec<BBox> = prev_accepted.iter().map(|d| d.bbox).collect();
    let max_side = f64::from(dims.width.min(dims.height));
    let mut crops: Vec<Crop> = Vec::new();
    for cluster in cluster_boxes(&boxes, cfg.merge_gap) {
        let padded: Vec<BBox> = cluster
            .iter()
            .filter_map(|b| b.inflate(cfg.margin).clip_to(dims))
            .collect();
        if padded
            .iter()
            .any(|b| snapped_span(b.x, b.right()) > max_side || snapped_span(b.y, b.bottom()) > max_side)
        {
            return Proposal::FallbackFullFrame;
        }
        let Ok(rect) = union_rect(&padded) else { continue };
        if snapped_span(rect.x, rect.right()) <= max_side && snapped_span(rect.y, rect.bottom()) <= max_side {
            crops.push(crop_for_rect(&rect, dims, cfg.min_crop_side, input_size));
        } else {
            for window in split_long_cluster(padded, rect.w >= rect.h, max_side) {
                crops.push(crop_for_rect(&window, dims, cfg.min_crop_side, input_size));
            }
        }
    }

    let mut kept: Vec<Crop> = Vec::with_capacity(crops.len());
    for (i, c) in crops.iter().enumerate() {
        let nested = crops
            .iter()
            .enumerate()
            .any(|(j, o)| j != i && o.contains(c) && (o != c || j < i));
        if !nested {
            kept.push(*c);
        }
    }

    if kept.len() > cfg.max_crops {
        Proposal::FallbackFullFrame
    } else {
        Proposal::Crops(kept)
    }
}

fn snapped_span(lo: f64, hi: f64) -> f64 {
    hi.ceil() - lo.floor()
}

/// Greedy windows along the long axis, each no longer than `max_side`.
fn split_long_cluster(mut padded: Vec<BBox>, horizontal: bool, max_side: f64) -> Vec<BBox> {
    let lo = |b: &BBox| if horizontal { b.x } else { b.y };
    let hi = |b: &BBox| if horizontal { b.right() } else { b.bottom() };
    padded.sort_by(|a, b| lo(a).total_cmp(&lo(b)));
    let mut windows: Vec<(f64, BBox)> = Vec::new();
    for b in padded {
        match windows.last_mut() {
            Some((start, rect)) if snapped_span(*start, hi(&b)) <= max_side => {
                *rect = union_rect(&[*rect, b]).unwrap_or(*rect);
            }
            _ => windows.push((lo(&b), b)),
        }
    }
    windows.into_iter().map(|(_, r)| r).collect()
}

/// Square covering `rect` (inside the frame, at most the short side long).
fn crop_for_rect(rect: &BBox, dims: FrameDims, min_side: u32, input_size: u32) -> Crop {
    let left = rect.x.floor() as i64;
    let top = rect.y.floor() as i64;
    let span_w = rect.right().ceil() as i64 - left;
    let span_h = rect.bottom().ceil() as i64 - top;
    let frame_w = i64::from(dims.width);
    let frame_h = i64::from(dims.height);
    let side = span_w.max(span_h).max(i64::from(min_side)).min(frame_w.min(frame_h));
    let x = (left - (side - span_w) / 2).clamp(0, frame_w - side);
    let y = (top - (side - span_h) / 2).clamp(0, frame_h - side);
    Crop {
        x: x as u32,
        y: y as u32,
        side: side as u32,
        input_size,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn det(x: f64, y: f64, w: f64, h: f64) -> Detection {
        Detection::new(BBox::new(x, y, w, h), 0.9)
    }

    const HD: FrameDims = FrameDims::new(1920, 1080);

    #[test]
    fn clustering_examples() {
        let b1 = BBox::new(0.0, 0.0, 10.0, 10.0);
        let b2 = BBox::new(12.0, 0.0, 10.0, 10.0);
        let b3 = BBox::new(50.0, 0.0, 10.0, 10.0);
        assert_eq!(cluster_boxes(&[b1, b2, b3], 5.0), vec![vec![b1, b2], vec![b3]]);
        assert_eq!(cluster_boxes(&[b3, b2, b1], 1.0), vec![vec![b1], vec![b2], vec![b3]]);
        assert!(cluster_boxes(&[], 5.0).is_empty());
    }

    #[test]
    fn clustering_is_transitive() {
        let boxes = [
            BBox::new(0.0, 0.0, 10.0, 10.0),
            BBox::new(40.0, 0.0, 10.0, 10.0),
            BBox::new(20.0, 0.0, 10.0, 10.0),
        ];
        assert_eq!(cluster_boxes(&boxes, 10.0).len(), 1);
    }

    #[test]
    fn single_detection_crop() {
        let p = propose_crops(&[det(100.0, 100.0, 20.0, 40.0)], HD, &ProposerConfig::default(), 416);
        assert_eq!(
            p,
            Proposal::Crops(vec![Crop {
                x: 46,
                y: 56,
                side: 128,
                input_size: 416
            }])
        );
    }

    #[test]
    fn corner_detection_is_translated_inside() {
        let p = propose_crops(&[det(0.0, 0.0, 20.0, 20.0)], HD, &ProposerConfig::default(), 416);
        assert_eq!(
            p,
            Proposal::Crops(vec![Crop {
                x: 0,
                y: 0,
                side: 128,
                input_size: 416
            }])
        );
        let p = propose_crops(&[det(1900.0, 1070.0, 20.0, 10.0)], HD, &ProposerConfig::default(), 416);
        assert_eq!(
            p,
            Proposal::Crops(vec![Crop {
                x: 1792,
                y: 952,
                side: 128,
                input_size: 416
            }])
        );
    }

    #[test]
    fn too_many_crops_falls_back() {
        let dets: Vec<Detection> = (0..20)
            .map(|i| {
                det(
                    f64::from(i % 5) * 380.0 + 10.0,
                    f64::from(i / 5) * 260.0 + 10.0,
                    10.0,
                    20.0,
                )
            })
            .collect();
        assert_eq!(
            propose_crops(&dets, HD, &ProposerConfig::default(), 416),
            Proposal::FallbackFullFrame
        );
    }

    #[test]
    fn oversized_detection_falls_back() {
        // 130 px of height plus margins cannot fit a square of side <= 120
        let p = propose_crops(
            &[det(10.0, 50.0, 20.0, 130.0)],
            FrameDims::new(120, 300),
            &ProposerConfig::default(),
            416,
        );
        assert_eq!(p, Proposal::FallbackFullFrame);
    }

    #[test]
    fn empty_input_gives_no_crops() {
        assert_eq!(
            propose_crops(&[], HD, &ProposerConfig::default(), 416),
            Proposal::Crops(vec![])
        );
    }

    #[test]
    fn nested_crops_are_dropped() {
        // two clusters whose crops coincide after clamping to the corner
        let cfg = ProposerConfig {
            merge_gap: 0.0,
            ..ProposerConfig::default()
        };
        let p = propose_crops(&[det(0.0, 0.0, 10.0, 10.0), det(30.0, 30.0, 10.0, 10.0)], HD, &cfg, 416);
        assert_eq!(p.crops().len(), 1);
    }

    #[test]
    fn wide_cluster_is_split() {
        let dims = FrameDims::new(1000, 200);
        let cfg = ProposerConfig {
            merge_gap: 1000.0,
            ..ProposerConfig::default()
        };
        let dets = [det(10.0, 50.0, 10.0, 20.0), det(900.0, 50.0, 10.0, 20.0)];
        let crops = match propose_crops(&dets, dims, &cfg, 416) {
            Proposal::Crops(c) => c,
            other => panic!("unexpected {other:?}"),
        };
        assert_eq!(crops.len(), 2);
        for c in &crops {
            assert_eq!(c.side, 128);
            assert!(c.is_inside(dims));
        }
        for d in &dets {
            let need = d.bbox.inflate(cfg.margin).clip_to(dims).unwrap();
            assert!(crops.iter().any(|c| c.rect().contains(&need)));
        }
    }

    #[test]
    fn config_validation() {
        assert!(ProposerConfig::default().validate().is_ok());
        assert!(ProposerConfig {
            min_crop_side: 16,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(ProposerConfig {
            max_crops: 0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(ProposerConfig {
            merge_gap: -1.0,
            ..Default::default()
        }
        .validate()
        .is_err());
    }
}
