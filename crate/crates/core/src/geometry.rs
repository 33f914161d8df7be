//! Axis-aligned box algebra in frame pixel coordinates.
//!
//! Boxes are `(left, top, width, height)` with the origin at the top-left
//! corner of the frame and `y` growing downward.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::proposer::Crop;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GeometryError {
    #[error("empty cluster")]
    EmptyCluster,
}

/// Axis-aligned rectangle in continuous pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub const fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        Self { x, y, w, h }
    }

    /// Builds a box from its left/top/right/bottom edges.
    pub fn from_edges(left: f64, top: f64, right: f64, bottom: f64) -> Self {
        Self::new(left, top, right - left, bottom - top)
    }

    #[inline]
    pub fn right(&self) -> f64 {
        self.x + self.w
    }

    #[inline]
    pub fn bottom(&self) -> f64 {
        self.y + self.h
    }

    #[inline]
    pub fn center(&self) -> (f64, f64) {
        (self.x + 0.5 * self.w, self.y + 0.5 * self.h)
    }

    /// Positive extent and finite fields.
    pub fn is_valid(&self) -> bool {
        [self.x, self.y, self.w, self.h].iter().all(|v| v.is_finite()) && self.w > 0.0 && self.h > 0.0
    }

    /// True when `other` lies inside `self` (edges may coincide).
    pub fn contains(&self, other: &BBox) -> bool {
        other.x >= self.x && other.y >= self.y && other.right() <= self.right() && other.bottom() <= self.bottom()
    }

    pub fn contains_point(&self, px: f64, py: f64) -> bool {
        px >= self.x && px <= self.right() && py >= self.y && py <= self.bottom()
    }

    /// Grows the box by `margin` on every side.
    pub fn inflate(&self, margin: f64) -> BBox {
        BBox::new(
            self.x - margin,
            self.y - margin,
            self.w + 2.0 * margin,
            self.h + 2.0 * margin,
        )
    }

    /// Overlapping region of two boxes, `None` when the overlap has no area.
    pub fn intersection(&self, other: &BBox) -> Option<BBox> {
        let left = self.x.max(other.x);
        let top = self.y.max(other.y);
        let right = self.right().min(other.right());
        let bottom = self.bottom().min(other.bottom());
        (right > left && bottom > top).then(|| BBox::from_edges(left, top, right, bottom))
    }

    /// The part of the box inside the frame, `None` if nothing remains.
    pub fn clip_to(&self, dims: FrameDims) -> Option<BBox> {
        self.intersection(&dims.rect())
    }
}

/// Frame extent in whole pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FrameDims {
    pub width: u32,
    pub height: u32,
}

impl FrameDims {
    pub const fn new(width: u32, height: u32) -> Self {
        Self { width, height }
    }

    pub fn is_valid(&self) -> bool {
        self.width >= 1 && self.height >= 1
    }

    /// The whole frame as a box.
    pub fn rect(&self) -> BBox {
        BBox::new(0.0, 0.0, f64::from(self.width), f64::from(self.height))
    }
}

/// One detector output: a box, its confidence, and the class label
/// (`0` is pedestrian).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: BBox,
    pub confidence: f64,
    #[serde(default)]
    pub class_id: u32,
}

impl Detection {
    pub const fn new(bbox: BBox, confidence: f64) -> Self {
        Self {
            bbox,
            confidence,
            class_id: 0,
        }
    }

    pub fn is_valid(&self) -> bool {
        self.bbox.is_valid() && (0.0..=1.0).contains(&self.confidence)
    }
}

pub fn area(b: &BBox) -> f64 {
    b.w * b.h
}

/// Intersection over union. Zero for disjoint boxes.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let Some(inter) = a.intersection(b) else {
        return 0.0;
    };
    let inter = area(&inter);
    let union = area(a) + area(b) - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

/// Chebyshev gap: the larger of the horizontal and vertical separations,
/// each clamped at zero when the projections overlap.
pub fn gap(a: &BBox, b: &BBox) -> f64 {
    let dx = (b.x - a.right()).max(a.x - b.right()).max(0.0);
    let dy = (b.y - a.bottom()).max(a.y - b.bottom()).max(0.0);
    dx.max(dy)
}

/// Smallest rectangle enclosing every box.
pub fn union_rect(boxes: &[BBox]) -> Result<BBox, GeometryError> {
    let (first, rest) = boxes.split_first().ok_or(GeometryError::EmptyCluster)?;
    let (mut left, mut top, mut right, mut bottom) = (first.x, first.y, first.right(), first.bottom());
    for b in rest {
        left = left.min(b.x);
        top = top.min(b.y);
        right = right.max(b.right());
        bottom = bottom.max(b.bottom());
    }
    Ok(BBox::from_edges(left, top, right, bottom))
}

/// Affine map between frame space and a detector's input space:
/// `input = (frame - origin) * scale`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InputTransform {
    pub origin_x: f64,
    pub origin_y: f64,
    pub scale: f64,
}

impl InputTransform {
    /// Square resize of `region` to `input_size`, scaled on the longer side
    /// (letterbox semantics for non-square regions).
    pub fn for_region(region: &BBox, input_size: u32) -> Self {
        Self {
            origin_x: region.x,
            origin_y: region.y,
            scale: f64::from(input_size) / region.w.max(region.h),
        }
    }

    pub fn to_input(&self, b: &BBox) -> BBox {
        BBox::new(
            (b.x - self.origin_x) * self.scale,
            (b.y - self.origin_y) * self.scale,
            b.w * self.scale,
            b.h * self.scale,
        )
    }

    pub fn to_frame(&self, b: &BBox) -> BBox {
        BBox::new(
            b.x / self.scale + self.origin_x,
            b.y / self.scale + self.origin_y,
            b.w / self.scale,
            b.h / self.scale,
        )
    }
}

pub fn to_input_coords(b: &BBox, crop: &Crop) -> BBox {
    crop.transform().to_input(b)
}

pub fn to_frame_coords(b: &BBox, crop: &Crop) -> BBox {
    crop.transform().to_frame(b)
}

/// Canonical detection order: confidence descending, then smaller `x`,
/// then smaller `y`.
pub fn confidence_order(a: &Detection, b: &Detection) -> Ordering {
    b.confidence
        .total_cmp(&a.confidence)
        .then_with(|| a.bbox.x.total_cmp(&b.bbox.x))
        .then_with(|| a.bbox.y.total_cmp(&b.bbox.y))
}

/// Greedy non-maximum suppression. A detection survives iff its IoU with
/// every previously kept detection is below `iou_threshold`. Output is in
/// [`confidence_order`].
pub fn nms(dets: &[Detection], iou_threshold: f64) -> Vec<Detection> {
    let mut order: Vec<Detection> = dets.to_vec();
    order.sort_by(confidence_order);
    let mut kept: Vec<Detection> = Vec::with_capacity(order.len());
    for d in order {
        if kept.iter().all(|k| iou(&k.bbox, &d.bbox) < iou_threshold) {
            kept.push(d);
        }
    }
    kept
}
