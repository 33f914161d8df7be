//! Independent reference implementations used as test oracles. None of these
//! call into the library's geometry or scoring code.
#![allow(dead_code)]

use cropdet::{BBox, Detection};

/// IoU of integer boxes by counting unit cells.
pub fn raster_iou(a: (i64, i64, i64, i64), b: (i64, i64, i64, i64)) -> f64 {
    let inside = |r: (i64, i64, i64, i64), cx: i64, cy: i64| cx >= r.0 && cx < r.0 + r.2 && cy >= r.1 && cy < r.1 + r.3;
    let x0 = a.0.min(b.0);
    let y0 = a.1.min(b.1);
    let x1 = (a.0 + a.2).max(b.0 + b.2);
    let y1 = (a.1 + a.3).max(b.1 + b.3);
    let (mut inter, mut union) = (0u64, 0u64);
    for cy in y0..y1 {
        for cx in x0..x1 {
            let (ia, ib) = (inside(a, cx, cy), inside(b, cx, cy));
            inter += u64::from(ia && ib);
            union += u64::from(ia || ib);
        }
    }
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Fraction of integer box `t`'s unit cells covered by any of `others`.
pub fn raster_occlusion(t: (i64, i64, i64, i64), others: &[(i64, i64, i64, i64)]) -> f64 {
    let mut covered = 0u64;
    for cy in t.1..t.1 + t.3 {
        for cx in t.0..t.0 + t.2 {
            if others
                .iter()
                .any(|o| cx >= o.0 && cx < o.0 + o.2 && cy >= o.1 && cy < o.1 + o.3)
            {
                covered += 1;
            }
        }
    }
    covered as f64 / (t.2 * t.3) as f64
}

pub fn bbox_of(r: (i64, i64, i64, i64)) -> BBox {
    BBox::new(r.0 as f64, r.1 as f64, r.2 as f64, r.3 as f64)
}

/// Textbook IoU on edge coordinates.
pub fn ref_iou(a: &BBox, b: &BBox) -> f64 {
    let iw = ((a.x + a.w).min(b.x + b.w) - a.x.max(b.x)).max(0.0);
    let ih = ((a.y + a.h).min(b.y + b.h) - a.y.max(b.y)).max(0.0);
    let inter = iw * ih;
    let union = a.w * a.h + b.w * b.h - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Number of true positives among detections scoring at least `threshold`,
/// re-matched from scratch: highest confidence first, each taking the
/// free ground truth of greatest IoU (first such on ties).
fn true_positives_at(frames: &[(Vec<Detection>, Vec<BBox>)], threshold: f64, iou_thr: f64) -> (usize, usize) {
    let (mut tp, mut n) = (0, 0);
    for (dets, gts) in frames {
        let mut kept: Vec<&Detection> = dets.iter().filter(|d| d.confidence >= threshold).collect();
        kept.sort_by(|a, b| b.confidence.partial_cmp(&a.confidence).unwrap());
        let mut free = vec![true; gts.len()];
        for d in kept {
            n += 1;
            let mut best: Option<(usize, f64)> = None;
            for (g, gt) in gts.iter().enumerate() {
                if !free[g] {
                    continue;
                }
                let v = ref_iou(&d.bbox, gt);
                if best.is_none_or(|(_, bv)| v > bv) {
                    best = Some((g, v));
                }
            }
            if let Some((g, v)) = best {
                if v >= iou_thr {
                    free[g] = false;
                    tp += 1;
                }
            }
        }
    }
    (tp, n)
}

/// All-point AP computed by sweeping every distinct confidence threshold and
/// taking, at each recall step, the best precision at that recall or beyond.
/// Assumes confidences are distinct.
pub fn brute_force_ap(frames: &[(Vec<Detection>, Vec<BBox>)], iou_thr: f64) -> Option<f64> {
    let total_gt: usize = frames.iter().map(|(_, g)| g.len()).sum();
    if total_gt == 0 {
        return None;
    }
    let mut thresholds: Vec<f64> = frames
        .iter()
        .flat_map(|(d, _)| d.iter().map(|d| d.confidence))
        .collect();
    thresholds.sort_by(|a, b| b.partial_cmp(a).unwrap());
    thresholds.dedup();
    let points: Vec<(f64, f64)> = thresholds
        .iter()
        .map(|&t| {
            let (tp, n) = true_positives_at(frames, t, iou_thr);
            (tp as f64 / total_gt as f64, tp as f64 / n as f64)
        })
        .collect();
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (k, &(r, _)) in points.iter().enumerate() {
        let best_p = points[k..].iter().map(|p| p.1).fold(0.0, f64::max);
        ap += (r - prev_recall) * best_p;
        prev_recall = r;
    }
    Some(ap)
}
