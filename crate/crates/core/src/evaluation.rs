//! Detection scoring: greedy per-frame matching, all-point interpolated
//! average precision, and frame-rate statistics.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{confidence_order, iou, BBox, Detection};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("undefined recall: no ground-truth boxes")]
    UndefinedRecall,
    #[error("no latencies to summarise")]
    NoLatencies,
    #[error("invalid eval config: {0}")]
    InvalidConfig(&'static str),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub iou_match_threshold: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            iou_match_threshold: 0.5,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<(), EvalError> {
        if self.iou_match_threshold > 0.0 && self.iou_match_threshold <= 1.0 {
            Ok(())
        } else {
            Err(EvalError::InvalidConfig("iou_match_threshold must lie in (0, 1]"))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub ap: f64,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub mean_fps: f64,
    pub p5_fps: f64,
}

/// Matching outcome for one frame. `is_tp` and `matched_gt` follow the input
/// detection order.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameMatch {
    pub is_tp: Vec<bool>,
    pub matched_gt: Vec<Option<usize>>,
    pub unmatched_gt: usize,
}

/// Greedy matching in descending confidence: each detection claims the
/// still-unmatched ground truth with the highest IoU, if that IoU reaches
/// `iou_threshold`.
pub fn match_frame(dets: &[Detection], gts: &[BBox], iou_threshold: f64) -> FrameMatch {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| confidence_order(&dets[a], &dets[b]));
    let mut taken = vec![false; gts.len()];
    let mut matched_gt = vec![None; dets.len()];
    for i in order {
        let best = gts
            .iter()
            .enumerate()
            .filter(|(g, _)| !taken[*g])
            .map(|(g, gt)| (g, iou(&dets[i].bbox, gt)))
            .fold(None, |best: Option<(usize, f64)>, (g, v)| match best {
                Some((_, bv)) if bv >= v => best,
                _ => Some((g, v)),
            });
        if let Some((g, v)) = best {
            if v >= iou_threshold {
                taken[g] = true;
                matched_gt[i] = Some(g);
            }
        }
    }
    FrameMatch {
        is_tp: matched_gt.iter().map(Option::is_some).collect(),
        unmatched_gt: taken.iter().filter(|t| !**t).count(),
        matched_gt,
    }
}

/// Precision/recall after each pooled detection, highest confidence first.
#[derive(Debug, Clone, PartialEq)]
pub struct PrCurve {
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub true_positives: usize,
    pub false_positives: usize,
    pub total_gt: usize,
}

/// Pools every frame's matched detections into one ranked list. Frames are
/// paired by index; a missing entry on either side counts as empty.
pub fn pr_curve(all_dets: &[Vec<Detection>], all_gts: &[Vec<BBox>], cfg: &EvalConfig) -> Result<PrCurve, EvalError> {
    cfg.validate()?;
    let total_gt: usize = all_gts.iter().map(Vec::len).sum();
    if total_gt == 0 {
        return Err(EvalError::UndefinedRecall);
    }
    let mut pooled: Vec<(Detection, usize, bool)> = Vec::new();
    for (frame, dets) in all_dets.iter().enumerate() {
        let gts = all_gts.get(frame).map(Vec::as_slice).unwrap_or(&[]);
        let m = match_frame(dets, gts, cfg.iou_match_threshold);
        pooled.extend(dets.iter().zip(m.is_tp).map(|(d, tp)| (*d, frame, tp)));
    }
    pooled.sort_by(|a, b| confidence_order(&a.0, &b.0).then(a.1.cmp(&b.1)));

    let (mut tp, mut fp) = (0usize, 0usize);
    let mut precision = Vec::with_capacity(pooled.len());
    let mut recall = Vec::with_capacity(pooled.len());
    for (_, _, is_tp) in &pooled {
        if *is_tp {
            tp += 1;
        } else {
            fp += 1;
        }
        precision.push(tp as f64 / (tp + fp) as f64);
        recall.push(tp as f64 / total_gt as f64);
    }
    Ok(PrCurve {
        precision,
        recall,
        true_positives: tp,
        false_positives: fp,
        total_gt,
    })
}

impl PrCurve {
    /// Area under the monotone precision envelope.
    pub fn average_precision(&self) -> f64 {
        let n = self.precision.len();
        let mut envelope = self.precision.clone();
        for i in (0..n.saturating_sub(1)).rev() {
            envelope[i] = envelope[i].max(envelope[i + 1]);
        }
        let mut ap = 0.0;
        let mut prev_recall = 0.0;
        for (&r, &p) in self.recall.iter().zip(&envelope) {
            ap += (r - prev_recall) * p;
            prev_recall = r;
        }
        ap.clamp(0.0, 1.0)
    }
}

pub fn average_precision(
    all_dets: &[Vec<Detection>],
    all_gts: &[Vec<BBox>],
    cfg: &EvalConfig,
) -> Result<f64, EvalError> {
    Ok(pr_curve(all_dets, all_gts, cfg)?.average_precision())
}

/// `(mean_fps, p5_fps)`: total frames over total time, and the reciprocal of
/// the nearest-rank 95th-percentile latency.
pub fn fps_summary(latencies: &[f64]) -> Result<(f64, f64), EvalError> {
    if latencies.is_empty() {
        return Err(EvalError::NoLatencies);
    }
    let total: f64 = latencies.iter().sum();
    let mean_fps = latencies.len() as f64 / total;
    let mut sorted = latencies.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = (0.95 * sorted.len() as f64).ceil() as usize;
    let p95 = sorted[rank.clamp(1, sorted.len()) - 1];
    Ok((mean_fps, 1.0 / p95))
}

pub fn evaluate(
    all_dets: &[Vec<Detection>],
    all_gts: &[Vec<BBox>],
    latencies: &[f64],
    cfg: &EvalConfig,
) -> Result<EvalReport, EvalError> {
    let curve = pr_curve(all_dets, all_gts, cfg)?;
    let (mean_fps, p5_fps) = fps_summary(latencies)?;
    Ok(EvalReport {
        ap: curve.average_precision(),
        true_positives: curve.true_positives,
        false_positives: curve.false_positives,
        false_negatives: curve.total_gt - curve.true_positives,
        precision: curve.precision,
        recall: curve.recall,
        mean_fps,
        p5_fps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bx(x: f64) -> BBox {
        BBox::new(x, 0.0, 10.0, 10.0)
    }

    fn det(x: f64, c: f64) -> Detection {
        Detection::new(bx(x), c)
    }

    #[test]
    fn single_match() {
        let m = match_frame(&[det(0.5, 0.9)], &[bx(0.0)], 0.5);
        assert_eq!(m.is_tp, vec![true]);
        assert_eq!(m.unmatched_gt, 0);
    }

    #[test]
    fn duplicate_detection_is_false_positive() {
        let m = match_frame(&[det(1.0, 0.6), det(0.0, 0.9)], &[bx(0.0)], 0.5);
        assert_eq!(m.is_tp, vec![false, true]);
    }

    #[test]
    fn detection_takes_best_overlapping_gt() {
        // IoU 0.7 with the first GT, 0.6 with the second
        let d = Detection::new(BBox::new(0.0, 0.0, 10.0, 10.0), 0.9);
        let g1 = BBox::new(0.0, 0.0, 10.0, 7.0);
        let g2 = BBox::new(0.0, 0.0, 10.0, 6.0);
        let m = match_frame(&[d], &[g2, g1], 0.5);
        assert_eq!(m.matched_gt, vec![Some(1)]);
        assert_eq!(m.unmatched_gt, 1);
    }

    #[test]
    fn ap_examples() {
        let cfg = EvalConfig::default();
        let gts = vec![vec![bx(0.0), bx(100.0)]];
        assert_eq!(
            average_precision(&[vec![det(0.0, 0.9), det(100.0, 0.8)]], &gts, &cfg).unwrap(),
            1.0
        );
        assert_eq!(average_precision(&[vec![]], &gts, &cfg).unwrap(), 0.0);
        let dets = vec![vec![det(0.0, 0.9), det(50.0, 0.8), det(100.0, 0.7)]];
        let ap = average_precision(&dets, &gts, &cfg).unwrap();
        assert!((ap - (0.5 + 0.5 * 2.0 / 3.0)).abs() < 1e-12);
        assert_eq!(
            average_precision(&dets, &[vec![]], &cfg),
            Err(EvalError::UndefinedRecall)
        );
    }

    #[test]
    fn fps_examples() {
        let (mean, p5) = fps_summary(&[0.2; 10]).unwrap();
        assert!((mean - 5.0).abs() < 1e-12);
        assert_eq!(p5, 5.0);
        assert!((fps_summary(&[0.1, 0.3]).unwrap().0 - 5.0).abs() < 1e-12);
        let mut lat = vec![0.1; 100];
        lat.push(1.0);
        assert_eq!(fps_summary(&lat).unwrap().1, 10.0);
        assert_eq!(fps_summary(&[]), Err(EvalError::NoLatencies));
    }

    #[test]
    fn report_counts() {
        let gts = vec![vec![bx(0.0), bx(100.0)], vec![bx(0.0)]];
        let dets = vec![vec![det(0.0, 0.9), det(300.0, 0.4)], vec![]];
        let r = evaluate(&dets, &gts, &[0.2, 0.2], &EvalConfig::default()).unwrap();
        assert_eq!((r.true_positives, r.false_positives, r.false_negatives), (1, 1, 2));
        assert_eq!(r.recall, vec![1.0 / 3.0, 1.0 / 3.0]);
    }
}
