//! COCO-style detection metrics: greedy matching, pooled precision–recall,
//! 101-point interpolated AP, recall at IoU, and an F1 operating-point sweep.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::boxes::{iou, BoundingBox, Detection};
use crate::detect::FrameDetections;
use crate::error::{Error, Result};

/// Detections and ground truth of one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub frame_id: u64,
    pub sequence_id: String,
    pub event_count: u64,
    pub detections: Vec<Detection>,
    pub ground_truths: Vec<BoundingBox>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    /// Per detection (input order): true positive at this threshold.
    pub det_tp: Vec<bool>,
    pub det_gt: Vec<Option<usize>>,
    /// Per detection: IoU with its matched GT, or its best IoU over all GTs
    /// when unmatched.
    pub det_iou: Vec<f64>,
    pub gt_matched: Vec<bool>,
    /// Per GT: best IoU over every detection, matched or not.
    pub gt_best_iou: Vec<f64>,
}

impl MatchResult {
    pub fn tp(&self) -> usize {
        self.det_tp.iter().filter(|&&t| t).count()
    }

    pub fn fp(&self) -> usize {
        self.det_tp.len() - self.tp()
    }

    pub fn fn_count(&self) -> usize {
        self.gt_matched.iter().filter(|&&m| !m).count()
    }
}

/// Detection indices by descending score, stable on ties.
pub fn score_order(dets: &[Detection]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score));
    order
}

/// Each detection, by descending score, claims the unmatched GT with the
/// highest IoU at or above `iou_threshold` (earliest GT on ties).
pub fn match_frame(dets: &[Detection], gts: &[BoundingBox], iou_threshold: f64) -> MatchResult {
    let mut r = MatchResult {
        det_tp: vec![false; dets.len()],
        det_gt: vec![None; dets.len()],
        det_iou: vec![0.0; dets.len()],
        gt_matched: vec![false; gts.len()],
        gt_best_iou: vec![0.0; gts.len()],
    };
    for d in score_order(dets) {
        let mut best: Option<(usize, f64)> = None;
        let mut best_any = 0.0f64;
        for (g, gt) in gts.iter().enumerate() {
            let o = iou(&dets[d].bbox, gt);
            best_any = best_any.max(o);
            r.gt_best_iou[g] = r.gt_best_iou[g].max(o);
            if !r.gt_matched[g] && o >= iou_threshold && best.is_none_or(|(_, b)| o > b) {
                best = Some((g, o));
            }
        }
        match best {
            Some((g, o)) => {
                r.gt_matched[g] = true;
                r.det_tp[d] = true;
                r.det_gt[d] = Some(g);
                r.det_iou[d] = o;
            }
            None => r.det_iou[d] = best_any,
        }
    }
    r
}

fn total_gts(frames: &[FrameRecord]) -> usize {
    frames.iter().map(|f| f.ground_truths.len()).sum()
}

fn require_gts(frames: &[FrameRecord]) -> Result<usize> {
    match total_gts(frames) {
        0 => Err(Error::Undefined("the corpus has no ground-truth boxes".into())),
        n => Ok(n),
    }
}

/// Pooled `(score, is_tp)` over the corpus, sorted by descending score
/// (stable in frame order, then within-frame score order).
pub fn pooled_scores(frames: &[FrameRecord], iou_threshold: f64) -> Vec<(f64, bool)> {
    let mut pool = Vec::new();
    for f in frames {
        let m = match_frame(&f.detections, &f.ground_truths, iou_threshold);
        for d in score_order(&f.detections) {
            pool.push((f.detections[d].score, m.det_tp[d]));
        }
    }
    pool.sort_by(|a, b| b.0.total_cmp(&a.0));
    pool
}

/// Precision and recall after each pooled detection.
pub fn precision_recall(frames: &[FrameRecord], iou_threshold: f64) -> Result<Vec<(f64, f64)>> {
    let n_gt = require_gts(frames)? as f64;
    let mut tp = 0usize;
    Ok(pooled_scores(frames, iou_threshold)
        .iter()
        .enumerate()
        .map(|(i, &(_, is_tp))| {
            tp += is_tp as usize;
            (tp as f64 / (i + 1) as f64, tp as f64 / n_gt)
        })
        .collect())
}

/// 101-point interpolated AP: the mean over recall levels `r = 0, 0.01, ...,
/// 1` of the best precision achieved at recall `>= r`.
pub fn average_precision(frames: &[FrameRecord], iou_threshold: f64) -> Result<f64> {
    let pr = precision_recall(frames, iou_threshold)?;
    // running max from the right gives the precision envelope
    let mut envelope: Vec<f64> = pr.iter().map(|p| p.0).collect();
    for i in (0..envelope.len().saturating_sub(1)).rev() {
        envelope[i] = envelope[i].max(envelope[i + 1]);
    }
    let mut sum = 0.0;
    let mut j = 0;
    for k in 0..=100 {
        let r = k as f64 / 100.0;
        while j < pr.len() && pr[j].1 < r {
            j += 1;
        }
        if j < pr.len() {
            sum += envelope[j];
        }
    }
    Ok(sum / 101.0)
}

/// `0.50, 0.55, ..., 0.95`.
pub fn coco_thresholds() -> Vec<f64> {
    (0..10).map(|k| (50 + 5 * k) as f64 / 100.0).collect()
}

pub fn map_range(frames: &[FrameRecord], thresholds: &[f64]) -> Result<f64> {
    if thresholds.is_empty() {
        return Err(Error::Config("no IoU thresholds given".into()));
    }
    let mut s = 0.0;
    for &t in thresholds {
        s += average_precision(frames, t)?;
    }
    Ok(s / thresholds.len() as f64)
}

/// `TP / (TP + FN)` at the given IoU, over every detection supplied.
pub fn recall_at(frames: &[FrameRecord], iou_threshold: f64) -> Result<f64> {
    let n = require_gts(frames)?;
    let tp: usize = frames
        .iter()
        .map(|f| match_frame(&f.detections, &f.ground_truths, iou_threshold).tp())
        .sum();
    Ok(tp as f64 / n as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct F1Point {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Precision/recall/F1 keeping detections with `score >= threshold`.
pub fn operating_point(frames: &[FrameRecord], iou_threshold: f64, threshold: f64) -> Result<F1Point> {
    let n_gt = require_gts(frames)?;
    let (mut tp, mut fp) = (0, 0);
    for f in frames {
        let kept: Vec<Detection> = f.detections.iter().filter(|d| d.score >= threshold).copied().collect();
        let m = match_frame(&kept, &f.ground_truths, iou_threshold);
        tp += m.tp();
        fp += m.fp();
    }
    let precision = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
    let recall = tp as f64 / n_gt as f64;
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(F1Point {
        threshold,
        precision,
        recall,
        f1,
    })
}

/// Best-F1 point over `grid`; ties go to the lowest threshold.
pub fn f1_sweep(frames: &[FrameRecord], iou_threshold: f64, grid: &[f64]) -> Result<F1Point> {
    require_gts(frames)?;
    let mut sorted = grid.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut best: Option<F1Point> = None;
    for t in sorted {
        let p = operating_point(frames, iou_threshold, t)?;
        if best.is_none_or(|b| p.f1 > b.f1) {
            best = Some(p);
        }
    }
    best.ok_or_else(|| Error::Config("empty confidence grid".into()))
}

/// `0.000, 0.005, ..., 1.000`.
pub fn default_confidence_grid() -> Vec<f64> {
    (0..=200).map(|k| k as f64 / 200.0).collect()
}

/// `0.30, 0.35, ..., 0.60`.
pub fn sensitivity_thresholds() -> Vec<f64> {
    (0..7).map(|k| (30 + 5 * k) as f64 / 100.0).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecallRow {
    pub iou: f64,
    pub recall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub map50: f64,
    pub map5095: f64,
    pub recall_table: Vec<RecallRow>,
    pub f1_point: F1Point,
}

pub fn compute_metrics(frames: &[FrameRecord]) -> Result<Metrics> {
    let recall_table = sensitivity_thresholds()
        .into_iter()
        .map(|t| Ok(RecallRow { iou: t, recall: recall_at(frames, t)? }))
        .collect::<Result<Vec<_>>>()?;
    Ok(Metrics {
        map50: average_precision(frames, 0.5)?,
        map5095: map_range(frames, &coco_thresholds())?,
        recall_table,
        f1_point: f1_sweep(frames, 0.5, &default_confidence_grid())?,
    })
}

/// One line of the ground-truth file.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthFrame {
    pub frame_id: u64,
    pub sequence_id: String,
    pub event_count: u64,
    pub boxes: Vec<BoundingBox>,
}

#[derive(Deserialize)]
struct RawGt {
    frame_id: u64,
    #[serde(default)]
    sequence_id: serde_json::Value,
    #[serde(default)]
    event_count: u64,
    boxes: Vec<[f64; 4]>,
}

pub fn parse_ground_truth(text: &str) -> Result<Vec<GroundTruthFrame>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawGt = serde_json::from_str(line).map_err(|e| Error::Parse {
            line: i + 1,
            msg: e.to_string(),
        })?;
        let sequence_id = match raw.sequence_id {
            serde_json::Value::Null => String::new(),
            serde_json::Value::String(s) => s,
            other => other.to_string(),
        };
        let mut boxes = Vec::with_capacity(raw.boxes.len());
        for b in raw.boxes {
            let bb = BoundingBox::from_array(b);
            if !(bb.x1 < bb.x2 && bb.y1 < bb.y2) || b.iter().any(|v| !v.is_finite()) {
                return Err(Error::Validation {
                    line: i + 1,
                    msg: format!("ground-truth box {b:?} is not well formed"),
                });
            }
            boxes.push(bb);
        }
        out.push(GroundTruthFrame {
            frame_id: raw.frame_id,
            sequence_id,
            event_count: raw.event_count,
            boxes,
        });
    }
    Ok(out)
}

pub fn read_ground_truth(path: &Path) -> Result<Vec<GroundTruthFrame>> {
    parse_ground_truth(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
}

pub fn format_ground_truth(frames: &[GroundTruthFrame]) -> String {
    let mut s = String::new();
    for f in frames {
        let v = serde_json::json!({
            "frame_id": f.frame_id,
            "sequence_id": f.sequence_id,
            "event_count": f.event_count,
            "boxes": f.boxes.iter().map(|b| b.to_array()).collect::<Vec<_>>(),
        });
        s.push_str(&v.to_string());
        s.push('\n');
    }
    s
}

/// Joins detections to ground truth by `frame_id`. Frames come in
/// ground-truth order; detection-only frames follow, in detection order.
pub fn join_frames(dets: &[FrameDetections], gts: &[GroundTruthFrame]) -> Result<Vec<FrameRecord>> {
    let mut by_id: BTreeMap<u64, &FrameDetections> = BTreeMap::new();
    for d in dets {
        if by_id.insert(d.frame_id, d).is_some() {
            return Err(Error::Config(format!("frame {} appears twice in detections", d.frame_id)));
        }
    }
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(gts.len());
    for g in gts {
        if !seen.insert(g.frame_id) {
            return Err(Error::Config(format!("frame {} appears twice in ground truth", g.frame_id)));
        }
        out.push(FrameRecord {
            frame_id: g.frame_id,
            sequence_id: g.sequence_id.clone(),
            event_count: g.event_count,
            detections: by_id.get(&g.frame_id).map(|d| d.detections.clone()).unwrap_or_default(),
            ground_truths: g.boxes.clone(),
        });
    }
    for d in dets.iter().filter(|d| !seen.contains(&d.frame_id)) {
        out.push(FrameRecord {
            frame_id: d.frame_id,
            sequence_id: String::new(),
            event_count: 0,
            detections: d.detections.clone(),
            ground_truths: Vec::new(),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn det(b: [f64; 4], score: f64) -> Detection {
        Detection {
            bbox: BoundingBox::from_array(b),
            score,
            class: 0,
        }
    }

    fn frame(dets: Vec<Detection>, gts: Vec<[f64; 4]>) -> FrameRecord {
        FrameRecord {
            frame_id: 0,
            sequence_id: "s".into(),
            event_count: 0,
            detections: dets,
            ground_truths: gts.into_iter().map(BoundingBox::from_array).collect(),
        }
    }

    #[test]
    fn matching_examples() {
        let g = [BoundingBox::new(0.0, 0.0, 10.0, 10.0)];
        let m = match_frame(&[det([0.0, 0.0, 10.0, 6.0], 0.9)], &g, 0.5);
        assert!(m.det_tp[0]);
        let m = match_frame(&[det([0.0, 0.0, 10.0, 9.0], 0.7), det([0.0, 0.0, 10.0, 10.0], 0.8)], &g, 0.5);
        assert_eq!(m.det_tp, [false, true]);
        let m = match_frame(&[det([0.0, 0.0, 10.0, 4.5], 0.9)], &g, 0.5);
        assert_eq!((m.tp(), m.fp(), m.fn_count()), (0, 1, 1));
        assert!((m.gt_best_iou[0] - 0.45).abs() < 1e-12);
    }

    #[test]
    fn ap_examples() {
        let perfect = frame(vec![det([0.0, 0.0, 1.0, 1.0], 0.9)], vec![[0.0, 0.0, 1.0, 1.0]]);
        assert_eq!(average_precision(&[perfect.clone()], 0.5).unwrap(), 1.0);
        assert_eq!(map_range(&[perfect], &coco_thresholds()).unwrap(), 1.0);
        let empty = frame(vec![], vec![[0.0, 0.0, 1.0, 1.0]]);
        assert_eq!(average_precision(&[empty], 0.5).unwrap(), 0.0);
        let no_gt = frame(vec![det([0.0, 0.0, 1.0, 1.0], 0.9)], vec![]);
        assert!(matches!(average_precision(&[no_gt], 0.5), Err(Error::Undefined(_))));
        // TP 0.9, FP 0.8, TP 0.7 over 2 GTs: P = 1 for r <= 0.5, 2/3 above
        let f = frame(
            vec![det([0.0, 0.0, 1.0, 1.0], 0.9), det([5.0, 5.0, 6.0, 6.0], 0.8), det([2.0, 2.0, 3.0, 3.0], 0.7)],
            vec![[0.0, 0.0, 1.0, 1.0], [2.0, 2.0, 3.0, 3.0]],
        );
        let want = (51.0 + 50.0 * 2.0 / 3.0) / 101.0;
        assert!((average_precision(&[f], 0.5).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn f1_sweep_prefers_lowest_threshold() {
        let f = frame(
            vec![det([0.0, 0.0, 1.0, 1.0], 0.9), det([5.0, 5.0, 6.0, 6.0], 0.2)],
            vec![[0.0, 0.0, 1.0, 1.0]],
        );
        let p = f1_sweep(&[f], 0.5, &[0.5, 0.3, 0.95]).unwrap();
        assert_eq!((p.threshold, p.f1), (0.3, 1.0));
        assert!(f1_sweep(&[], 0.5, &[0.5]).is_err());
    }

    #[test]
    fn ground_truth_lines() {
        let text = "{\"frame_id\":1,\"sequence_id\":7,\"event_count\":12,\"boxes\":[[0,0,2,2]]}\n\
                    {\"frame_id\":2,\"sequence_id\":\"a\",\"boxes\":[]}\n";
        let g = parse_ground_truth(text).unwrap();
        assert_eq!(g[0].sequence_id, "7");
        assert_eq!(g[1].event_count, 0);
        assert_eq!(parse_ground_truth(&format_ground_truth(&g)).unwrap(), g);
        assert!(matches!(
            parse_ground_truth("{\"frame_id\":1,\"boxes\":[[2,0,1,2]]}"),
            Err(Error::Validation { line: 1, .. })
        ));
    }
}
