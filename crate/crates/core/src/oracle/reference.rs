use crate::boxes::{iou, BoundingBox, Detection};
use crate::eval::FrameRecord;
use crate::error::{Error, Result};

/// Exhaustive NMS: repeatedly take the best remaining detection (earliest on
/// equal scores), then strike everything overlapping it above the threshold.
pub fn nms_bruteforce(dets: &[Detection], iou_threshold: f64, max_out: usize) -> Vec<Detection> {
    let mut alive = vec![true; dets.len()];
    let mut kept = Vec::new();
    while kept.len() < max_out {
        let mut best: Option<usize> = None;
        for i in 0..dets.len() {
            if alive[i] && best.is_none_or(|b| dets[i].score > dets[b].score) {
                best = Some(i);
            }
        }
        let Some(b) = best else { break };
        kept.push(dets[b]);
        for i in 0..dets.len() {
            if alive[i] && (i == b || iou(&dets[i].bbox, &dets[b].bbox) > iou_threshold) {
                alive[i] = false;
            }
        }
    }
    kept
}

/// TP flags per detection, by an independent greedy matcher.
fn tp_flags(dets: &[Detection], gts: &[BoundingBox], thr: f64) -> Vec<bool> {
    let mut taken = vec![false; gts.len()];
    let mut flags = vec![false; dets.len()];
    let mut done = vec![false; dets.len()];
    for _ in 0..dets.len() {
        // highest-scoring unprocessed detection, earliest on ties
        let mut d = usize::MAX;
        for i in 0..dets.len() {
            if !done[i] && (d == usize::MAX || dets[i].score > dets[d].score) {
                d = i;
            }
        }
        done[d] = true;
        let mut pick: Option<usize> = None;
        for g in 0..gts.len() {
            let o = iou(&dets[d].bbox, &gts[g]);
            if !taken[g] && o >= thr && pick.is_none_or(|p| o > iou(&dets[d].bbox, &gts[p])) {
                pick = Some(g);
            }
        }
        if let Some(g) = pick {
            taken[g] = true;
            flags[d] = true;
        }
    }
    flags
}

/// AP by enumerating every distinct score as a cut-off: at each cut-off `s`
/// the precision/recall of detections scoring `>= s`, then the 101-point
/// interpolation `max { P(s) : R(s) >= k/100 }` decided in exact integer
/// arithmetic. Matches the pooled sweep whenever scores are distinct.
pub fn ap_bruteforce(frames: &[FrameRecord], iou_threshold: f64) -> Result<f64> {
    let n_gt: usize = frames.iter().map(|f| f.ground_truths.len()).sum();
    if n_gt == 0 {
        return Err(Error::Undefined("no ground truth".into()));
    }
    let mut pool: Vec<(f64, bool)> = Vec::new();
    for f in frames {
        let flags = tp_flags(&f.detections, &f.ground_truths, iou_threshold);
        pool.extend(f.detections.iter().zip(flags).map(|(d, t)| (d.score, t)));
    }
    let mut cuts: Vec<f64> = pool.iter().map(|p| p.0).collect();
    cuts.sort_by(|a, b| b.total_cmp(a));
    cuts.dedup();
    // (tp, kept) at each cut-off
    let points: Vec<(usize, usize)> = cuts
        .iter()
        .map(|&s| {
            let kept = pool.iter().filter(|p| p.0 >= s).count();
            let tp = pool.iter().filter(|p| p.0 >= s && p.1).count();
            (tp, kept)
        })
        .collect();
    let mut total = 0.0;
    for k in 0..=100usize {
        let best = points
            .iter()
            .filter(|&&(tp, _)| tp * 100 >= k * n_gt)
            .map(|&(tp, kept)| tp as f64 / kept as f64)
            .fold(None, |m: Option<f64>, p| Some(m.map_or(p, |m| m.max(p))));
        total += best.unwrap_or(0.0);
    }
    Ok(total / 101.0)
}
