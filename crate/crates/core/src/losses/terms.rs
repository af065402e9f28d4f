use serde::{Deserialize, Serialize};

use crate::boxes::BoundingBox;
use crate::error::{Error, Result};
use crate::model::HeadOutputs;
use crate::tensor::VoxelCoord;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub cls: f64,
    pub reg: f64,
    pub ctr: f64,
    pub alpha: f64,
    pub gamma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            cls: 1.0,
            reg: 2.0,
            ctr: 1.0,
            alpha: 0.25,
            gamma: 2.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.cls, self.reg, self.ctr, self.alpha, self.gamma];
        if all.iter().any(|v| !(v.is_finite() && *v >= 0.0)) || self.alpha > 1.0 {
            return Err(Error::Config(format!("invalid loss weights {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssignmentResult {
    pub positive: Vec<bool>,
    pub gt_index: Vec<Option<usize>>,
    /// `(l, t, r, b)`; zero for negatives.
    pub ltrb: Vec<[f64; 4]>,
    pub centerness: Vec<f64>,
    /// Matched GT box per position, for the regression term.
    pub gt_boxes: Vec<Option<BoundingBox>>,
}

impl AssignmentResult {
    pub fn num_positives(&self) -> usize {
        self.positive.iter().filter(|&&p| p).count()
    }
}

fn position_center(p: &VoxelCoord, stride: usize) -> (f64, f64) {
    let s = stride as f64;
    (p.x as f64 * s + s / 2.0, p.y as f64 * s + s / 2.0)
}

/// A position is positive when its center lies strictly inside a GT box; with
/// several candidates the smallest-area box wins (earliest on equal area).
pub fn assign_targets(positions: &[VoxelCoord], stride: usize, gts: &[BoundingBox]) -> AssignmentResult {
    let n = positions.len();
    let mut r = AssignmentResult {
        positive: vec![false; n],
        gt_index: vec![None; n],
        ltrb: vec![[0.0; 4]; n],
        centerness: vec![0.0; n],
        gt_boxes: vec![None; n],
    };
    for (i, p) in positions.iter().enumerate() {
        let (cx, cy) = position_center(p, stride);
        let best = gts
            .iter()
            .enumerate()
            .filter(|(_, g)| g.contains_point(cx, cy))
            .min_by(|a, b| a.1.area().total_cmp(&b.1.area()));
        if let Some((k, g)) = best {
            let (l, t, rr, b) = (cx - g.x1, cy - g.y1, g.x2 - cx, g.y2 - cy);
            r.positive[i] = true;
            r.gt_index[i] = Some(k);
            r.ltrb[i] = [l, t, rr, b];
            r.centerness[i] = ((l.min(rr) / l.max(rr)) * (t.min(b) / t.max(b))).sqrt();
            r.gt_boxes[i] = Some(*g);
        }
    }
    r
}

/// `log(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Binary focal loss summed over all positions and divided by
/// `max(1, #positives)`; returns the loss and its gradient w.r.t. the logits.
pub fn focal_loss(logits: &[f64], positive: &[bool], alpha: f64, gamma: f64) -> (f64, Vec<f64>) {
    let npos = positive.iter().filter(|&&p| p).count().max(1) as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(logits.len());
    for (&x, &pos) in logits.iter().zip(positive) {
        let p = sigmoid(x);
        let log_p = -softplus(-x);
        let log_q = -softplus(x);
        let (l, g) = if pos {
            let m = (1.0 - p).powf(gamma);
            (-alpha * m * log_p, alpha * m * (gamma * p * log_p - (1.0 - p)))
        } else {
            let m = p.powf(gamma);
            (
                -(1.0 - alpha) * m * log_q,
                (1.0 - alpha) * m * (p - gamma * (1.0 - p) * log_q),
            )
        };
        loss += l;
        grad.push(g / npos);
    }
    (loss / npos, grad)
}

/// `1 - GIoU(pred, target)` and its gradient w.r.t. `pred`'s corners. A
/// zero-area prediction has IoU 0 but keeps the enclosing-box penalty.
pub fn giou_pair(p: &[f64; 4], g: &[f64; 4]) -> (f64, [f64; 4]) {
    let (pw, ph) = ((p[2] - p[0]).max(0.0), (p[3] - p[1]).max(0.0));
    let ap = pw * ph;
    let ag = (g[2] - g[0]) * (g[3] - g[1]);
    let iw_raw = p[2].min(g[2]) - p[0].max(g[0]);
    let ih_raw = p[3].min(g[3]) - p[1].max(g[1]);
    let (iw, ih) = (iw_raw.max(0.0), ih_raw.max(0.0));
    let inter = iw * ih;
    let union = ap + ag - inter;
    let cw = p[2].max(g[2]) - p[0].min(g[0]);
    let ch = p[3].max(g[3]) - p[1].min(g[1]);
    let c = cw * ch;
    if union <= 0.0 || c <= 0.0 {
        return (2.0, [0.0; 4]);
    }
    let iou = inter / union;
    let loss = 2.0 - iou - union / c;
    let d_inter = -(union + inter) / (union * union) + 1.0 / c;
    let d_ap = inter / (union * union) - 1.0 / c;
    let d_c = union / (c * c);
    let mut grad = [0.0; 4];
    // intersection
    if iw_raw > 0.0 && ih_raw > 0.0 {
        if p[0] > g[0] {
            grad[0] -= d_inter * ih;
        }
        if p[2] < g[2] {
            grad[2] += d_inter * ih;
        }
        if p[1] > g[1] {
            grad[1] -= d_inter * iw;
        }
        if p[3] < g[3] {
            grad[3] += d_inter * iw;
        }
    }
    // predicted area
    grad[0] -= d_ap * ph;
    grad[2] += d_ap * ph;
    grad[1] -= d_ap * pw;
    grad[3] += d_ap * pw;
    // enclosing box
    if p[0] < g[0] {
        grad[0] -= d_c * ch;
    }
    if p[2] > g[2] {
        grad[2] += d_c * ch;
    }
    if p[1] < g[1] {
        grad[1] -= d_c * cw;
    }
    if p[3] > g[3] {
        grad[3] += d_c * cw;
    }
    (loss, grad)
}

/// Mean `1 - GIoU` over box pairs and per-pair corner gradients of the mean.
pub fn giou_loss(pred: &[[f64; 4]], target: &[[f64; 4]]) -> (f64, Vec<[f64; 4]>) {
    if pred.is_empty() {
        return (0.0, Vec::new());
    }
    let n = pred.len() as f64;
    let mut loss = 0.0;
    let grads = pred
        .iter()
        .zip(target)
        .map(|(p, g)| {
            let (l, d) = giou_pair(p, g);
            loss += l;
            d.map(|v| v / n)
        })
        .collect();
    (loss / n, grads)
}

/// BCE on centerness, averaged over positives; negatives get zero gradient.
pub fn centerness_bce(logits: &[f64], targets: &[f64], positive: &[bool]) -> (f64, Vec<f64>) {
    let npos = positive.iter().filter(|&&p| p).count();
    let mut grad = vec![0.0; logits.len()];
    if npos == 0 {
        return (0.0, grad);
    }
    let n = npos as f64;
    let mut loss = 0.0;
    for i in 0..logits.len() {
        if positive[i] {
            let (x, t) = (logits[i], targets[i]);
            loss += softplus(x) - t * x;
            grad[i] = (sigmoid(x) - t) / n;
        }
    }
    (loss / n, grad)
}

/// Weighted loss terms and gradients w.r.t. every head output.
#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    /// Weighted components; `total = cls + reg + ctr`.
    pub cls: f64,
    pub reg: f64,
    pub ctr: f64,
    pub grad_cls: Vec<f64>,
    pub grad_box: Vec<[f64; 4]>,
    pub grad_ctr: Vec<f64>,
}

/// `λ_cls L_cls + λ_reg L_reg + λ_ctr L_ctr` on 64-bit head outputs. The
/// regression gradient is chained through the exponential LTRB decoding.
pub fn total_loss_f64(
    positions: &[VoxelCoord],
    stride: usize,
    cls: &[f64],
    box_raw: &[[f64; 4]],
    ctr: &[f64],
    asg: &AssignmentResult,
    w: &LossWeights,
) -> LossBreakdown {
    let n = positions.len();
    let (l_cls, g_cls) = focal_loss(cls, &asg.positive, w.alpha, w.gamma);
    let pos: Vec<usize> = (0..n).filter(|&i| asg.positive[i]).collect();
    let mut pred = Vec::with_capacity(pos.len());
    let mut tgt = Vec::with_capacity(pos.len());
    let mut dist = Vec::with_capacity(pos.len());
    for &i in &pos {
        let (cx, cy) = position_center(&positions[i], stride);
        let e = box_raw[i].map(f64::exp);
        pred.push([cx - e[0], cy - e[1], cx + e[2], cy + e[3]]);
        tgt.push(asg.gt_boxes[i].expect("positive has a box").to_array());
        dist.push(e);
    }
    let (l_reg, g_corner) = giou_loss(&pred, &tgt);
    let mut grad_box = vec![[0.0; 4]; n];
    for (k, &i) in pos.iter().enumerate() {
        let (g, e) = (g_corner[k], dist[k]);
        grad_box[i] = [-g[0] * e[0], -g[1] * e[1], g[2] * e[2], g[3] * e[3]].map(|v| v * w.reg);
    }
    let (l_ctr, g_ctr) = centerness_bce(ctr, &asg.centerness, &asg.positive);
    let (cls_w, reg_w, ctr_w) = (w.cls * l_cls, w.reg * l_reg, w.ctr * l_ctr);
    LossBreakdown {
        total: cls_w + reg_w + ctr_w,
        cls: cls_w,
        reg: reg_w,
        ctr: ctr_w,
        grad_cls: g_cls.into_iter().map(|g| g * w.cls).collect(),
        grad_box,
        grad_ctr: g_ctr.into_iter().map(|g| g * w.ctr).collect(),
    }
}

pub fn total_loss(out: &HeadOutputs, asg: &AssignmentResult, w: &LossWeights) -> LossBreakdown {
    let cls: Vec<f64> = out.cls_logit.iter().map(|&v| v as f64).collect();
    let ctr: Vec<f64> = out.ctr_logit.iter().map(|&v| v as f64).collect();
    let bx: Vec<[f64; 4]> = out.box_raw.iter().map(|b| b.map(|v| v as f64)).collect();
    total_loss_f64(&out.positions, out.stride, &cls, &bx, &ctr, asg, w)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn focal_closed_form() {
        let (l, _) = focal_loss(&[0.0], &[true], 0.25, 2.0);
        assert!((l - 0.25 * 0.25 * std::f64::consts::LN_2).abs() < 1e-12);
        let (l, _) = focal_loss(&[40.0], &[true], 0.25, 2.0);
        assert!(l < 1e-30);
        // gamma 0, alpha 1 is plain BCE on positives, zero on negatives
        let (l, g) = focal_loss(&[0.3, -1.2], &[true, false], 1.0, 0.0);
        assert!((l - softplus(-0.3)).abs() < 1e-12);
        assert!((g[0] - (sigmoid(0.3) - 1.0)).abs() < 1e-12);
        assert_eq!(g[1], 0.0);
    }

    #[test]
    fn giou_examples() {
        assert!(giou_pair(&[0.0, 0.0, 2.0, 2.0], &[0.0, 0.0, 2.0, 2.0]).0.abs() < 1e-15);
        let (l, _) = giou_pair(&[0.0, 0.0, 1.0, 1.0], &[2.0, 2.0, 3.0, 3.0]);
        assert!((l - 16.0 / 9.0).abs() < 1e-12);
        let (l, _) = giou_pair(&[0.0, 0.0, 2.0, 2.0], &[1.0, 1.0, 3.0, 3.0]);
        assert!((l - (1.0 + 5.0 / 63.0)).abs() < 1e-12);
        let (l, _) = giou_pair(&[1.0, 1.0, 1.0, 1.0], &[0.0, 0.0, 2.0, 2.0]);
        assert!((l - 2.0 + 4.0 / 4.0).abs() < 1e-12, "{l}");
    }

    #[test]
    fn assignment_examples() {
        let gt = [BoundingBox::new(0.0, 0.0, 40.0, 20.0)];
        // stride 4: position (y=2, x=2) has center (10, 10)
        let r = assign_targets(&[VoxelCoord::new(0, 0, 2, 2), VoxelCoord::new(0, 0, 9, 9)], 4, &gt);
        assert_eq!(r.positive, [true, false]);
        assert_eq!(r.ltrb[0], [10.0, 10.0, 30.0, 10.0]);
        assert!((r.centerness[0] - (1.0f64 / 3.0).sqrt()).abs() < 1e-12);
        let nested = [BoundingBox::new(0.0, 0.0, 40.0, 40.0), BoundingBox::new(6.0, 6.0, 14.0, 14.0)];
        let r = assign_targets(&[VoxelCoord::new(0, 0, 2, 2)], 4, &nested);
        assert_eq!(r.gt_index[0], Some(1));
        assert_eq!(r.centerness[0], 1.0);
    }

    #[test]
    fn degenerate_weights_and_no_positives() {
        let asg = assign_targets(&[VoxelCoord::new(0, 0, 0, 0)], 4, &[]);
        let w = LossWeights {
            cls: 0.0,
            reg: 0.0,
            ctr: 0.0,
            ..LossWeights::default()
        };
        let b = total_loss_f64(&asg_pos(), 4, &[0.5], &[[0.0; 4]], &[0.1], &asg, &w);
        assert_eq!(b.total, 0.0);
        let (l, g) = centerness_bce(&[1.0], &[0.5], &[false]);
        assert_eq!((l, g), (0.0, vec![0.0]));
    }

    fn asg_pos() -> Vec<VoxelCoord> {
        vec![VoxelCoord::new(0, 0, 0, 0)]
    }
}
