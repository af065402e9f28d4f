//! 64-bit copy of the head with hand-written backpropagation, used to fit the
//! head on fixed features by plain gradient descent.

use std::fmt::Write as _;

use serde::Serialize;

use super::terms::{total_loss_f64, AssignmentResult, LossBreakdown, LossWeights};
use crate::error::{Error, Result};
use crate::model::{GroupNorm, Head, Linear};
use crate::tensor::VoxelCoord;

#[derive(Debug, Clone, PartialEq)]
pub struct Dense64 {
    pub in_dim: usize,
    pub out_dim: usize,
    /// `in x out` row-major.
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Dense64 {
    fn from_linear(l: &Linear) -> Self {
        Self {
            in_dim: l.in_dim,
            out_dim: l.out_dim,
            w: l.weight.iter().map(|&v| v as f64).collect(),
            b: l.bias.iter().map(|&v| v as f64).collect(),
        }
    }

    fn to_linear(&self) -> Linear {
        Linear {
            in_dim: self.in_dim,
            out_dim: self.out_dim,
            weight: self.w.iter().map(|&v| v as f32).collect(),
            bias: self.b.iter().map(|&v| v as f32).collect(),
        }
    }

    fn zeros_like(&self) -> Self {
        Self {
            w: vec![0.0; self.w.len()],
            b: vec![0.0; self.b.len()],
            ..*self
        }
    }

    fn forward(&self, x: &[f64]) -> Vec<f64> {
        let n = x.len() / self.in_dim;
        let mut y = Vec::with_capacity(n * self.out_dim);
        for row in x.chunks_exact(self.in_dim) {
            let start = y.len();
            y.extend_from_slice(&self.b);
            let out = &mut y[start..];
            for (i, &xi) in row.iter().enumerate() {
                if xi != 0.0 {
                    let wr = &self.w[i * self.out_dim..(i + 1) * self.out_dim];
                    out.iter_mut().zip(wr).for_each(|(o, w)| *o += xi * w);
                }
            }
        }
        y
    }

    /// Accumulates parameter gradients into `g`; returns the input gradient.
    fn backward(&self, x: &[f64], dy: &[f64], g: &mut Self) -> Vec<f64> {
        let (di, d_o) = (self.in_dim, self.out_dim);
        let mut dx = vec![0.0; x.len()];
        for ((xr, dyr), dxr) in x.chunks_exact(di).zip(dy.chunks_exact(d_o)).zip(dx.chunks_exact_mut(di)) {
            g.b.iter_mut().zip(dyr).for_each(|(b, d)| *b += d);
            for i in 0..di {
                let wr = &self.w[i * d_o..(i + 1) * d_o];
                let gr = &mut g.w[i * d_o..(i + 1) * d_o];
                let mut acc = 0.0;
                for o in 0..d_o {
                    gr[o] += xr[i] * dyr[o];
                    acc += wr[o] * dyr[o];
                }
                dxr[i] = acc;
            }
        }
        dx
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Norm64 {
    pub groups: usize,
    pub gain: Vec<f64>,
    pub bias: Vec<f64>,
}

struct NormCache {
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
}

impl Norm64 {
    fn forward(&self, x: &[f64]) -> (Vec<f64>, NormCache) {
        let c = self.gain.len();
        let m = c / self.groups;
        let eps = GroupNorm::EPS as f64;
        let mut xhat = vec![0.0; x.len()];
        let mut inv_std = Vec::with_capacity(x.len() / m);
        for (xg, hg) in x.chunks_exact(m).zip(xhat.chunks_exact_mut(m)) {
            let mean = xg.iter().sum::<f64>() / m as f64;
            let var = xg.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m as f64;
            let is = 1.0 / (var + eps).sqrt();
            hg.iter_mut().zip(xg).for_each(|(h, v)| *h = (v - mean) * is);
            inv_std.push(is);
        }
        let y = xhat
            .iter()
            .enumerate()
            .map(|(i, h)| h * self.gain[i % c] + self.bias[i % c])
            .collect();
        (y, NormCache { xhat, inv_std })
    }

    fn backward(&self, cache: &NormCache, dy: &[f64], g: &mut Self) -> Vec<f64> {
        let c = self.gain.len();
        let m = c / self.groups;
        let mut dx = vec![0.0; dy.len()];
        for (k, ((dyg, hg), dxg)) in dy
            .chunks_exact(m)
            .zip(cache.xhat.chunks_exact(m))
            .zip(dx.chunks_exact_mut(m))
            .enumerate()
        {
            let base = (k * m) % c;
            let mut dh = vec![0.0; m];
            for j in 0..m {
                g.gain[base + j] += dyg[j] * hg[j];
                g.bias[base + j] += dyg[j];
                dh[j] = dyg[j] * self.gain[base + j];
            }
            let mean_dh = dh.iter().sum::<f64>() / m as f64;
            let mean_dh_h = dh.iter().zip(hg).map(|(a, b)| a * b).sum::<f64>() / m as f64;
            let is = cache.inv_std[k];
            for j in 0..m {
                dxg[j] = is * (dh[j] - mean_dh - hg[j] * mean_dh_h);
            }
        }
        dx
    }

    fn zeros_like(&self) -> Self {
        Self {
            groups: self.groups,
            gain: vec![0.0; self.gain.len()],
            bias: vec![0.0; self.bias.len()],
        }
    }
}

/// Head parameters in 64-bit precision.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams64 {
    pub stride: usize,
    pub trunk: Vec<(Dense64, Norm64)>,
    pub cls: Dense64,
    pub bbox: Dense64,
    pub ctr: Dense64,
}

/// Head outputs in 64-bit precision.
pub struct Outputs64 {
    pub cls: Vec<f64>,
    pub bbox: Vec<[f64; 4]>,
    pub ctr: Vec<f64>,
}

struct Tape {
    inputs: Vec<Vec<f64>>,
    norms: Vec<NormCache>,
    pre_relu: Vec<Vec<f64>>,
    last: Vec<f64>,
}

impl HeadParams64 {
    pub fn from_head(h: &Head) -> Self {
        Self {
            stride: h.stride,
            trunk: h
                .trunk
                .iter()
                .map(|(l, n)| {
                    (
                        Dense64::from_linear(l),
                        Norm64 {
                            groups: n.groups,
                            gain: n.gain.iter().map(|&v| v as f64).collect(),
                            bias: n.bias.iter().map(|&v| v as f64).collect(),
                        },
                    )
                })
                .collect(),
            cls: Dense64::from_linear(&h.cls),
            bbox: Dense64::from_linear(&h.bbox),
            ctr: Dense64::from_linear(&h.ctr),
        }
    }

    pub fn to_head(&self) -> Head {
        Head {
            stride: self.stride,
            trunk: self
                .trunk
                .iter()
                .map(|(l, n)| {
                    (
                        l.to_linear(),
                        GroupNorm {
                            groups: n.groups,
                            gain: n.gain.iter().map(|&v| v as f32).collect(),
                            bias: n.bias.iter().map(|&v| v as f32).collect(),
                        },
                    )
                })
                .collect(),
            cls: self.cls.to_linear(),
            bbox: self.bbox.to_linear(),
            ctr: self.ctr.to_linear(),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.trunk.first().map_or(self.cls.in_dim, |(l, _)| l.in_dim)
    }

    fn zeros_like(&self) -> Self {
        Self {
            stride: self.stride,
            trunk: self.trunk.iter().map(|(l, n)| (l.zeros_like(), n.zeros_like())).collect(),
            cls: self.cls.zeros_like(),
            bbox: self.bbox.zeros_like(),
            ctr: self.ctr.zeros_like(),
        }
    }

    /// Every parameter slice, in a fixed order.
    pub fn slices_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut v = Vec::new();
        for (l, n) in &mut self.trunk {
            v.extend([&mut l.w, &mut l.b, &mut n.gain, &mut n.bias]);
        }
        for d in [&mut self.cls, &mut self.bbox, &mut self.ctr] {
            v.extend([&mut d.w, &mut d.b]);
        }
        v
    }

    fn run(&self, x: &[f64]) -> (Outputs64, Tape) {
        let mut tape = Tape {
            inputs: Vec::new(),
            norms: Vec::new(),
            pre_relu: Vec::new(),
            last: Vec::new(),
        };
        let mut h = x.to_vec();
        for (lin, norm) in &self.trunk {
            let z = lin.forward(&h);
            let (y, cache) = norm.forward(&z);
            tape.inputs.push(h);
            tape.norms.push(cache);
            h = y.iter().map(|v| v.max(0.0)).collect();
            tape.pre_relu.push(y);
        }
        let out = Outputs64 {
            cls: self.cls.forward(&h),
            bbox: self.bbox.forward(&h).chunks_exact(4).map(|c| [c[0], c[1], c[2], c[3]]).collect(),
            ctr: self.ctr.forward(&h),
        };
        tape.last = h;
        (out, tape)
    }

    pub fn forward(&self, features: &[f64]) -> Outputs64 {
        self.run(features).0
    }

    /// Loss and parameter gradients for a row-major `n x in_dim` feature
    /// matrix aligned with `positions`.
    pub fn loss_and_grad(
        &self,
        features: &[f64],
        positions: &[VoxelCoord],
        asg: &AssignmentResult,
        w: &LossWeights,
    ) -> (LossBreakdown, Self) {
        let (out, tape) = self.run(features);
        let loss = total_loss_f64(positions, self.stride, &out.cls, &out.bbox, &out.ctr, asg, w);
        let mut g = self.zeros_like();
        let flat_box: Vec<f64> = loss.grad_box.iter().flatten().copied().collect();
        let mut dh = self.cls.backward(&tape.last, &loss.grad_cls, &mut g.cls);
        let d2 = self.bbox.backward(&tape.last, &flat_box, &mut g.bbox);
        let d3 = self.ctr.backward(&tape.last, &loss.grad_ctr, &mut g.ctr);
        dh.iter_mut().zip(d2.iter().zip(&d3)).for_each(|(a, (b, c))| *a += b + c);
        for k in (0..self.trunk.len()).rev() {
            let (lin, norm) = &self.trunk[k];
            let dy: Vec<f64> = dh.iter().zip(&tape.pre_relu[k]).map(|(d, y)| if *y > 0.0 { *d } else { 0.0 }).collect();
            let (gl, gn) = &mut g.trunk[k];
            let dz = norm.backward(&tape.norms[k], &dy, gn);
            dh = lin.backward(&tape.inputs[k], &dz, gl);
        }
        (loss, g)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossRecord {
    pub step: usize,
    pub total: f64,
    pub cls: f64,
    pub reg: f64,
    pub ctr: f64,
}

#[derive(Debug, Clone)]
pub struct DemoFit {
    /// Loss before each update, plus the loss after the last one.
    pub trace: Vec<LossRecord>,
    pub params: HeadParams64,
}

impl DemoFit {
    pub fn initial(&self) -> f64 {
        self.trace[0].total
    }

    pub fn last(&self) -> f64 {
        self.trace[self.trace.len() - 1].total
    }
}

/// Plain gradient descent on the head parameters only; the features stand in
/// for a frozen backbone.
pub fn fit_head_demo(
    head: &Head,
    features: &[f32],
    positions: &[VoxelCoord],
    gts: &[crate::boxes::BoundingBox],
    steps: usize,
    lr: f64,
    weights: &LossWeights,
) -> Result<DemoFit> {
    weights.validate()?;
    let mut params = HeadParams64::from_head(head);
    let d = params.in_dim();
    if features.len() != positions.len() * d {
        return Err(Error::Shape(format!(
            "{} feature values for {} positions of width {d}",
            features.len(),
            positions.len()
        )));
    }
    if !(lr.is_finite() && lr >= 0.0) {
        return Err(Error::Config(format!("learning rate {lr} must be finite and >= 0")));
    }
    let x: Vec<f64> = features.iter().map(|&v| v as f64).collect();
    let asg = super::assign_targets(positions, params.stride, gts);
    let mut trace = Vec::with_capacity(steps + 1);
    for step in 0..=steps {
        let (loss, mut grad) = params.loss_and_grad(&x, positions, &asg, weights);
        if !loss.total.is_finite() {
            return Err(Error::Numerical(format!("loss diverged at step {step}")));
        }
        trace.push(LossRecord {
            step,
            total: loss.total,
            cls: loss.cls,
            reg: loss.reg,
            ctr: loss.ctr,
        });
        if step == steps {
            break;
        }
        for (p, g) in params.slices_mut().into_iter().zip(grad.slices_mut()) {
            p.iter_mut().zip(g.iter()).for_each(|(p, g)| *p -= lr * g);
        }
    }
    Ok(DemoFit { trace, params })
}

/// CSV with header `step,total,cls,reg,ctr`.
pub fn format_loss_trace(trace: &[LossRecord]) -> String {
    let mut s = String::from("step,total,cls,reg,ctr\n");
    for r in trace {
        writeln!(s, "{},{:.9},{:.9},{:.9},{:.9}", r.step, r.total, r.cls, r.reg, r.ctr).unwrap();
    }
    s
}
