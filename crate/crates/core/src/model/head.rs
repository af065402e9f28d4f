//! Pointwise detection head over temporally squeezed positions.

use super::config::HeadConfig;
use super::layers::{Collector, GroupNorm, Linear};
use crate::error::{Error, Result};
use crate::tensor::{SparseTensor3D, VoxelCoord};

#[derive(Debug, Clone, PartialEq)]
pub struct HeadOutputs {
    pub stride: usize,
    /// `(batch, 0, y, x)` at the head stride.
    pub positions: Vec<VoxelCoord>,
    pub cls_logit: Vec<f32>,
    /// Log-distances `(l, t, r, b)`.
    pub box_raw: Vec<[f32; 4]>,
    pub ctr_logit: Vec<f32>,
}

impl HeadOutputs {
    pub fn empty(stride: usize) -> Self {
        Self {
            stride,
            positions: Vec::new(),
            cls_logit: Vec::new(),
            box_raw: Vec::new(),
            ctr_logit: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Head {
    pub stride: usize,
    pub trunk: Vec<(Linear, GroupNorm)>,
    pub cls: Linear,
    pub bbox: Linear,
    pub ctr: Linear,
}

/// Logit whose sigmoid equals `prior`.
pub fn prior_logit(prior: f64) -> f32 {
    (-((1.0 - prior) / prior).ln()) as f32
}

impl Head {
    pub fn new(in_dim: usize, cfg: &HeadConfig) -> Self {
        let mut trunk = Vec::with_capacity(cfg.depth);
        let mut d = in_dim;
        for _ in 0..cfg.depth {
            trunk.push((Linear::zeros(d, cfg.hidden), GroupNorm::new(cfg.hidden, cfg.groups)));
            d = cfg.hidden;
        }
        Self {
            stride: cfg.stride,
            trunk,
            cls: Linear::zeros(d, 1),
            bbox: Linear::zeros(d, 4),
            ctr: Linear::zeros(d, 1),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.trunk.first().map_or(self.cls.in_dim, |(l, _)| l.in_dim)
    }

    /// Trunk activations for a row-major `n x in_dim` feature matrix.
    pub fn trunk_forward(&self, x: &[f32]) -> Vec<f32> {
        let mut h = x.to_vec();
        for (lin, gn) in &self.trunk {
            h = lin.forward_rows(&h);
            gn.forward_rows(&mut h);
            h.iter_mut().for_each(|v| *v = v.max(0.0));
        }
        h
    }

    pub fn forward(&self, squeezed: &SparseTensor3D) -> Result<HeadOutputs> {
        if squeezed.shape().t != 1 {
            return Err(Error::Shape("head expects a temporally squeezed tensor".into()));
        }
        if squeezed.channels() != self.in_dim() {
            return Err(Error::Shape(format!(
                "head input has {} channels, expects {}",
                squeezed.channels(),
                self.in_dim()
            )));
        }
        let h = self.trunk_forward(squeezed.features());
        let cls_logit = self.cls.forward_rows(&h);
        let ctr_logit = self.ctr.forward_rows(&h);
        let box_raw = self
            .bbox
            .forward_rows(&h)
            .chunks_exact(4)
            .map(|c| [c[0], c[1], c[2], c[3]])
            .collect();
        Ok(HeadOutputs {
            stride: self.stride,
            positions: squeezed.coords().to_vec(),
            cls_logit,
            box_raw,
            ctr_logit,
        })
    }

    pub(crate) fn collect<'a>(&'a mut self, c: &mut Collector<'a>) {
        for (i, (lin, gn)) in self.trunk.iter_mut().enumerate() {
            c.linear(&format!("head.trunk{}", i + 1), lin);
            c.group_norm(&format!("head.trunk{}_norm", i + 1), gn);
        }
        c.linear("head.cls", &mut self.cls);
        c.linear("head.box", &mut self.bbox);
        c.linear("head.ctr", &mut self.ctr);
    }
}
