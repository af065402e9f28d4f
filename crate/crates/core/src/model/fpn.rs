//! Sparse top-down feature pyramid fused to the finest backbone level.

use super::config::{BackboneConfig, FpnConfig};
use super::layers::{Collector, LayerNorm};
use super::Trace;
use crate::error::{Error, Result};
use crate::ops::{
    sparse_add_union, sparse_layernorm, subm_conv3d, transpose_conv3d_to, ConvParams, LAYERNORM_EPS,
};
use crate::tensor::SparseTensor3D;

#[derive(Debug, Clone, PartialEq)]
pub struct Fpn {
    /// Finest first.
    pub laterals: Vec<(ConvParams, LayerNorm)>,
    /// `upsample[i]` lifts level `i + 1` onto level `i`.
    pub upsample: Vec<ConvParams>,
    pub refine: ConvParams,
}

impl Fpn {
    pub fn new(backbone: &BackboneConfig, cfg: &FpnConfig) -> Self {
        let widths = backbone.stage_channels();
        let d = cfg.dim;
        let laterals = widths[widths.len() - 3..]
            .iter()
            .map(|&c| (ConvParams::zeros([1, 1, 1], [1, 1, 1], c, d), LayerNorm::new(d)))
            .collect();
        let upsample = (0..2)
            .map(|_| ConvParams::zeros(cfg.upsample_kernel, cfg.upsample_stride, d, d))
            .collect();
        Self {
            laterals,
            upsample,
            refine: ConvParams::zeros(cfg.refine_kernel, [1, 1, 1], d, d),
        }
    }

    pub fn forward(&self, levels: &[SparseTensor3D], mut trace: Option<&mut Trace>) -> Result<SparseTensor3D> {
        if levels.len() != self.laterals.len() {
            return Err(Error::Shape(format!("FPN expects {} levels, got {}", self.laterals.len(), levels.len())));
        }
        let projected = levels
            .iter()
            .zip(&self.laterals)
            .map(|(c, (conv, ln))| sparse_layernorm(&subm_conv3d(c, conv)?, &ln.gain, &ln.bias, LAYERNORM_EPS))
            .collect::<Result<Vec<_>>>()?;
        let mut fused = projected[projected.len() - 1].clone();
        for i in (0..projected.len() - 1).rev() {
            let target = &projected[i];
            let up = transpose_conv3d_to(&fused, &self.upsample[i], target.shape())?;
            fused = sparse_add_union(target, &up)?;
            if let Some(t) = trace.as_deref_mut() {
                t.record(&format!("fpn.p{}", i + 2), &fused);
            }
        }
        let out = subm_conv3d(&fused, &self.refine)?;
        if let Some(t) = trace {
            t.record("fpn.refine", &out);
        }
        Ok(out)
    }

    pub(crate) fn collect<'a>(&'a mut self, c: &mut Collector<'a>) {
        for (i, (conv, ln)) in self.laterals.iter_mut().enumerate() {
            c.conv(&format!("fpn.lateral{}", i + 2), conv);
            c.layer_norm(&format!("fpn.lateral{}_norm", i + 2), ln);
        }
        for (i, up) in self.upsample.iter_mut().enumerate() {
            c.conv(&format!("fpn.up{}", i + 3), up);
        }
        c.conv("fpn.refine", &mut self.refine);
    }
}
