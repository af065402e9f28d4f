//! Sparse residual backbone with squeeze-excitation on the late stages.

use super::config::BackboneConfig;
use super::layers::{Collector, LayerNorm};
use super::Trace;
use crate::error::{Error, Result};
use crate::ops::{
    sparse_add_union, sparse_layernorm, sparse_relu, squeeze_excitation, strided_conv3d,
    strided_conv3d_onto, subm_conv3d, ConvParams, SEParams, LAYERNORM_EPS,
};
use crate::tensor::SparseTensor3D;

#[derive(Debug, Clone, PartialEq)]
pub struct ResBlock {
    pub conv1: ConvParams,
    pub norm1: LayerNorm,
    pub conv2: ConvParams,
    pub norm2: LayerNorm,
    /// 1x1x1 projection when the block changes stride or width.
    pub shortcut: Option<ConvParams>,
}

impl ResBlock {
    fn new(cfg: &BackboneConfig, cin: usize, cout: usize, stride: [usize; 3]) -> Self {
        let k = cfg.block_kernel;
        let shortcut = (stride != [1, 1, 1] || cin != cout).then(|| ConvParams::zeros([1, 1, 1], stride, cin, cout));
        Self {
            conv1: ConvParams::zeros(k, stride, cin, cout),
            norm1: LayerNorm::new(cout),
            conv2: ConvParams::zeros(k, [1, 1, 1], cout, cout),
            norm2: LayerNorm::new(cout),
            shortcut,
        }
    }

    pub fn downsamples(&self) -> bool {
        self.conv1.stride != [1, 1, 1]
    }

    pub fn forward(&self, x: &SparseTensor3D) -> Result<SparseTensor3D> {
        let (main, skip) = if self.downsamples() {
            let main = strided_conv3d(x, &self.conv1)?;
            let sc = self.shortcut.as_ref().expect("strided block has a shortcut");
            // shortcut lands on the main path's coordinates
            let skip = strided_conv3d_onto(x, sc, main.coords().to_vec(), main.shape())?;
            (main, skip)
        } else {
            let main = subm_conv3d(x, &self.conv1)?;
            let skip = match &self.shortcut {
                Some(sc) => subm_conv3d(x, sc)?,
                None => x.clone(),
            };
            (main, skip)
        };
        let y = sparse_relu(&sparse_layernorm(&main, &self.norm1.gain, &self.norm1.bias, LAYERNORM_EPS)?);
        let y = subm_conv3d(&y, &self.conv2)?;
        let y = sparse_layernorm(&y, &self.norm2.gain, &self.norm2.bias, LAYERNORM_EPS)?;
        Ok(sparse_relu(&sparse_add_union(&y, &skip)?))
    }

    fn collect<'a>(&'a mut self, prefix: &str, c: &mut Collector<'a>) {
        c.conv(&format!("{prefix}.conv1"), &mut self.conv1);
        c.layer_norm(&format!("{prefix}.norm1"), &mut self.norm1);
        c.conv(&format!("{prefix}.conv2"), &mut self.conv2);
        c.layer_norm(&format!("{prefix}.norm2"), &mut self.norm2);
        if let Some(sc) = &mut self.shortcut {
            c.conv(&format!("{prefix}.shortcut"), sc);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stage {
    pub blocks: Vec<ResBlock>,
    pub se: Option<SEParams>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Backbone {
    pub stem: ConvParams,
    pub stem_norm: LayerNorm,
    pub stages: Vec<Stage>,
}

/// Multi-scale outputs of the last three stages, finest first.
#[derive(Debug, Clone, PartialEq)]
pub struct BackboneOutputs {
    pub levels: Vec<SparseTensor3D>,
}

impl Backbone {
    pub fn new(cfg: &BackboneConfig) -> Result<Self> {
        let widths = cfg.stage_channels();
        let stem = ConvParams::zeros(cfg.stem_kernel, cfg.stem_stride, cfg.in_channels, cfg.base_channels);
        let mut stages = Vec::new();
        let mut cin = cfg.base_channels;
        for (k, (&depth, &stride)) in cfg.block_depths.iter().zip(&cfg.stage_strides).enumerate() {
            let cout = widths[k];
            let mut blocks = Vec::with_capacity(depth);
            for j in 0..depth {
                let s = if j == 0 { stride } else { [1, 1, 1] };
                blocks.push(ResBlock::new(cfg, if j == 0 { cin } else { cout }, cout, s));
            }
            let se = if cfg.se_stages.contains(&(k + 1)) {
                Some(SEParams::zeros(cout, cfg.se_reduction)?)
            } else {
                None
            };
            stages.push(Stage { blocks, se });
            cin = cout;
        }
        Ok(Self {
            stem,
            stem_norm: LayerNorm::new(cfg.base_channels),
            stages,
        })
    }

    pub fn forward(&self, x: &SparseTensor3D, mut trace: Option<&mut Trace>) -> Result<BackboneOutputs> {
        if x.channels() != self.stem.in_channels {
            return Err(Error::Shape(format!(
                "input has {} channels, tensor 'backbone.stem.weight' expects {}",
                x.channels(),
                self.stem.in_channels
            )));
        }
        let y = strided_conv3d(x, &self.stem)?;
        let mut y = sparse_relu(&sparse_layernorm(&y, &self.stem_norm.gain, &self.stem_norm.bias, LAYERNORM_EPS)?);
        if let Some(t) = trace.as_deref_mut() {
            t.record("stem", &y);
        }
        let mut outs = Vec::with_capacity(self.stages.len());
        for (k, stage) in self.stages.iter().enumerate() {
            for b in &stage.blocks {
                y = b.forward(&y)?;
            }
            if let Some(se) = &stage.se {
                y = squeeze_excitation(&y, se)?;
            }
            if let Some(t) = trace.as_deref_mut() {
                t.record(&format!("stage{}", k + 1), &y);
            }
            outs.push(y.clone());
        }
        let n = outs.len();
        Ok(BackboneOutputs {
            levels: outs.split_off(n - 3),
        })
    }

    pub(crate) fn collect<'a>(&'a mut self, c: &mut Collector<'a>) {
        c.conv("backbone.stem", &mut self.stem);
        c.layer_norm("backbone.stem_norm", &mut self.stem_norm);
        for (k, stage) in self.stages.iter_mut().enumerate() {
            for (j, b) in stage.blocks.iter_mut().enumerate() {
                b.collect(&format!("backbone.stage{}.block{}", k + 1, j + 1), c);
            }
            if let Some(se) = &mut stage.se {
                c.se(&format!("backbone.stage{}.se", k + 1), se);
            }
        }
    }
}
