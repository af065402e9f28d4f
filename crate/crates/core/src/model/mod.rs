//! The detector network: sparse backbone, sparse FPN, temporal squeeze and a
//! pointwise head, plus initialization, parameter census and checkpoints.

mod backbone;
mod checkpoint;
mod config;
mod fpn;
mod head;
mod layers;

pub use backbone::{Backbone, BackboneOutputs, ResBlock, Stage};
pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION, CONFIG_TENSOR,
};
pub use config::{BackboneConfig, FpnConfig, HeadConfig, ModelConfig};
pub use fpn::Fpn;
pub use head::{prior_logit, Head, HeadOutputs};
pub use layers::{GroupNorm, LayerNorm, Linear, ParamKind, ParamMut};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;
use crate::ops::temporal_max_squeeze;
use crate::tensor::SparseTensor3D;
use layers::Collector;

/// Active-position counts recorded at each pipeline stage.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Trace {
    pub stages: Vec<(String, usize)>,
}

impl Trace {
    pub fn record(&mut self, name: &str, x: &SparseTensor3D) {
        log::debug!("{name}: {} active", x.len());
        self.stages.push((name.to_string(), x.len()));
    }

    pub fn count(&self, name: &str) -> Option<usize> {
        self.stages.iter().find(|(n, _)| n == name).map(|(_, c)| *c)
    }
}

/// Parameter counts per network part.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ParamCensus {
    pub backbone: usize,
    pub fpn: usize,
    pub head: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparseVoxelDet {
    pub config: ModelConfig,
    pub backbone: Backbone,
    pub fpn: Fpn,
    pub head: Head,
}

impl SparseVoxelDet {
    /// Network with zero weights, unit norm gains and zero biases.
    pub fn zeros(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let backbone = Backbone::new(&config.backbone)?;
        let fpn = Fpn::new(&config.backbone, &config.fpn);
        let head = Head::new(config.fpn.dim, &config.head);
        Ok(Self {
            config: config.clone(),
            backbone,
            fpn,
            head,
        })
    }

    /// All parameter tensors by name, in a fixed order.
    pub fn params_mut(&mut self) -> Vec<ParamMut<'_>> {
        let mut c = Collector::new();
        self.backbone.collect(&mut c);
        self.fpn.collect(&mut c);
        self.head.collect(&mut c);
        c.out
    }

    /// `(name, dims, values)` for every parameter tensor.
    pub fn named_tensors(&self) -> Vec<(String, Vec<usize>, Vec<f32>)> {
        let mut copy = self.clone();
        copy.params_mut()
            .into_iter()
            .map(|p| (p.name, p.dims, p.data.clone()))
            .collect()
    }

    pub fn census(&self) -> ParamCensus {
        let (mut backbone, mut fpn, mut head) = (0, 0, 0);
        for (name, _, v) in self.named_tensors() {
            let slot = match name.split('.').next() {
                Some("backbone") => &mut backbone,
                Some("fpn") => &mut fpn,
                _ => &mut head,
            };
            *slot += v.len();
        }
        ParamCensus {
            backbone,
            fpn,
            head,
            total: backbone + fpn + head,
        }
    }

    pub fn forward(&self, x: &SparseTensor3D) -> Result<HeadOutputs> {
        self.forward_traced(x, None)
    }

    pub fn forward_traced(&self, x: &SparseTensor3D, mut trace: Option<&mut Trace>) -> Result<HeadOutputs> {
        if let Some(t) = trace.as_deref_mut() {
            t.record("input", x);
        }
        let levels = self.backbone.forward(x, trace.as_deref_mut())?;
        let fused = self.fpn.forward(&levels.levels, trace.as_deref_mut())?;
        let squeezed = temporal_max_squeeze(&fused)?;
        if let Some(t) = trace {
            t.record("squeeze", &squeezed);
        }
        if squeezed.is_empty() {
            return Ok(HeadOutputs::empty(self.head.stride));
        }
        self.head.forward(&squeezed)
    }

    /// Features entering the head: FPN output squeezed over time.
    pub fn head_input(&self, x: &SparseTensor3D) -> Result<SparseTensor3D> {
        let levels = self.backbone.forward(x, None)?;
        temporal_max_squeeze(&self.fpn.forward(&levels.levels, None)?)
    }
}

/// Seeded initialization: fan-in-scaled uniform weights, unit gains, zero
/// biases, and a classification bias matching the class prior.
pub fn init_weights(config: &ModelConfig, seed: u64) -> Result<SparseVoxelDet> {
    let mut model = SparseVoxelDet::zeros(config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for p in model.params_mut() {
        match p.kind {
            ParamKind::Weight { fan_in } => {
                let a = 1.0 / (fan_in.max(1) as f32).sqrt();
                p.data.iter_mut().for_each(|w| *w = rng.random_range(-a..a));
            }
            ParamKind::Gain => p.data.iter_mut().for_each(|g| *g = 1.0),
            ParamKind::Bias => p.data.iter_mut().for_each(|b| *b = 0.0),
        }
    }
    model.head.cls.bias = vec![prior_logit(config.head.prior)];
    Ok(model)
}

/// Census computed from the configuration alone.
pub fn parameter_census(config: &ModelConfig) -> Result<ParamCensus> {
    Ok(SparseVoxelDet::zeros(config)?.census())
}

pub fn backbone_forward(x: &SparseTensor3D, model: &SparseVoxelDet) -> Result<BackboneOutputs> {
    model.backbone.forward(x, None)
}

pub fn fpn_forward(levels: &BackboneOutputs, model: &SparseVoxelDet) -> Result<SparseTensor3D> {
    model.fpn.forward(&levels.levels, None)
}

pub fn head_forward(squeezed: &SparseTensor3D, model: &SparseVoxelDet) -> Result<HeadOutputs> {
    if squeezed.is_empty() {
        return Ok(HeadOutputs::empty(model.head.stride));
    }
    model.head.forward(squeezed)
}

pub fn full_forward(x: &SparseTensor3D, model: &SparseVoxelDet) -> Result<HeadOutputs> {
    model.forward(x)
}
