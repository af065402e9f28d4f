use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rulebook::{KernelShape, Stride};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub in_channels: usize,
    pub base_channels: usize,
    pub block_depths: Vec<usize>,
    pub stage_strides: Vec<Stride>,
    pub stem_stride: Stride,
    pub stem_kernel: KernelShape,
    pub block_kernel: KernelShape,
    /// 1-based stage numbers followed by squeeze-excitation.
    pub se_stages: Vec<usize>,
    pub se_reduction: usize,
}

impl BackboneConfig {
    pub fn new(in_channels: usize) -> Self {
        Self {
            in_channels,
            base_channels: 32,
            block_depths: vec![2, 2, 2, 1],
            stage_strides: vec![[1, 1, 1], [1, 2, 2], [1, 2, 2], [1, 2, 2]],
            stem_stride: [1, 2, 2],
            stem_kernel: [3, 3, 3],
            block_kernel: [3, 3, 3],
            se_stages: vec![3, 4],
            se_reduction: 16,
        }
    }

    /// Channel width of each stage: base, 2 base, 4 base, ...
    pub fn stage_channels(&self) -> Vec<usize> {
        (0..self.block_depths.len()).map(|k| self.base_channels << k).collect()
    }

    /// Cumulative spatial stride after the stem and after each stage.
    pub fn cumulative_strides(&self) -> Vec<usize> {
        let mut s = self.stem_stride[1];
        let mut out = vec![s];
        for st in &self.stage_strides {
            s *= st[1];
            out.push(s);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FpnConfig {
    pub dim: usize,
    pub upsample_kernel: KernelShape,
    pub upsample_stride: Stride,
    pub refine_kernel: KernelShape,
}

impl Default for FpnConfig {
    fn default() -> Self {
        Self {
            dim: 128,
            upsample_kernel: [3, 3, 3],
            upsample_stride: [1, 2, 2],
            refine_kernel: [3, 3, 3],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadConfig {
    pub hidden: usize,
    pub depth: usize,
    pub groups: usize,
    pub prior: f64,
    pub stride: usize,
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self {
            hidden: 128,
            depth: 2,
            groups: 8,
            prior: 0.01,
            stride: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub backbone: BackboneConfig,
    pub fpn: FpnConfig,
    pub head: HeadConfig,
}

impl ModelConfig {
    /// Full-size network.
    pub fn new(in_channels: usize) -> Self {
        Self {
            backbone: BackboneConfig::new(in_channels),
            fpn: FpnConfig::default(),
            head: HeadConfig::default(),
        }
    }

    /// Same topology with narrow widths, for fast tests.
    pub fn tiny(in_channels: usize) -> Self {
        Self {
            backbone: BackboneConfig {
                base_channels: 8,
                se_reduction: 4,
                ..BackboneConfig::new(in_channels)
            },
            fpn: FpnConfig {
                dim: 16,
                ..FpnConfig::default()
            },
            head: HeadConfig {
                hidden: 16,
                groups: 4,
                ..HeadConfig::default()
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let b = &self.backbone;
        if b.in_channels == 0 || b.base_channels == 0 {
            return Err(Error::Config("channel counts must be positive".into()));
        }
        if b.block_depths.len() < 3 {
            return Err(Error::Config("the pyramid needs at least three stages".into()));
        }
        if b.block_depths.len() != b.stage_strides.len() {
            return Err(Error::Config("one stride per stage".into()));
        }
        if b.block_depths.iter().any(|&d| d == 0) {
            return Err(Error::Config("stage depths must be >= 1".into()));
        }
        if b.se_stages.iter().any(|&s| s == 0 || s > b.block_depths.len()) {
            return Err(Error::Config(format!("SE stages {:?} out of range", b.se_stages)));
        }
        let strides = b.cumulative_strides();
        let n = strides.len();
        if strides[n - 3] != self.head.stride {
            return Err(Error::Config(format!(
                "finest pyramid level has stride {}, head expects {}",
                strides[n - 3],
                self.head.stride
            )));
        }
        for w in strides[n - 3..].windows(2) {
            if w[1] != w[0] * self.fpn.upsample_stride[1] {
                return Err(Error::Config("pyramid strides must match the upsampling stride".into()));
            }
        }
        if self.head.groups == 0 || self.head.hidden % self.head.groups != 0 {
            return Err(Error::Config(format!(
                "head hidden {} not divisible by {} groups",
                self.head.hidden, self.head.groups
            )));
        }
        if self.head.depth == 0 {
            return Err(Error::Config("head trunk depth must be >= 1".into()));
        }
        if !(self.head.prior > 0.0 && self.head.prior < 1.0) {
            return Err(Error::Config("class prior must be in (0, 1)".into()));
        }
        Ok(())
    }

    /// Flat numeric echo stored alongside checkpoint weights.
    pub fn to_echo(&self) -> Vec<f32> {
        let b = &self.backbone;
        let mut v: Vec<f32> = vec![
            b.in_channels as f32,
            b.base_channels as f32,
            b.block_depths.len() as f32,
        ];
        v.extend(b.block_depths.iter().map(|&d| d as f32));
        for s in &b.stage_strides {
            v.extend(s.iter().map(|&x| x as f32));
        }
        for arr in [b.stem_stride, b.stem_kernel, b.block_kernel] {
            v.extend(arr.iter().map(|&x| x as f32));
        }
        v.push(b.se_stages.len() as f32);
        v.extend(b.se_stages.iter().map(|&x| x as f32));
        v.push(b.se_reduction as f32);
        v.push(self.fpn.dim as f32);
        for arr in [self.fpn.upsample_kernel, self.fpn.upsample_stride, self.fpn.refine_kernel] {
            v.extend(arr.iter().map(|&x| x as f32));
        }
        let h = &self.head;
        v.extend([h.hidden as f32, h.depth as f32, h.groups as f32]);
        // the prior's f64 bits as four exact 16-bit integers
        let bits = h.prior.to_bits();
        v.extend((0..4).map(|k| ((bits >> (16 * k)) & 0xffff) as f32));
        v.push(h.stride as f32);
        v
    }

    pub fn from_echo(v: &[f32]) -> Result<Self> {
        let bad = || Error::Checkpoint("tensor '__config__': malformed config echo".into());
        let mut it = v.iter().copied();
        let mut next = || it.next().ok_or_else(bad);
        let int = |it: &mut dyn FnMut() -> Result<f32>| -> Result<usize> {
            let x = it()?;
            if x < 0.0 || x.fract() != 0.0 {
                return Err(bad());
            }
            Ok(x as usize)
        };
        let in_channels = int(&mut next)?;
        let base_channels = int(&mut next)?;
        let n = int(&mut next)?;
        if n > 64 {
            return Err(bad());
        }
        let block_depths = (0..n).map(|_| int(&mut next)).collect::<Result<Vec<_>>>()?;
        let triple = |next: &mut dyn FnMut() -> Result<f32>| -> Result<[usize; 3]> {
            Ok([int(next)?, int(next)?, int(next)?])
        };
        let stage_strides = (0..n).map(|_| triple(&mut next)).collect::<Result<Vec<_>>>()?;
        let stem_stride = triple(&mut next)?;
        let stem_kernel = triple(&mut next)?;
        let block_kernel = triple(&mut next)?;
        let ns = int(&mut next)?;
        if ns > 64 {
            return Err(bad());
        }
        let se_stages = (0..ns).map(|_| int(&mut next)).collect::<Result<Vec<_>>>()?;
        let se_reduction = int(&mut next)?;
        let dim = int(&mut next)?;
        let upsample_kernel = triple(&mut next)?;
        let upsample_stride = triple(&mut next)?;
        let refine_kernel = triple(&mut next)?;
        let hidden = int(&mut next)?;
        let depth = int(&mut next)?;
        let groups = int(&mut next)?;
        let mut bits = 0u64;
        for k in 0..4 {
            let part = int(&mut next)?;
            if part > 0xffff {
                return Err(bad());
            }
            bits |= (part as u64) << (16 * k);
        }
        let prior = f64::from_bits(bits);
        let stride = int(&mut next)?;
        let cfg = ModelConfig {
            backbone: BackboneConfig {
                in_channels,
                base_channels,
                block_depths,
                stage_strides,
                stem_stride,
                stem_kernel,
                block_kernel,
                se_stages,
                se_reduction,
            },
            fpn: FpnConfig {
                dim,
                upsample_kernel,
                upsample_stride,
                refine_kernel,
            },
            head: HeadConfig {
                hidden,
                depth,
                groups,
                prior,
                stride,
            },
        };
        cfg.validate().map_err(|e| Error::Checkpoint(format!("tensor '__config__': {e}")))?;
        Ok(cfg)
    }
}
