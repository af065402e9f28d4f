//! Window voxelization and per-voxel feature encoders.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::events::EventStream;
use crate::error::{Error, Result};
use crate::tensor::{Shape, SparseTensor3D, VoxelCoord};

/// Normalizer used for recency decay and timestamp spread.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum RangeMode {
    /// Max minus min timestamp of the window's events, at least 1 us.
    #[default]
    EventSpan,
    /// The nominal window length.
    Window,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum HotPixelScope {
    #[default]
    Recording,
    Window,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VoxelizerConfig {
    /// Temporal bins `T`.
    pub bins: usize,
    /// Target `(H, W)`; `None` keeps the sensor resolution.
    pub out_shape: Option<(usize, usize)>,
    pub window_us: u64,
    pub channels: usize,
    /// Hot-pixel threshold multiple; `<= 0` disables the filter.
    pub hot_pixel_factor: f64,
    pub hot_pixel_scope: HotPixelScope,
    /// Numerator of the recency rate `lambda = lambda_scale / range`.
    pub lambda_scale: f64,
    pub range_mode: RangeMode,
}

impl Default for VoxelizerConfig {
    fn default() -> Self {
        Self {
            bins: 16,
            out_shape: None,
            window_us: 33_000,
            channels: 6,
            hot_pixel_factor: 3.0,
            hot_pixel_scope: HotPixelScope::Recording,
            lambda_scale: 5.0,
            range_mode: RangeMode::EventSpan,
        }
    }
}

impl VoxelizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.bins == 0 {
            return Err(Error::Config("temporal bins must be >= 1".into()));
        }
        if self.window_us == 0 {
            return Err(Error::Config("window length must be positive".into()));
        }
        if self.channels != 2 && self.channels != 6 {
            return Err(Error::Config(format!("channels must be 2 or 6, got {}", self.channels)));
        }
        if let Some((h, w)) = self.out_shape {
            if h == 0 || w == 0 {
                return Err(Error::Config("output grid must be non-empty".into()));
            }
        }
        Ok(())
    }

    pub fn grid(&self, sensor: (usize, usize)) -> (usize, usize) {
        self.out_shape.unwrap_or(sensor)
    }
}

/// `floor(t * T / window)`, clamped into `[0, T - 1]`.
pub fn temporal_bin(t_rebased: u64, bins: usize, window_us: u64) -> usize {
    let b = (t_rebased as u128 * bins as u128 / window_us as u128) as usize;
    b.min(bins - 1)
}

/// Pixel-center nearest-neighbour mapping of a sensor coordinate onto a grid
/// axis of a different extent.
pub fn rescale_coord(v: usize, from: usize, to: usize) -> usize {
    if from == to {
        return v;
    }
    (((2 * v + 1) * to) / (2 * from)).min(to - 1)
}

/// Per-polarity running statistics of one voxel. Index 0 is ON, 1 is OFF.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct VoxelAccumulator {
    pub count: [u64; 2],
    pub last: [u64; 2],
    mean: [f64; 2],
    m2: [f64; 2],
}

impl VoxelAccumulator {
    pub fn push(&mut self, slot: usize, t: u64) {
        self.count[slot] += 1;
        self.last[slot] = self.last[slot].max(t);
        let n = self.count[slot] as f64;
        let d = t as f64 - self.mean[slot];
        self.mean[slot] += d / n;
        self.m2[slot] += d * (t as f64 - self.mean[slot]);
    }

    /// Population standard deviation of one polarity's timestamps.
    pub fn std(&self, slot: usize) -> f64 {
        if self.count[slot] == 0 {
            0.0
        } else {
            (self.m2[slot] / self.count[slot] as f64).max(0.0).sqrt()
        }
    }
}

/// Window-level quantities shared by every voxel of the window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowStats {
    pub t_max: u64,
    pub range: f64,
    pub lambda: f64,
}

/// Maps a voxel's accumulated events to its feature row.
pub trait FeatureEncoder: Send + Sync + std::fmt::Debug {
    fn name(&self) -> &'static str;
    fn channels(&self) -> usize;
    fn encode(&self, acc: &VoxelAccumulator, stats: &WindowStats, out: &mut [f32]);
}

/// `[c+, c-]`.
#[derive(Debug, Default, Clone, Copy)]
pub struct CountEncoder;

impl FeatureEncoder for CountEncoder {
    fn name(&self) -> &'static str {
        "counts"
    }

    fn channels(&self) -> usize {
        2
    }

    fn encode(&self, acc: &VoxelAccumulator, _: &WindowStats, out: &mut [f32]) {
        out[0] = acc.count[0] as f32;
        out[1] = acc.count[1] as f32;
    }
}

/// `[ln(1+c+), ln(1+c-), r+, r-, sigma+, sigma-]` with recency
/// `r = exp(-lambda (t_max - t_last))` and `sigma` the timestamp standard
/// deviation over the window range. Absent polarities encode as 0.
#[derive(Debug, Default, Clone, Copy)]
pub struct TemporalSurfaceEncoder;

impl FeatureEncoder for TemporalSurfaceEncoder {
    fn name(&self) -> &'static str {
        "temporal-surface"
    }

    fn channels(&self) -> usize {
        6
    }

    fn encode(&self, acc: &VoxelAccumulator, stats: &WindowStats, out: &mut [f32]) {
        for s in 0..2 {
            let c = acc.count[s];
            out[s] = (c as f64).ln_1p() as f32;
            if c == 0 {
                out[2 + s] = 0.0;
                out[4 + s] = 0.0;
            } else {
                let age = stats.t_max.saturating_sub(acc.last[s]) as f64;
                out[2 + s] = (-stats.lambda * age).exp() as f32;
                out[4 + s] = (acc.std(s) / stats.range) as f32;
            }
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct EncoderRegistry {
    encoders: BTreeMap<&'static str, Arc<dyn FeatureEncoder>>,
}

impl EncoderRegistry {
    pub fn builtin() -> Self {
        let mut r = Self::default();
        r.register(Arc::new(CountEncoder));
        r.register(Arc::new(TemporalSurfaceEncoder));
        r
    }

    pub fn register(&mut self, e: Arc<dyn FeatureEncoder>) {
        self.encoders.insert(e.name(), e);
    }

    pub fn get(&self, name: &str) -> Result<Arc<dyn FeatureEncoder>> {
        self.encoders
            .get(name)
            .cloned()
            .ok_or_else(|| Error::Config(format!("unknown feature encoder '{name}'")))
    }

    /// First registered encoder producing `channels` channels.
    pub fn for_channels(&self, channels: usize) -> Result<Arc<dyn FeatureEncoder>> {
        self.encoders
            .values()
            .find(|e| e.channels() == channels)
            .cloned()
            .ok_or_else(|| Error::Config(format!("no feature encoder with {channels} channels")))
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.encoders.keys().copied()
    }
}

/// Voxelizes one re-based window with the encoder matching `config.channels`.
pub fn voxelize_window(window: &EventStream, config: &VoxelizerConfig) -> Result<SparseTensor3D> {
    config.validate()?;
    let enc = EncoderRegistry::builtin().for_channels(config.channels)?;
    voxelize_with(window, config, enc.as_ref())
}

pub fn voxelize_with(
    window: &EventStream,
    config: &VoxelizerConfig,
    encoder: &dyn FeatureEncoder,
) -> Result<SparseTensor3D> {
    config.validate()?;
    let (sh, sw) = window.sensor;
    let (h, w) = config.grid(window.sensor);
    let shape = Shape::new(1, config.bins, h, w);
    let c = encoder.channels();
    let (Some(first), Some(last)) = (window.events.first(), window.events.last()) else {
        return SparseTensor3D::empty(shape, c);
    };
    let mut acc: BTreeMap<(usize, usize, usize), VoxelAccumulator> = BTreeMap::new();
    let mut t_max = 0u64;
    let mut t_min = u64::MAX;
    for e in &window.events {
        let tb = temporal_bin(e.t, config.bins, config.window_us);
        let y = rescale_coord(e.y as usize, sh, h);
        let x = rescale_coord(e.x as usize, sw, w);
        acc.entry((tb, y, x)).or_default().push(e.p.slot(), e.t);
        t_max = t_max.max(e.t);
        t_min = t_min.min(e.t);
    }
    debug_assert!(first.t == t_min && last.t == t_max);
    let range = match config.range_mode {
        RangeMode::EventSpan => ((t_max - t_min) as f64).max(1.0),
        RangeMode::Window => config.window_us as f64,
    };
    let stats = WindowStats {
        t_max,
        range,
        lambda: config.lambda_scale / range,
    };
    let mut coords = Vec::with_capacity(acc.len());
    let mut features = vec![0.0f32; acc.len() * c];
    for (row, ((tb, y, x), a)) in acc.iter().enumerate() {
        coords.push(VoxelCoord::new(0, *tb as i32, *y as i32, *x as i32));
        encoder.encode(a, &stats, &mut features[row * c..(row + 1) * c]);
    }
    SparseTensor3D::from_parts(shape, c, coords, features)
}
