//! Synthetic event scenes: rectangular "drone" outlines that emit events
//! along their contour, plus uniform background noise, with one ground-truth
//! box per object per window.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::boxes::BoundingBox;
use crate::error::{Error, Result};
use crate::eval::GroundTruthFrame;
use crate::voxel::{Event, EventStream, Polarity};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectSpec {
    /// Center `(x, y)` in pixels at time 0.
    pub center: [f64; 2],
    /// Center velocity `(vx, vy)` in pixels per second.
    #[serde(default)]
    pub velocity: [f64; 2],
    /// Footprint `(width, height)` in pixels.
    pub size: [f64; 2],
    /// Mean contour events per second.
    pub event_rate: f64,
    /// Probability that an event is positive.
    #[serde(default = "half")]
    pub polarity_mix: f64,
}

fn half() -> f64 {
    0.5
}

fn default_window() -> u64 {
    33_000
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub height: usize,
    pub width: usize,
    #[serde(default = "default_window")]
    pub window_us: u64,
    #[serde(default = "one")]
    pub windows: usize,
    #[serde(default)]
    pub objects: Vec<ObjectSpec>,
    /// Background events per second over the whole sensor.
    #[serde(default)]
    pub noise_rate: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_sequence")]
    pub sequence_id: String,
}

fn default_sequence() -> String {
    "synth".into()
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 || self.height > u16::MAX as usize + 1 || self.width > u16::MAX as usize + 1 {
            return Err(Error::Config(format!("grid {}x{} out of range", self.height, self.width)));
        }
        if self.window_us == 0 {
            return Err(Error::Config("window length must be positive".into()));
        }
        if !(self.noise_rate.is_finite() && self.noise_rate >= 0.0) {
            return Err(Error::Config("noise rate must be >= 0".into()));
        }
        for (i, o) in self.objects.iter().enumerate() {
            if !(o.size[0] > 0.0 && o.size[1] > 0.0) {
                return Err(Error::Config(format!("object {i}: size must be positive")));
            }
            if !(o.event_rate.is_finite() && o.event_rate >= 0.0) {
                return Err(Error::Config(format!("object {i}: event rate must be >= 0")));
            }
            if !(0.0..=1.0).contains(&o.polarity_mix) {
                return Err(Error::Config(format!("object {i}: polarity mix must be in [0,1]")));
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let s: Self = serde_json::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthWindow {
    pub index: usize,
    pub t_start: u64,
    pub event_count: usize,
    pub boxes: Vec<BoundingBox>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthScene {
    pub stream: EventStream,
    pub windows: Vec<SynthWindow>,
    pub sequence_id: String,
}

impl SynthScene {
    pub fn ground_truth(&self) -> Vec<GroundTruthFrame> {
        self.windows
            .iter()
            .map(|w| GroundTruthFrame {
                frame_id: w.index as u64,
                sequence_id: self.sequence_id.clone(),
                event_count: w.event_count as u64,
                boxes: w.boxes.clone(),
            })
            .collect()
    }
}

fn footprint(o: &ObjectSpec, t_us: f64) -> BoundingBox {
    let cx = o.center[0] + o.velocity[0] * t_us * 1e-6;
    let cy = o.center[1] + o.velocity[1] * t_us * 1e-6;
    let (hw, hh) = (o.size[0] / 2.0, o.size[1] / 2.0);
    BoundingBox::new(cx - hw, cy - hh, cx + hw, cy + hh)
}

fn clip(b: &BoundingBox, w: usize, h: usize) -> Option<BoundingBox> {
    let c = BoundingBox::new(b.x1.max(0.0), b.y1.max(0.0), b.x2.min(w as f64), b.y2.min(h as f64));
    (c.x1 < c.x2 && c.y1 < c.y2).then_some(c)
}

/// Point on the rectangle outline, uniform in arc length.
fn contour_point(b: &BoundingBox, rng: &mut ChaCha8Rng) -> (f64, f64) {
    let (w, h) = (b.width(), b.height());
    let mut s = rng.random_range(0.0..2.0 * (w + h));
    if s < w {
        return (b.x1 + s, b.y1);
    }
    s -= w;
    if s < h {
        return (b.x2, b.y1 + s);
    }
    s -= h;
    if s < w {
        return (b.x2 - s, b.y2);
    }
    (b.x1, b.y2 - (s - w))
}

fn poisson(mean: f64, rng: &mut ChaCha8Rng) -> usize {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean).map(|d| d.sample(rng) as usize).unwrap_or(0)
}

/// Renders the scene. Contour events are jittered by up to half a pixel, so
/// they land inside the ground-truth box dilated by one pixel; ground truth is
/// the footprint at mid-window, clipped to the sensor.
pub fn generate(scene: &SceneSpec) -> Result<SynthScene> {
    scene.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(scene.seed);
    let (hgt, wid) = (scene.height, scene.width);
    let dt = scene.window_us;
    let secs = dt as f64 * 1e-6;
    let mut events = Vec::new();
    let mut windows = Vec::with_capacity(scene.windows);
    for k in 0..scene.windows {
        let t0 = k as u64 * dt;
        let before = events.len();
        for o in &scene.objects {
            for _ in 0..poisson(o.event_rate * secs, &mut rng) {
                let t = t0 + rng.random_range(0..dt);
                let (px, py) = contour_point(&footprint(o, t as f64), &mut rng);
                let x = (px + rng.random_range(-0.5..0.5)).floor();
                let y = (py + rng.random_range(-0.5..0.5)).floor();
                let p = if rng.random_bool(o.polarity_mix) { Polarity::Positive } else { Polarity::Negative };
                if x >= 0.0 && y >= 0.0 && (x as usize) < wid && (y as usize) < hgt {
                    events.push(Event::new(t, x as u16, y as u16, p));
                }
            }
        }
        for _ in 0..poisson(scene.noise_rate * secs, &mut rng) {
            let t = t0 + rng.random_range(0..dt);
            let x = rng.random_range(0..wid) as u16;
            let y = rng.random_range(0..hgt) as u16;
            let p = if rng.random_bool(0.5) { Polarity::Positive } else { Polarity::Negative };
            events.push(Event::new(t, x, y, p));
        }
        events[before..].sort_by_key(|e| e.t);
        let mid = t0 as f64 + dt as f64 / 2.0;
        windows.push(SynthWindow {
            index: k,
            t_start: t0,
            event_count: events.len() - before,
            boxes: scene.objects.iter().filter_map(|o| clip(&footprint(o, mid), wid, hgt)).collect(),
        });
    }
    Ok(SynthScene {
        stream: EventStream::new((hgt, wid), events)?,
        windows,
        sequence_id: scene.sequence_id.clone(),
    })
}
