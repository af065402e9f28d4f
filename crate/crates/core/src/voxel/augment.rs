//! Tensor-level augmentations, selectable by name (`hflip`,
//! `polarity-invert`, `dropout:<p>`, `scale:<s>`).

use std::collections::BTreeMap;

use rand::{Rng, RngCore};

use crate::error::{Error, Result};
use crate::tensor::{MergePolicy, SparseTensor3D, VoxelCoord};

pub trait Augmentation: Send + Sync + std::fmt::Debug {
    fn name(&self) -> &'static str;
    fn apply(&self, x: &SparseTensor3D, rng: &mut dyn RngCore) -> Result<SparseTensor3D>;
}

/// `x -> W - 1 - x`, row order kept.
#[derive(Debug, Clone, Copy, Default)]
pub struct HorizontalFlip;

impl Augmentation for HorizontalFlip {
    fn name(&self) -> &'static str {
        "hflip"
    }

    fn apply(&self, x: &SparseTensor3D, _: &mut dyn RngCore) -> Result<SparseTensor3D> {
        let w = x.shape().w as i32;
        let coords = x
            .coords()
            .iter()
            .map(|c| VoxelCoord { x: w - 1 - c.x, ..*c })
            .collect();
        SparseTensor3D::from_parts(x.shape(), x.channels(), coords, x.features().to_vec())
    }
}

/// Swaps the ON/OFF channel of every feature pair.
#[derive(Debug, Clone, Copy, Default)]
pub struct PolarityInvert;

impl Augmentation for PolarityInvert {
    fn name(&self) -> &'static str {
        "polarity-invert"
    }

    fn apply(&self, x: &SparseTensor3D, _: &mut dyn RngCore) -> Result<SparseTensor3D> {
        let c = x.channels();
        if c % 2 != 0 {
            return Err(Error::Config(format!("polarity inversion needs paired channels, got {c}")));
        }
        let mut f = x.features().to_vec();
        for row in f.chunks_exact_mut(c) {
            for pair in row.chunks_exact_mut(2) {
                pair.swap(0, 1);
            }
        }
        x.with_features(c, f)
    }
}

/// Drops each active voxel independently with probability `p`.
#[derive(Debug, Clone, Copy)]
pub struct EventDropout {
    pub p: f64,
}

impl Augmentation for EventDropout {
    fn name(&self) -> &'static str {
        "dropout"
    }

    fn apply(&self, x: &SparseTensor3D, rng: &mut dyn RngCore) -> Result<SparseTensor3D> {
        if !(0.0..=1.0).contains(&self.p) {
            return Err(Error::Config(format!("dropout probability {} not in [0,1]", self.p)));
        }
        let keep: Vec<_> = x
            .rows()
            .filter(|_| !rng.random_bool(self.p))
            .map(|(c, r)| (*c, r.to_vec()))
            .collect();
        SparseTensor3D::build(x.shape(), x.channels(), keep)
    }
}

/// Spatial rescale by nearest integer of `s * coord`; colliding voxels merge
/// by feature-wise max, out-of-grid voxels are dropped.
#[derive(Debug, Clone, Copy)]
pub struct SpatialScale {
    pub s: f64,
}

impl Augmentation for SpatialScale {
    fn name(&self) -> &'static str {
        "scale"
    }

    fn apply(&self, x: &SparseTensor3D, _: &mut dyn RngCore) -> Result<SparseTensor3D> {
        if !(self.s > 0.0 && self.s.is_finite()) {
            return Err(Error::Config(format!("scale factor {} must be positive", self.s)));
        }
        let shape = x.shape();
        let mut moved: Vec<(VoxelCoord, &[f32])> = x
            .rows()
            .map(|(c, r)| {
                let y = (c.y as f64 * self.s).round() as i64;
                let xx = (c.x as f64 * self.s).round() as i64;
                (
                    VoxelCoord {
                        y: y.clamp(i32::MIN as i64, i32::MAX as i64) as i32,
                        x: xx.clamp(i32::MIN as i64, i32::MAX as i64) as i32,
                        ..*c
                    },
                    r,
                )
            })
            .filter(|(c, _)| shape.contains(c))
            .collect();
        moved.sort_by_key(|(c, _)| *c);
        SparseTensor3D::build_merged(shape, x.channels(), moved, MergePolicy::Max)
    }
}

type Factory = fn(Option<f64>) -> Result<Box<dyn Augmentation>>;

/// Name-keyed augmentation constructors.
#[derive(Debug, Clone)]
pub struct AugmentationRegistry {
    factories: BTreeMap<&'static str, Factory>,
}

impl Default for AugmentationRegistry {
    fn default() -> Self {
        Self::builtin()
    }
}

fn need(name: &str, p: Option<f64>) -> Result<f64> {
    p.ok_or_else(|| Error::Config(format!("augmentation '{name}' needs a parameter, e.g. {name}:0.5")))
}

impl AugmentationRegistry {
    pub fn builtin() -> Self {
        let mut factories: BTreeMap<&'static str, Factory> = BTreeMap::new();
        factories.insert("hflip", |_| Ok(Box::new(HorizontalFlip)));
        factories.insert("polarity-invert", |_| Ok(Box::new(PolarityInvert)));
        factories.insert("dropout", |p| Ok(Box::new(EventDropout { p: need("dropout", p)? })));
        factories.insert("scale", |p| Ok(Box::new(SpatialScale { s: need("scale", p)? })));
        Self { factories }
    }

    pub fn register(&mut self, name: &'static str, f: Factory) {
        self.factories.insert(name, f);
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.factories.keys().copied()
    }

    /// Parses `name` or `name:param`.
    pub fn parse(&self, spec: &str) -> Result<Box<dyn Augmentation>> {
        let (name, param) = match spec.split_once(':') {
            Some((n, p)) => {
                let v: f64 = p
                    .trim()
                    .parse()
                    .map_err(|_| Error::Config(format!("bad augmentation parameter in '{spec}'")))?;
                (n.trim(), Some(v))
            }
            None => (spec.trim(), None),
        };
        let f = self
            .factories
            .get(name)
            .ok_or_else(|| Error::Config(format!("unknown augmentation '{name}'")))?;
        f(param)
    }
}

/// Applies `op` to `x`.
pub fn augment(x: &SparseTensor3D, op: &dyn Augmentation, rng: &mut dyn RngCore) -> Result<SparseTensor3D> {
    op.apply(x, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample() -> SparseTensor3D {
        SparseTensor3D::build(
            Shape::new(1, 2, 4, 5),
            2,
            [
                (VoxelCoord::new(0, 0, 1, 0), [1.0f32, 2.0]),
                (VoxelCoord::new(0, 1, 3, 4), [3.0, 4.0]),
                (VoxelCoord::new(0, 1, 2, 2), [5.0, 6.0]),
            ],
        )
        .unwrap()
    }

    #[test]
    fn involutions() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = sample();
        let f = HorizontalFlip.apply(&x, &mut rng).unwrap();
        assert_eq!(f.coords()[0].x, 4);
        assert_eq!(HorizontalFlip.apply(&f, &mut rng).unwrap(), x);
        let p = PolarityInvert.apply(&x, &mut rng).unwrap();
        assert_eq!(p.row(0), &[2.0, 1.0]);
        assert_eq!(PolarityInvert.apply(&p, &mut rng).unwrap(), x);
    }

    #[test]
    fn dropout_extremes() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = sample();
        assert_eq!(EventDropout { p: 0.0 }.apply(&x, &mut rng).unwrap(), x);
        assert_eq!(EventDropout { p: 1.0 }.apply(&x, &mut rng).unwrap().len(), 0);
        assert!(EventDropout { p: 1.5 }.apply(&x, &mut rng).is_err());
    }

    #[test]
    fn scale_merges_by_max_and_clips() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = SparseTensor3D::build(
            Shape::new(1, 1, 4, 4),
            1,
            [
                (VoxelCoord::new(0, 0, 0, 0), [1.0f32]),
                (VoxelCoord::new(0, 0, 0, 1), [7.0]),
                (VoxelCoord::new(0, 0, 3, 3), [2.0]),
            ],
        )
        .unwrap();
        let y = SpatialScale { s: 0.4 }.apply(&x, &mut rng).unwrap();
        // (0,1) -> round(0.4) = 0 collides with (0,0); (3,3) -> (1,1)
        assert_eq!(y.len(), 2);
        assert_eq!(y.row(0), &[7.0]);
        let z = SpatialScale { s: 2.0 }.apply(&x, &mut rng).unwrap();
        assert_eq!(z.len(), 2);
        let gone = SpatialScale { s: 100.0 }.apply(
            &SparseTensor3D::build(Shape::new(1, 1, 4, 4), 1, [(VoxelCoord::new(0, 0, 1, 1), [1.0f32])]).unwrap(),
            &mut rng,
        );
        assert_eq!(gone.unwrap().len(), 0);
    }

    #[test]
    fn registry_parses() {
        let reg = AugmentationRegistry::builtin();
        assert_eq!(reg.parse("hflip").unwrap().name(), "hflip");
        assert_eq!(reg.parse("dropout:0.02").unwrap().name(), "dropout");
        assert!(reg.parse("dropout").is_err());
        assert!(reg.parse("rotate").is_err());
        assert!(reg.parse("scale:abc").is_err());
    }
}
