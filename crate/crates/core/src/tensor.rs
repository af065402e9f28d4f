//! Sparse 3D tensor: active voxel coordinates plus a row-major feature matrix
//! over a declared `(B, T, H, W)` grid.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Axis, Error, Result};

/// Grid extents of a sparse tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub batch: usize,
    pub t: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub const fn new(batch: usize, t: usize, h: usize, w: usize) -> Self {
        Self { batch, t, h, w }
    }

    pub fn volume(&self) -> u128 {
        self.batch as u128 * self.t as u128 * self.h as u128 * self.w as u128
    }

    pub fn contains(&self, c: &VoxelCoord) -> bool {
        self.check(c).is_ok()
    }

    /// Returns the first axis on which `c` falls outside the grid.
    pub fn check(&self, c: &VoxelCoord) -> Result<()> {
        let axes = [
            (Axis::Batch, c.batch, self.batch),
            (Axis::T, c.t, self.t),
            (Axis::Y, c.y, self.h),
            (Axis::X, c.x, self.w),
        ];
        for (axis, value, extent) in axes {
            if value < 0 || value as usize >= extent {
                return Err(Error::OutOfBounds {
                    coord: *c,
                    axis,
                    value: value as i64,
                    extent,
                });
            }
        }
        Ok(())
    }

    /// Injective key of an in-bounds coordinate (its linear index in the grid).
    #[inline]
    pub fn pack(&self, c: &VoxelCoord) -> u64 {
        (((c.batch as u64 * self.t as u64 + c.t as u64) * self.h as u64 + c.y as u64)
            * self.w as u64)
            + c.x as u64
    }
}

/// Active voxel position. Field order gives the canonical lexicographic
/// `(batch, t, y, x)` ordering through the derived `Ord`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct VoxelCoord {
    pub batch: i32,
    pub t: i32,
    pub y: i32,
    pub x: i32,
}

impl VoxelCoord {
    pub const fn new(batch: i32, t: i32, y: i32, x: i32) -> Self {
        Self { batch, t, y, x }
    }
}

/// How `SparseTensor3D::build_merged` resolves repeated coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MergePolicy {
    Reject,
    Sum,
    Max,
}

#[derive(Debug, Clone)]
pub struct SparseTensor3D {
    shape: Shape,
    channels: usize,
    coords: Vec<VoxelCoord>,
    features: Vec<f32>,
    index: HashMap<u64, u32>,
}

impl PartialEq for SparseTensor3D {
    fn eq(&self, other: &Self) -> bool {
        self.shape == other.shape
            && self.channels == other.channels
            && self.coords == other.coords
            && self.features.len() == other.features.len()
            && self
                .features
                .iter()
                .zip(&other.features)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

impl SparseTensor3D {
    /// Builds a tensor from `(coord, feature)` pairs, rejecting duplicates.
    pub fn build<I, F>(shape: Shape, channels: usize, pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (VoxelCoord, F)>,
        F: AsRef<[f32]>,
    {
        Self::build_merged(shape, channels, pairs, MergePolicy::Reject)
    }

    pub fn build_merged<I, F>(
        shape: Shape,
        channels: usize,
        pairs: I,
        policy: MergePolicy,
    ) -> Result<Self>
    where
        I: IntoIterator<Item = (VoxelCoord, F)>,
        F: AsRef<[f32]>,
    {
        if channels == 0 {
            return Err(Error::Config("channel count must be positive".into()));
        }
        let mut coords = Vec::new();
        let mut features = Vec::new();
        let mut index = HashMap::new();
        for (coord, feat) in pairs {
            let feat = feat.as_ref();
            shape.check(&coord)?;
            if feat.len() != channels {
                return Err(Error::Shape(format!(
                    "feature row for {coord:?} has {} values, expected {channels}",
                    feat.len()
                )));
            }
            let key = shape.pack(&coord);
            match index.get(&key) {
                None => {
                    index.insert(key, coords.len() as u32);
                    coords.push(coord);
                    features.extend_from_slice(feat);
                }
                Some(&row) => {
                    let dst = &mut features[row as usize * channels..(row as usize + 1) * channels];
                    match policy {
                        MergePolicy::Reject => return Err(Error::DuplicateCoord(coord)),
                        MergePolicy::Sum => dst.iter_mut().zip(feat).for_each(|(d, s)| *d += s),
                        MergePolicy::Max => {
                            dst.iter_mut().zip(feat).for_each(|(d, s)| *d = d.max(*s))
                        }
                    }
                }
            }
        }
        Ok(Self {
            shape,
            channels,
            coords,
            features,
            index,
        })
    }

    /// Builds from parallel coordinate and flattened feature arrays.
    pub fn from_parts(
        shape: Shape,
        channels: usize,
        coords: Vec<VoxelCoord>,
        features: Vec<f32>,
    ) -> Result<Self> {
        if channels == 0 {
            return Err(Error::Config("channel count must be positive".into()));
        }
        if features.len() != coords.len() * channels {
            return Err(Error::Shape(format!(
                "{} feature values for {} coords x {channels} channels",
                features.len(),
                coords.len()
            )));
        }
        let mut index = HashMap::with_capacity(coords.len());
        for (row, c) in coords.iter().enumerate() {
            shape.check(c)?;
            if index.insert(shape.pack(c), row as u32).is_some() {
                return Err(Error::DuplicateCoord(*c));
            }
        }
        Ok(Self {
            shape,
            channels,
            coords,
            features,
            index,
        })
    }

    pub fn empty(shape: Shape, channels: usize) -> Result<Self> {
        Self::from_parts(shape, channels, Vec::new(), Vec::new())
    }

    /// Same coordinates (and index) with a new feature matrix.
    pub fn with_features(&self, channels: usize, features: Vec<f32>) -> Result<Self> {
        if features.len() != self.coords.len() * channels || channels == 0 {
            return Err(Error::Shape(format!(
                "{} feature values for {} coords x {channels} channels",
                features.len(),
                self.coords.len()
            )));
        }
        Ok(Self {
            shape: self.shape,
            channels,
            coords: self.coords.clone(),
            features,
            index: self.index.clone(),
        })
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn coords(&self) -> &[VoxelCoord] {
        &self.coords
    }

    pub fn features(&self) -> &[f32] {
        &self.features
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.features[i * self.channels..(i + 1) * self.channels]
    }

    pub fn rows(&self) -> impl Iterator<Item = (&VoxelCoord, &[f32])> {
        self.coords.iter().zip(self.features.chunks_exact(self.channels))
    }

    /// Row of an active coordinate, `None` when inactive or out of bounds.
    pub fn lookup(&self, c: &VoxelCoord) -> Option<usize> {
        if !self.shape.contains(c) {
            return None;
        }
        self.index.get(&self.shape.pack(c)).map(|&r| r as usize)
    }

    /// Rows reordered into canonical `(batch, t, y, x)` order.
    pub fn canonicalized(&self) -> Self {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_by_key(|&i| self.coords[i]);
        self.permuted(&order)
    }

    /// Output row `k` is input row `order[k]`. `order` must be a permutation.
    pub fn permuted(&self, order: &[usize]) -> Self {
        assert_eq!(order.len(), self.len(), "permutation length");
        let c = self.channels;
        let coords: Vec<VoxelCoord> = order.iter().map(|&i| self.coords[i]).collect();
        let mut features = Vec::with_capacity(self.features.len());
        for &i in order {
            features.extend_from_slice(&self.features[i * c..(i + 1) * c]);
        }
        let index = coords
            .iter()
            .enumerate()
            .map(|(r, co)| (self.shape.pack(co), r as u32))
            .collect();
        Self {
            shape: self.shape,
            channels: c,
            coords,
            features,
            index,
        }
    }

    /// Checks the structural invariants; used by tests and loaders.
    pub fn validate(&self) -> Result<()> {
        if self.features.len() != self.coords.len() * self.channels {
            return Err(Error::Shape("feature matrix size".into()));
        }
        if self.index.len() != self.coords.len() {
            return Err(Error::Shape("index size".into()));
        }
        for (i, c) in self.coords.iter().enumerate() {
            self.shape.check(c)?;
            if self.index.get(&self.shape.pack(c)) != Some(&(i as u32)) {
                return Err(Error::Shape(format!("index does not invert row {i}")));
            }
        }
        Ok(())
    }

    pub fn map_features(&self, f: impl Fn(f32) -> f32) -> Self {
        let mut out = self.clone();
        out.features.iter_mut().for_each(|v| *v = f(*v));
        out
    }

    /// Fraction of grid positions that are active.
    pub fn occupancy(&self) -> f64 {
        let vol = self.shape.volume();
        if vol == 0 {
            0.0
        } else {
            self.len() as f64 / vol as f64
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_build() {
        let t = SparseTensor3D::build(Shape::new(1, 16, 640, 640), 6, Vec::<(VoxelCoord, Vec<f32>)>::new())
            .unwrap();
        assert_eq!(t.len(), 0);
    }

    #[test]
    fn singleton_build_and_lookup() {
        let c = VoxelCoord::new(0, 1, 2, 3);
        let t = SparseTensor3D::build(Shape::new(1, 4, 8, 8), 1, [(c, [5.0f32])]).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t.lookup(&c), Some(0));
        assert_eq!(t.row(0), &[5.0]);
    }

    #[test]
    fn out_of_bounds_names_axis() {
        let c = VoxelCoord::new(0, 1, 2, 8);
        let err = SparseTensor3D::build(Shape::new(1, 4, 8, 8), 1, [(c, [1.0f32])]).unwrap_err();
        match err {
            Error::OutOfBounds { axis, value, .. } => {
                assert_eq!(axis, Axis::X);
                assert_eq!(value, 8);
            }
            e => panic!("unexpected {e}"),
        }
        let neg = VoxelCoord::new(0, -1, 0, 0);
        let err = SparseTensor3D::build(Shape::new(1, 4, 8, 8), 1, [(neg, [1.0f32])]).unwrap_err();
        assert!(matches!(err, Error::OutOfBounds { axis: Axis::T, .. }));
    }

    #[test]
    fn duplicates_rejected_unless_merged() {
        let c = VoxelCoord::new(0, 0, 1, 1);
        let pairs = [(c, [1.0f32, 4.0]), (c, [3.0, 2.0])];
        let shape = Shape::new(1, 2, 2, 2);
        assert!(matches!(
            SparseTensor3D::build(shape, 2, pairs),
            Err(Error::DuplicateCoord(_))
        ));
        let s = SparseTensor3D::build_merged(shape, 2, pairs, MergePolicy::Sum).unwrap();
        assert_eq!(s.row(0), &[4.0, 6.0]);
        let m = SparseTensor3D::build_merged(shape, 2, pairs, MergePolicy::Max).unwrap();
        assert_eq!(m.row(0), &[3.0, 4.0]);
    }

    #[test]
    fn pack_is_injective_at_large_shapes() {
        let shape = Shape::new(256, 64, 4096, 4096);
        let a = VoxelCoord::new(255, 63, 4095, 4095);
        let b = VoxelCoord::new(255, 63, 4095, 4094);
        let c = VoxelCoord::new(0, 0, 0, 0);
        assert_ne!(shape.pack(&a), shape.pack(&b));
        assert_eq!(shape.pack(&a) as u128, shape.volume() - 1);
        assert_eq!(shape.pack(&c), 0);
    }

    #[test]
    fn canonical_order_and_index() {
        let shape = Shape::new(2, 2, 2, 2);
        let coords = vec![
            VoxelCoord::new(1, 0, 0, 0),
            VoxelCoord::new(0, 1, 1, 1),
            VoxelCoord::new(0, 0, 1, 0),
        ];
        let t = SparseTensor3D::from_parts(shape, 1, coords, vec![1.0, 2.0, 3.0]).unwrap();
        let c = t.canonicalized();
        assert_eq!(c.features(), &[3.0, 2.0, 1.0]);
        c.validate().unwrap();
    }
}
