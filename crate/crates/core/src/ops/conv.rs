//! Sparse convolutions. Each convolution mode is a [`ConvStrategy`] that knows
//! how to build its rulebook; execution is shared through
//! [`gather_scatter_matmul`]. Strategies are looked up by name in a
//! [`ConvRegistry`].

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::rulebook::{
    build_rulebook, build_rulebook_onto, build_transposed_rulebook, gather_scatter_matmul,
    ConvMode, KernelShape, Rulebook, Stride,
};
use crate::tensor::{Shape, SparseTensor3D, VoxelCoord};

#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams {
    pub kernel: KernelShape,
    pub stride: Stride,
    pub in_channels: usize,
    pub out_channels: usize,
    /// `K x C_in x C_out` row-major, offsets in rulebook order.
    pub weights: Vec<f32>,
    pub bias: Vec<f32>,
}

impl ConvParams {
    pub fn zeros(kernel: KernelShape, stride: Stride, in_channels: usize, out_channels: usize) -> Self {
        let k: usize = kernel.iter().product();
        Self {
            kernel,
            stride,
            in_channels,
            out_channels,
            weights: vec![0.0; k * in_channels * out_channels],
            bias: vec![0.0; out_channels],
        }
    }

    pub fn kernel_volume(&self) -> usize {
        self.kernel.iter().product()
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    /// Mutable `C_in x C_out` block of one kernel offset.
    pub fn offset_weights_mut(&mut self, offset: usize) -> &mut [f32] {
        let n = self.in_channels * self.out_channels;
        &mut self.weights[offset * n..(offset + 1) * n]
    }

    pub fn check(&self, input: &SparseTensor3D) -> Result<()> {
        if input.channels() != self.in_channels {
            return Err(Error::Shape(format!(
                "input has {} channels, convolution expects {}",
                input.channels(),
                self.in_channels
            )));
        }
        if self.weights.len() != self.kernel_volume() * self.in_channels * self.out_channels
            || self.bias.len() != self.out_channels
        {
            return Err(Error::Shape(format!(
                "weights/bias sizes {}/{} do not match kernel {:?}, {} -> {}",
                self.weights.len(),
                self.bias.len(),
                self.kernel,
                self.in_channels,
                self.out_channels
            )));
        }
        Ok(())
    }
}

/// One sparse convolution variant.
pub trait ConvStrategy: Send + Sync + std::fmt::Debug {
    fn name(&self) -> &'static str;

    fn mode(&self) -> ConvMode;

    fn rulebook(&self, input: &SparseTensor3D, params: &ConvParams) -> Result<Rulebook>;

    fn apply(&self, input: &SparseTensor3D, params: &ConvParams) -> Result<SparseTensor3D> {
        params.check(input)?;
        let rb = self.rulebook(input, params)?;
        gather_scatter_matmul(input, &rb, &params.weights, &params.bias)
    }
}

#[derive(Debug, Default, Clone, Copy)]
pub struct Submanifold;

impl ConvStrategy for Submanifold {
    fn name(&self) -> &'static str {
        "submanifold"
    }

    fn mode(&self) -> ConvMode {
        ConvMode::Submanifold
    }

    fn rulebook(&self, input: &SparseTensor3D, params: &ConvParams) -> Result<Rulebook> {
        if params.stride != [1, 1, 1] {
            return Err(Error::Config(format!(
                "submanifold convolution is stride 1, got {:?}",
                params.stride
            )));
        }
        build_rulebook(input, params.kernel, params.stride, ConvMode::Submanifold)
    }
}

#[derive(Debug, Default, Clone, Copy)]
pub struct Strided;

impl ConvStrategy for Strided {
    fn name(&self) -> &'static str {
        "strided"
    }

    fn mode(&self) -> ConvMode {
        ConvMode::Strided
    }

    fn rulebook(&self, input: &SparseTensor3D, params: &ConvParams) -> Result<Rulebook> {
        build_rulebook(input, params.kernel, params.stride, ConvMode::Strided)
    }
}

#[derive(Debug, Default, Clone, Copy)]
pub struct Transposed;

impl ConvStrategy for Transposed {
    fn name(&self) -> &'static str {
        "transposed"
    }

    fn mode(&self) -> ConvMode {
        ConvMode::Transposed
    }

    fn rulebook(&self, input: &SparseTensor3D, params: &ConvParams) -> Result<Rulebook> {
        build_rulebook(input, params.kernel, params.stride, ConvMode::Transposed)
    }
}

/// Name-keyed table of convolution strategies.
#[derive(Debug, Clone, Default)]
pub struct ConvRegistry {
    strategies: BTreeMap<&'static str, Arc<dyn ConvStrategy>>,
}

impl ConvRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registry holding the three built-in modes.
    pub fn builtin() -> Self {
        let mut r = Self::new();
        r.register(Arc::new(Submanifold));
        r.register(Arc::new(Strided));
        r.register(Arc::new(Transposed));
        r
    }

    pub fn register(&mut self, strategy: Arc<dyn ConvStrategy>) -> Option<Arc<dyn ConvStrategy>> {
        self.strategies.insert(strategy.name(), strategy)
    }

    pub fn get(&self, name: &str) -> Result<Arc<dyn ConvStrategy>> {
        self.strategies.get(name).cloned().ok_or_else(|| {
            Error::Config(format!(
                "unknown convolution '{name}', known: {}",
                self.names().collect::<Vec<_>>().join(", ")
            ))
        })
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.strategies.keys().copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Arc<dyn ConvStrategy>> {
        self.strategies.values()
    }
}

pub fn subm_conv3d(x: &SparseTensor3D, params: &ConvParams) -> Result<SparseTensor3D> {
    Submanifold.apply(x, params)
}

pub fn strided_conv3d(x: &SparseTensor3D, params: &ConvParams) -> Result<SparseTensor3D> {
    Strided.apply(x, params)
}

pub fn transpose_conv3d(x: &SparseTensor3D, params: &ConvParams) -> Result<SparseTensor3D> {
    Transposed.apply(x, params)
}

/// Strided convolution evaluated on a given output coordinate set.
pub fn strided_conv3d_onto(
    x: &SparseTensor3D,
    params: &ConvParams,
    out_coords: Vec<VoxelCoord>,
    out_shape: Shape,
) -> Result<SparseTensor3D> {
    params.check(x)?;
    let rb = build_rulebook_onto(x, out_coords, out_shape, params.kernel, params.stride, ConvMode::Strided)?;
    gather_scatter_matmul(x, &rb, &params.weights, &params.bias)
}

/// Transposed convolution whose output grid is `out_shape` rather than
/// `in * stride`; generated positions outside it are dropped.
pub fn transpose_conv3d_to(
    x: &SparseTensor3D,
    params: &ConvParams,
    out_shape: Shape,
) -> Result<SparseTensor3D> {
    params.check(x)?;
    let rb = build_transposed_rulebook(x, params.kernel, params.stride, out_shape)?;
    gather_scatter_matmul(x, &rb, &params.weights, &params.bias)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rulebook::kernel_offsets;

    fn single(shape: Shape, c: VoxelCoord, f: &[f32]) -> SparseTensor3D {
        SparseTensor3D::build(shape, f.len(), [(c, f.to_vec())]).unwrap()
    }

    #[test]
    fn isolated_voxel_uses_center_weight() {
        let x = single(Shape::new(1, 4, 8, 8), VoxelCoord::new(0, 1, 4, 4), &[2.0, -1.0]);
        let mut p = ConvParams::zeros([3, 3, 3], [1, 1, 1], 2, 3);
        for (i, w) in p.weights.iter_mut().enumerate() {
            *w = (i % 7) as f32 * 0.1 - 0.3;
        }
        p.bias = vec![0.5, 0.0, -0.5];
        let center = kernel_offsets([3, 3, 3]).iter().position(|d| *d == [0, 0, 0]).unwrap();
        let w = &p.weights[center * 6..center * 6 + 6];
        let y = subm_conv3d(&x, &p).unwrap();
        for co in 0..3 {
            let expect = p.bias[co] + 2.0 * w[co] - w[3 + co];
            assert!((y.row(0)[co] - expect).abs() < 1e-6);
        }
    }

    #[test]
    fn submanifold_rejects_stride() {
        let x = single(Shape::new(1, 4, 8, 8), VoxelCoord::new(0, 1, 4, 4), &[1.0]);
        let p = ConvParams::zeros([3, 3, 3], [1, 2, 2], 1, 1);
        assert!(matches!(subm_conv3d(&x, &p), Err(Error::Config(_))));
    }

    #[test]
    fn strided_zero_weights_and_empty_input() {
        let x = SparseTensor3D::build(
            Shape::new(1, 4, 8, 8),
            1,
            [(VoxelCoord::new(0, 0, 2, 2), [1.0f32]), (VoxelCoord::new(0, 3, 7, 1), [2.0])],
        )
        .unwrap();
        let mut p = ConvParams::zeros([3, 3, 3], [1, 2, 2], 1, 2);
        p.bias = vec![1.5, -2.0];
        let y = strided_conv3d(&x, &p).unwrap();
        assert_eq!(y.len(), 2);
        assert!(y.rows().all(|(_, r)| r == [1.5, -2.0]));
        let e = SparseTensor3D::empty(Shape::new(1, 4, 8, 8), 1).unwrap();
        assert_eq!(strided_conv3d(&e, &p).unwrap().len(), 0);
        assert_eq!(transpose_conv3d(&e, &ConvParams::zeros([1, 3, 3], [1, 2, 2], 1, 1)).unwrap().len(), 0);
    }

    #[test]
    fn channel_mismatch_is_shape_error() {
        let x = single(Shape::new(1, 4, 8, 8), VoxelCoord::new(0, 1, 4, 4), &[1.0, 2.0]);
        let p = ConvParams::zeros([1, 1, 1], [1, 1, 1], 3, 1);
        assert!(matches!(subm_conv3d(&x, &p), Err(Error::Shape(_))));
    }

    #[test]
    fn registry_lookup() {
        let reg = ConvRegistry::builtin();
        assert_eq!(reg.names().collect::<Vec<_>>(), ["strided", "submanifold", "transposed"]);
        assert_eq!(reg.get("transposed").unwrap().mode(), ConvMode::Transposed);
        assert!(reg.get("dilated").is_err());
    }
}
