//! Rulebook construction and gather/scatter execution for sparse convolutions.
//!
//! A rulebook lists, for every kernel offset, the `(input_row, output_row)`
//! pairs that offset connects. Executing a convolution is then a gather of the
//! input row, a `C_in x C_out` matmul with that offset's weights, and a
//! scatter-add into the output row.
//!
//! Geometry, for per-axis kernel extent `k`, stride `s` and `pad = (k - 1) / 2`,
//! with kernel index `j in 0..k`:
//!
//! * submanifold / strided: output `o` reads input `o * s + j - pad`;
//! * transposed: input `c` writes output `c * s + j - pad`.
//!
//! Strided outputs are the distinct `floor(c / s)` of the active inputs.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::tensor::{Shape, SparseTensor3D, VoxelCoord};

/// Kernel extents `(kt, ky, kx)`.
pub type KernelShape = [usize; 3];
/// Strides `(st, sy, sx)`.
pub type Stride = [usize; 3];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ConvMode {
    Submanifold,
    Strided,
    Transposed,
}

impl ConvMode {
    pub const ALL: [ConvMode; 3] = [ConvMode::Submanifold, ConvMode::Strided, ConvMode::Transposed];

    pub fn name(&self) -> &'static str {
        match self {
            ConvMode::Submanifold => "submanifold",
            ConvMode::Strided => "strided",
            ConvMode::Transposed => "transposed",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rulebook {
    pub kernel_shape: KernelShape,
    pub stride: Stride,
    pub mode: ConvMode,
    /// Relative offsets `(dt, dy, dx)`, in weight order.
    pub offsets: Vec<[i32; 3]>,
    /// Per-offset `(input_row, output_row)` pairs, sorted by output row.
    pub pairs: Vec<Vec<(u32, u32)>>,
    pub out_coords: Vec<VoxelCoord>,
    pub out_shape: Shape,
    pub in_len: usize,
}

impl Rulebook {
    pub fn kernel_volume(&self) -> usize {
        self.kernel_shape.iter().product()
    }

    pub fn pair_count(&self) -> usize {
        self.pairs.iter().map(Vec::len).sum()
    }

    /// Checks row bounds and that no `(offset, output_row)` repeats.
    pub fn validate(&self) -> Result<()> {
        let m_out = self.out_coords.len();
        for (k, list) in self.pairs.iter().enumerate() {
            let mut seen = std::collections::HashSet::new();
            for &(i, o) in list {
                if i as usize >= self.in_len || o as usize >= m_out {
                    return Err(Error::Shape(format!("offset {k}: pair ({i},{o}) out of range")));
                }
                if !seen.insert(o) {
                    return Err(Error::Shape(format!("offset {k}: output row {o} repeated")));
                }
            }
        }
        Ok(())
    }
}

/// Kernel offsets in weight order (t-major), `j - (k - 1) / 2` per axis.
pub fn kernel_offsets(kernel: KernelShape) -> Vec<[i32; 3]> {
    let pad = |k: usize| ((k as i32) - 1) / 2;
    let mut out = Vec::with_capacity(kernel.iter().product());
    for jt in 0..kernel[0] as i32 {
        for jy in 0..kernel[1] as i32 {
            for jx in 0..kernel[2] as i32 {
                out.push([jt - pad(kernel[0]), jy - pad(kernel[1]), jx - pad(kernel[2])]);
            }
        }
    }
    out
}

fn check_geometry(kernel: KernelShape, stride: Stride) -> Result<()> {
    if kernel.iter().any(|&k| k == 0) {
        return Err(Error::Config(format!("kernel extents must be positive, got {kernel:?}")));
    }
    if stride.iter().any(|&s| s == 0) {
        return Err(Error::Config(format!("stride components must be >= 1, got {stride:?}")));
    }
    Ok(())
}

/// Output grid of a convolution in the given mode.
pub fn output_shape(input: Shape, stride: Stride, mode: ConvMode) -> Shape {
    match mode {
        ConvMode::Submanifold => input,
        ConvMode::Strided => Shape::new(
            input.batch,
            input.t.div_ceil(stride[0]),
            input.h.div_ceil(stride[1]),
            input.w.div_ceil(stride[2]),
        ),
        ConvMode::Transposed => Shape::new(
            input.batch,
            input.t * stride[0],
            input.h * stride[1],
            input.w * stride[2],
        ),
    }
}

pub fn build_rulebook(
    input: &SparseTensor3D,
    kernel: KernelShape,
    stride: Stride,
    mode: ConvMode,
) -> Result<Rulebook> {
    check_geometry(kernel, stride)?;
    let out_shape = output_shape(input.shape(), stride, mode);
    match mode {
        ConvMode::Submanifold => {
            if kernel.iter().any(|k| k % 2 == 0) {
                return Err(Error::Config(format!(
                    "submanifold convolution needs odd kernel extents, got {kernel:?}"
                )));
            }
            gather_rulebook(input, input.coords().to_vec(), out_shape, kernel, [1, 1, 1], mode)
        }
        ConvMode::Strided => {
            let mut outs: Vec<VoxelCoord> = input
                .coords()
                .iter()
                .map(|c| VoxelCoord {
                    batch: c.batch,
                    t: c.t / stride[0] as i32,
                    y: c.y / stride[1] as i32,
                    x: c.x / stride[2] as i32,
                })
                .collect();
            outs.sort_unstable();
            outs.dedup();
            gather_rulebook(input, outs, out_shape, kernel, stride, mode)
        }
        ConvMode::Transposed => transposed_rulebook(input, None, out_shape, kernel, stride),
    }
}

/// Builds a rulebook onto a caller-chosen output coordinate set, e.g. the
/// shortcut path of a strided residual block, which must land on the same
/// coordinates as the main path.
pub fn build_rulebook_onto(
    input: &SparseTensor3D,
    out_coords: Vec<VoxelCoord>,
    out_shape: Shape,
    kernel: KernelShape,
    stride: Stride,
    mode: ConvMode,
) -> Result<Rulebook> {
    check_geometry(kernel, stride)?;
    for c in &out_coords {
        out_shape.check(c)?;
    }
    match mode {
        ConvMode::Transposed => transposed_rulebook(input, Some(out_coords), out_shape, kernel, stride),
        _ => gather_rulebook(input, out_coords, out_shape, kernel, stride, mode),
    }
}

/// Transposed rulebook whose generated positions are clipped to `out_shape`.
pub fn build_transposed_rulebook(
    input: &SparseTensor3D,
    kernel: KernelShape,
    stride: Stride,
    out_shape: Shape,
) -> Result<Rulebook> {
    check_geometry(kernel, stride)?;
    transposed_rulebook(input, None, out_shape, kernel, stride)
}

fn gather_rulebook(
    input: &SparseTensor3D,
    out_coords: Vec<VoxelCoord>,
    out_shape: Shape,
    kernel: KernelShape,
    stride: Stride,
    mode: ConvMode,
) -> Result<Rulebook> {
    let offsets = kernel_offsets(kernel);
    let mut pairs = vec![Vec::new(); offsets.len()];
    for (o_row, o) in out_coords.iter().enumerate() {
        for (k, d) in offsets.iter().enumerate() {
            let src = VoxelCoord {
                batch: o.batch,
                t: o.t * stride[0] as i32 + d[0],
                y: o.y * stride[1] as i32 + d[1],
                x: o.x * stride[2] as i32 + d[2],
            };
            if let Some(i_row) = input.lookup(&src) {
                pairs[k].push((i_row as u32, o_row as u32));
            }
        }
    }
    Ok(Rulebook {
        kernel_shape: kernel,
        stride,
        mode,
        offsets,
        pairs,
        out_coords,
        out_shape,
        in_len: input.len(),
    })
}

fn transposed_rulebook(
    input: &SparseTensor3D,
    fixed_outputs: Option<Vec<VoxelCoord>>,
    out_shape: Shape,
    kernel: KernelShape,
    stride: Stride,
) -> Result<Rulebook> {
    let offsets = kernel_offsets(kernel);
    let target = |c: &VoxelCoord, d: &[i32; 3]| VoxelCoord {
        batch: c.batch,
        t: c.t * stride[0] as i32 + d[0],
        y: c.y * stride[1] as i32 + d[1],
        x: c.x * stride[2] as i32 + d[2],
    };
    let out_coords = match fixed_outputs {
        Some(o) => o,
        None => {
            let mut outs: Vec<VoxelCoord> = input
                .coords()
                .iter()
                .flat_map(|c| offsets.iter().map(move |d| target(c, d)))
                .filter(|o| out_shape.contains(o))
                .collect();
            outs.sort_unstable();
            outs.dedup();
            outs
        }
    };
    let out_index: HashMap<u64, u32> = out_coords
        .iter()
        .enumerate()
        .map(|(r, c)| (out_shape.pack(c), r as u32))
        .collect();
    let mut pairs = vec![Vec::new(); offsets.len()];
    for (i_row, c) in input.coords().iter().enumerate() {
        for (k, d) in offsets.iter().enumerate() {
            let o = target(c, d);
            if !out_shape.contains(&o) {
                continue;
            }
            if let Some(&o_row) = out_index.get(&out_shape.pack(&o)) {
                pairs[k].push((i_row as u32, o_row));
            }
        }
    }
    for list in &mut pairs {
        list.sort_unstable_by_key(|&(_, o)| o);
    }
    Ok(Rulebook {
        kernel_shape: kernel,
        stride,
        mode: ConvMode::Transposed,
        offsets,
        pairs,
        out_coords,
        out_shape,
        in_len: input.len(),
    })
}

/// Executes a rulebook: `out[j] = bias + sum over (k, i -> j) of in[i] * W[k]`.
///
/// `weights` is `K x C_in x C_out`, row-major, in rulebook offset order.
/// Each output row accumulates offsets in ascending order, so the result does
/// not depend on how the work is partitioned.
pub fn gather_scatter_matmul(
    input: &SparseTensor3D,
    rulebook: &Rulebook,
    weights: &[f32],
    bias: &[f32],
) -> Result<SparseTensor3D> {
    let c_in = input.channels();
    let c_out = bias.len();
    let k = rulebook.offsets.len();
    if rulebook.in_len != input.len() {
        return Err(Error::Shape(format!(
            "rulebook built for {} input rows, tensor has {}",
            rulebook.in_len,
            input.len()
        )));
    }
    if c_out == 0 || weights.len() != k * c_in * c_out {
        return Err(Error::Shape(format!(
            "weights hold {} values, expected {k} offsets x {c_in} in x {c_out} out",
            weights.len()
        )));
    }
    let m_out = rulebook.out_coords.len();
    let mut out = Vec::with_capacity(m_out * c_out);
    for _ in 0..m_out {
        out.extend_from_slice(bias);
    }
    let feats = input.features();
    for (kk, list) in rulebook.pairs.iter().enumerate() {
        let w = &weights[kk * c_in * c_out..(kk + 1) * c_in * c_out];
        for &(i, o) in list {
            let src = &feats[i as usize * c_in..(i as usize + 1) * c_in];
            let dst = &mut out[o as usize * c_out..(o as usize + 1) * c_out];
            for (ci, &f) in src.iter().enumerate() {
                if f == 0.0 {
                    continue;
                }
                let wrow = &w[ci * c_out..(ci + 1) * c_out];
                for (d, &wv) in dst.iter_mut().zip(wrow) {
                    *d += f * wv;
                }
            }
        }
    }
    SparseTensor3D::from_parts(rulebook.out_shape, c_out, rulebook.out_coords.clone(), out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tensor(shape: Shape, coords: &[(i32, i32, i32)], c: usize) -> SparseTensor3D {
        let pairs = coords.iter().enumerate().map(|(i, &(t, y, x))| {
            (VoxelCoord::new(0, t, y, x), vec![i as f32 + 1.0; c])
        });
        SparseTensor3D::build(shape, c, pairs).unwrap()
    }

    fn center_index(kernel: KernelShape) -> usize {
        kernel_offsets(kernel).iter().position(|d| *d == [0, 0, 0]).unwrap()
    }

    #[test]
    fn isolated_voxel_only_center_fires() {
        let x = tensor(Shape::new(1, 4, 8, 8), &[(1, 3, 3)], 1);
        let rb = build_rulebook(&x, [3, 3, 3], [1, 1, 1], ConvMode::Submanifold).unwrap();
        assert_eq!(rb.out_coords, x.coords());
        assert_eq!(rb.offsets.len(), 27);
        assert_eq!(rb.pair_count(), 1);
        assert_eq!(rb.pairs[center_index([3, 3, 3])], vec![(0, 0)]);
    }

    #[test]
    fn adjacent_pair_sees_each_other() {
        let x = tensor(Shape::new(1, 4, 8, 8), &[(0, 2, 2), (0, 2, 3)], 1);
        let rb = build_rulebook(&x, [3, 3, 3], [1, 1, 1], ConvMode::Submanifold).unwrap();
        let offs = &rb.offsets;
        let right = offs.iter().position(|d| *d == [0, 0, 1]).unwrap();
        let left = offs.iter().position(|d| *d == [0, 0, -1]).unwrap();
        let center = center_index([3, 3, 3]);
        assert_eq!(rb.pairs[center], vec![(0, 0), (1, 1)]);
        // output 0 at x=2 reads its right neighbour, output 1 at x=3 its left
        assert_eq!(rb.pairs[right], vec![(1, 0)]);
        assert_eq!(rb.pairs[left], vec![(0, 1)]);
        assert_eq!(rb.pair_count(), 4);
        rb.validate().unwrap();
    }

    #[test]
    fn strided_merges_into_one_output() {
        let x = tensor(Shape::new(1, 4, 8, 8), &[(0, 2, 2), (0, 3, 3)], 1);
        let rb = build_rulebook(&x, [3, 3, 3], [1, 2, 2], ConvMode::Strided).unwrap();
        assert_eq!(rb.out_coords, vec![VoxelCoord::new(0, 0, 1, 1)]);
        assert_eq!(rb.out_shape, Shape::new(1, 4, 4, 4));
        // both inputs are within the 3x3x3 window of output (0,1,1)
        assert_eq!(rb.pair_count(), 2);
    }

    #[test]
    fn even_kernel_rejected_for_submanifold() {
        let x = tensor(Shape::new(1, 4, 8, 8), &[(0, 2, 2)], 1);
        assert!(matches!(
            build_rulebook(&x, [3, 2, 3], [1, 1, 1], ConvMode::Submanifold),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            build_rulebook(&x, [3, 3, 3], [1, 0, 1], ConvMode::Strided),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn transposed_single_voxel_generates_window() {
        let x = tensor(Shape::new(1, 1, 4, 4), &[(0, 1, 1)], 1);
        let rb = build_rulebook(&x, [1, 3, 3], [1, 2, 2], ConvMode::Transposed).unwrap();
        assert_eq!(rb.out_shape, Shape::new(1, 1, 8, 8));
        let expect: Vec<VoxelCoord> = (1..=3)
            .flat_map(|y| (1..=3).map(move |x| VoxelCoord::new(0, 0, y, x)))
            .collect();
        assert_eq!(rb.out_coords, expect);
        // corner voxel gets clipped
        let x = tensor(Shape::new(1, 1, 4, 4), &[(0, 0, 0)], 1);
        let rb = build_rulebook(&x, [1, 3, 3], [1, 2, 2], ConvMode::Transposed).unwrap();
        assert_eq!(rb.out_coords.len(), 4);
    }

    #[test]
    fn identity_and_constant_kernels() {
        let x = tensor(Shape::new(1, 4, 8, 8), &[(0, 2, 2), (0, 2, 3), (1, 5, 5)], 2);
        let rb = build_rulebook(&x, [3, 3, 3], [1, 1, 1], ConvMode::Submanifold).unwrap();
        let mut w = vec![0.0f32; 27 * 4];
        let c = center_index([3, 3, 3]);
        w[c * 4] = 1.0;
        w[c * 4 + 3] = 1.0;
        let y = gather_scatter_matmul(&x, &rb, &w, &[0.0, 0.0]).unwrap();
        assert_eq!(y, x);
        let z = gather_scatter_matmul(&x, &rb, &vec![0.0; 27 * 4], &[0.5, -1.0]).unwrap();
        assert!(z.rows().all(|(_, r)| r == [0.5, -1.0]));
    }

    #[test]
    fn weight_shape_mismatch() {
        let x = tensor(Shape::new(1, 4, 8, 8), &[(0, 2, 2)], 2);
        let rb = build_rulebook(&x, [1, 1, 1], [1, 1, 1], ConvMode::Submanifold).unwrap();
        assert!(matches!(
            gather_scatter_matmul(&x, &rb, &[1.0; 3], &[0.0]),
            Err(Error::Shape(_))
        ));
    }
}
