use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::ops::ConvParams;
use crate::rulebook::ConvMode;
use crate::tensor::{Shape, SparseTensor3D, VoxelCoord};

/// Desk-scale limit on dense grids.
pub const MAX_DENSE_ELEMENTS: usize = 1 << 24;

/// Full `B x T x H x W x C` array in 64-bit floats.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrid {
    pub shape: Shape,
    pub channels: usize,
    pub values: Vec<f64>,
}

impl DenseGrid {
    pub fn zeros(shape: Shape, channels: usize) -> Result<Self> {
        let n = shape.volume().saturating_mul(channels as u128);
        if n > MAX_DENSE_ELEMENTS as u128 {
            return Err(Error::Shape(format!("dense grid of {n} elements exceeds {MAX_DENSE_ELEMENTS}")));
        }
        Ok(Self {
            shape,
            channels,
            values: vec![0.0; n as usize],
        })
    }

    fn offset(&self, b: usize, t: usize, y: usize, x: usize) -> usize {
        let s = self.shape;
        (((b * s.t + t) * s.h + y) * s.w + x) * self.channels
    }

    /// Feature vector at an in-grid position; `None` outside the grid.
    pub fn at(&self, b: i64, t: i64, y: i64, x: i64) -> Option<&[f64]> {
        let s = self.shape;
        let inside = |v: i64, n: usize| v >= 0 && (v as usize) < n;
        if !(inside(b, s.batch) && inside(t, s.t) && inside(y, s.h) && inside(x, s.w)) {
            return None;
        }
        let o = self.offset(b as usize, t as usize, y as usize, x as usize);
        Some(&self.values[o..o + self.channels])
    }

    pub fn at_coord(&self, c: &VoxelCoord) -> Option<&[f64]> {
        self.at(c.batch as i64, c.t as i64, c.y as i64, c.x as i64)
    }

    fn at_mut(&mut self, b: usize, t: usize, y: usize, x: usize) -> &mut [f64] {
        let o = self.offset(b, t, y, x);
        let c = self.channels;
        &mut self.values[o..o + c]
    }

    fn positions(&self) -> impl Iterator<Item = (usize, usize, usize, usize)> {
        let s = self.shape;
        (0..s.batch).flat_map(move |b| {
            (0..s.t).flat_map(move |t| (0..s.h).flat_map(move |y| (0..s.w).map(move |x| (b, t, y, x))))
        })
    }
}

pub fn densify(x: &SparseTensor3D) -> Result<DenseGrid> {
    let mut g = DenseGrid::zeros(x.shape(), x.channels())?;
    for (c, row) in x.rows() {
        let dst = g.at_mut(c.batch as usize, c.t as usize, c.y as usize, c.x as usize);
        dst.iter_mut().zip(row).for_each(|(d, &v)| *d = v as f64);
    }
    Ok(g)
}

/// Keeps every position with at least one nonzero channel, in canonical order.
pub fn sparsify(g: &DenseGrid) -> Result<SparseTensor3D> {
    let mut pairs = Vec::new();
    for (b, t, y, x) in g.positions() {
        let o = g.offset(b, t, y, x);
        let row = &g.values[o..o + g.channels];
        if row.iter().any(|&v| v != 0.0) {
            let c = VoxelCoord::new(b as i32, t as i32, y as i32, x as i32);
            pairs.push((c, row.iter().map(|&v| v as f32).collect::<Vec<f32>>()));
        }
    }
    SparseTensor3D::build(g.shape, g.channels, pairs)
}

fn pads(k: [usize; 3]) -> [i64; 3] {
    k.map(|v| (v as i64 - 1) / 2)
}

fn weight(p: &ConvParams, jt: usize, jy: usize, jx: usize, ci: usize, co: usize) -> f64 {
    let k = p.kernel;
    let idx = (jt * k[1] + jy) * k[2] + jx;
    p.weights[(idx * p.in_channels + ci) * p.out_channels + co] as f64
}

/// Output grid for a mode; transposed convolutions may be given an explicit
/// target.
fn out_shape(input: Shape, stride: [usize; 3], mode: ConvMode, target: Option<Shape>) -> Shape {
    let s = stride;
    match (mode, target) {
        (ConvMode::Transposed, Some(t)) => t,
        (ConvMode::Submanifold, _) => input,
        (ConvMode::Strided, _) => Shape::new(
            input.batch,
            input.t.div_ceil(s[0]),
            input.h.div_ceil(s[1]),
            input.w.div_ceil(s[2]),
        ),
        (ConvMode::Transposed, None) => Shape::new(input.batch, input.t * s[0], input.h * s[1], input.w * s[2]),
    }
}

/// Textbook zero-padded convolution evaluated at every output position.
pub fn dense_conv3d(g: &DenseGrid, p: &ConvParams, mode: ConvMode, target: Option<Shape>) -> Result<DenseGrid> {
    if g.channels != p.in_channels {
        return Err(Error::Shape(format!("grid has {} channels, kernel expects {}", g.channels, p.in_channels)));
    }
    let s = match mode {
        ConvMode::Submanifold => [1, 1, 1],
        _ => p.stride,
    };
    let mut out = DenseGrid::zeros(out_shape(g.shape, s, mode, target), p.out_channels)?;
    let pad = pads(p.kernel);
    let k = p.kernel;
    let (cin, cout) = (p.in_channels, p.out_channels);
    let si = s.map(|v| v as i64);
    match mode {
        ConvMode::Submanifold | ConvMode::Strided => {
            for (b, t, y, x) in out.positions().collect::<Vec<_>>() {
                let mut acc: Vec<f64> = p.bias.iter().map(|&v| v as f64).collect();
                for jt in 0..k[0] {
                    for jy in 0..k[1] {
                        for jx in 0..k[2] {
                            let it = t as i64 * si[0] + jt as i64 - pad[0];
                            let iy = y as i64 * si[1] + jy as i64 - pad[1];
                            let ix = x as i64 * si[2] + jx as i64 - pad[2];
                            let Some(src) = g.at(b as i64, it, iy, ix) else { continue };
                            for ci in 0..cin {
                                for co in 0..cout {
                                    acc[co] += src[ci] * weight(p, jt, jy, jx, ci, co);
                                }
                            }
                        }
                    }
                }
                out.at_mut(b, t, y, x).copy_from_slice(&acc);
            }
        }
        ConvMode::Transposed => {
            for (b, t, y, x) in out.positions().collect::<Vec<_>>() {
                let bias = p.bias.iter().map(|&v| v as f64);
                out.at_mut(b, t, y, x).iter_mut().zip(bias).for_each(|(o, v)| *o = v);
            }
            let os = out.shape;
            for (b, t, y, x) in g.positions().collect::<Vec<_>>() {
                let src = g.at(b as i64, t as i64, y as i64, x as i64).unwrap().to_vec();
                for jt in 0..k[0] {
                    for jy in 0..k[1] {
                        for jx in 0..k[2] {
                            let ot = t as i64 * si[0] + jt as i64 - pad[0];
                            let oy = y as i64 * si[1] + jy as i64 - pad[1];
                            let ox = x as i64 * si[2] + jx as i64 - pad[2];
                            let inside = |v: i64, n: usize| v >= 0 && (v as usize) < n;
                            if !(inside(ot, os.t) && inside(oy, os.h) && inside(ox, os.w)) {
                                continue;
                            }
                            let dst = out.at_mut(b, ot as usize, oy as usize, ox as usize);
                            for ci in 0..cin {
                                for co in 0..cout {
                                    dst[co] += src[ci] * weight(p, jt, jy, jx, ci, co);
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Expected sparse output coordinates, derived from the definitions by
/// scanning every output position.
pub fn dense_support(
    input: &SparseTensor3D,
    p: &ConvParams,
    mode: ConvMode,
    target: Option<Shape>,
) -> Vec<VoxelCoord> {
    let active: BTreeSet<VoxelCoord> = input.coords().iter().copied().collect();
    match mode {
        ConvMode::Submanifold => active.into_iter().collect(),
        ConvMode::Strided => {
            let s = p.stride.map(|v| v as i32);
            let set: BTreeSet<VoxelCoord> = active
                .iter()
                .map(|c| VoxelCoord::new(c.batch, c.t.div_euclid(s[0]), c.y.div_euclid(s[1]), c.x.div_euclid(s[2])))
                .collect();
            set.into_iter().collect()
        }
        ConvMode::Transposed => {
            let os = out_shape(input.shape(), p.stride, mode, target);
            let pad = pads(p.kernel);
            let s = p.stride.map(|v| v as i64);
            let mut out = Vec::new();
            for b in 0..os.batch as i64 {
                for t in 0..os.t as i64 {
                    for y in 0..os.h as i64 {
                        for x in 0..os.w as i64 {
                            // o = c * s + j - pad  for some active c and j < k
                            let hit = active.iter().any(|c| {
                                let d = [
                                    t - c.t as i64 * s[0] + pad[0],
                                    y - c.y as i64 * s[1] + pad[1],
                                    x - c.x as i64 * s[2] + pad[2],
                                ];
                                c.batch as i64 == b && (0..3).all(|a| d[a] >= 0 && d[a] < p.kernel[a] as i64)
                            });
                            if hit {
                                out.push(VoxelCoord::new(b as i32, t as i32, y as i32, x as i32));
                            }
                        }
                    }
                }
            }
            out
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn densify_round_trip_and_guard() {
        let x = SparseTensor3D::build(
            Shape::new(1, 2, 3, 3),
            2,
            [(VoxelCoord::new(0, 1, 2, 0), [1.0f32, -2.0]), (VoxelCoord::new(0, 0, 0, 1), [0.5, 0.25])],
        )
        .unwrap();
        let d = densify(&x).unwrap();
        assert_eq!(d.values.iter().filter(|v| **v != 0.0).count(), 4);
        assert_eq!(sparsify(&d).unwrap(), x.canonicalized());
        assert_eq!(sparsify(&DenseGrid::zeros(Shape::new(1, 2, 2, 2), 1).unwrap()).unwrap().len(), 0);
        assert!(DenseGrid::zeros(Shape::new(1, 256, 256, 256), 2).is_err());
    }

    #[test]
    fn identity_kernel_is_identity() {
        let x = SparseTensor3D::build(Shape::new(1, 2, 3, 3), 1, [(VoxelCoord::new(0, 1, 1, 2), [3.0f32])]).unwrap();
        let mut p = ConvParams::zeros([3, 3, 3], [1, 1, 1], 1, 1);
        p.weights[13] = 1.0;
        let d = densify(&x).unwrap();
        assert_eq!(dense_conv3d(&d, &p, ConvMode::Submanifold, None).unwrap(), d);
    }
}
