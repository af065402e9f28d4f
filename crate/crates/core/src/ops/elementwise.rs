use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensor::SparseTensor3D;

#[inline]
pub fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

/// Elementwise `max(0, x)`. Rows that become all-zero stay active.
pub fn sparse_relu(x: &SparseTensor3D) -> SparseTensor3D {
    x.map_features(|v| v.max(0.0))
}

/// Sum over the union of both supports, in canonical coordinate order.
/// Identical coordinate lists take a fast path that keeps their order.
pub fn sparse_add_union(a: &SparseTensor3D, b: &SparseTensor3D) -> Result<SparseTensor3D> {
    if a.shape() != b.shape() || a.channels() != b.channels() {
        return Err(Error::Shape(format!(
            "union-add of {:?}x{} and {:?}x{}",
            a.shape(),
            a.channels(),
            b.shape(),
            b.channels()
        )));
    }
    if a.coords() == b.coords() {
        let f = a.features().iter().zip(b.features()).map(|(x, y)| x + y).collect();
        return a.with_features(a.channels(), f);
    }
    let mut merged: BTreeMap<_, Vec<f32>> = BTreeMap::new();
    for (c, row) in a.rows() {
        merged.insert(*c, row.to_vec());
    }
    for (c, row) in b.rows() {
        match merged.get_mut(c) {
            Some(acc) => acc.iter_mut().zip(row).for_each(|(d, s)| *d += s),
            None => {
                merged.insert(*c, row.to_vec());
            }
        }
    }
    SparseTensor3D::build(a.shape(), a.channels(), merged)
}

/// Applies `y = x W + b` to every row of a row-major `n x in` matrix.
/// `w` is `in x out` row-major.
pub fn linear_rows(x: &[f32], in_dim: usize, w: &[f32], b: &[f32]) -> Vec<f32> {
    let out_dim = b.len();
    debug_assert_eq!(w.len(), in_dim * out_dim);
    let n = x.len() / in_dim;
    let mut out = Vec::with_capacity(n * out_dim);
    for row in x.chunks_exact(in_dim) {
        let start = out.len();
        out.extend_from_slice(b);
        let dst = &mut out[start..];
        for (i, &v) in row.iter().enumerate() {
            if v == 0.0 {
                continue;
            }
            for (d, &wv) in dst.iter_mut().zip(&w[i * out_dim..(i + 1) * out_dim]) {
                *d += v * wv;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Shape, VoxelCoord};

    fn t(coords: &[(i32, i32)], feats: &[[f32; 2]]) -> SparseTensor3D {
        SparseTensor3D::build(
            Shape::new(1, 1, 4, 4),
            2,
            coords.iter().zip(feats).map(|(&(y, x), f)| (VoxelCoord::new(0, 0, y, x), *f)),
        )
        .unwrap()
    }

    #[test]
    fn relu_cases() {
        let x = t(&[(0, 0), (0, 1), (1, 1)], &[[-1.0, -2.0], [1.0, 0.5], [-1.0, 2.0]]);
        let y = sparse_relu(&x);
        assert_eq!(y.features(), &[0.0, 0.0, 1.0, 0.5, 0.0, 2.0]);
        assert_eq!(y.len(), 3);
    }

    #[test]
    fn union_disjoint_identical_and_identity() {
        let a = t(&[(1, 1)], &[[1.0, 2.0]]);
        let b = t(&[(0, 3)], &[[3.0, 4.0]]);
        let u = sparse_add_union(&a, &b).unwrap();
        assert_eq!(u.len(), 2);
        assert_eq!(u.coords()[0], VoxelCoord::new(0, 0, 0, 3));
        assert_eq!(u.features(), &[3.0, 4.0, 1.0, 2.0]);
        let s = sparse_add_union(&a, &a).unwrap();
        assert_eq!(s.features(), &[2.0, 4.0]);
        let z = a.map_features(|_| 0.0);
        assert_eq!(sparse_add_union(&a, &z).unwrap(), a);
    }

    #[test]
    fn union_shape_mismatch() {
        let a = t(&[(1, 1)], &[[1.0, 2.0]]);
        let b = SparseTensor3D::empty(Shape::new(1, 1, 4, 5), 2).unwrap();
        assert!(sparse_add_union(&a, &b).is_err());
    }
}
