use std::collections::BTreeMap;

use crate::error::Result;
use crate::tensor::{Shape, SparseTensor3D, VoxelCoord};

/// Collapses the temporal axis by channelwise max over voxels sharing
/// `(batch, y, x)`. The result has `T = 1`, rows in canonical order.
pub fn temporal_max_squeeze(x: &SparseTensor3D) -> Result<SparseTensor3D> {
    let s = x.shape();
    let mut groups: BTreeMap<VoxelCoord, Vec<f32>> = BTreeMap::new();
    for (c, row) in x.rows() {
        let key = VoxelCoord::new(c.batch, 0, c.y, c.x);
        match groups.get_mut(&key) {
            Some(acc) => acc.iter_mut().zip(row).for_each(|(d, v)| *d = d.max(*v)),
            None => {
                groups.insert(key, row.to_vec());
            }
        }
    }
    SparseTensor3D::build(Shape::new(s.batch, 1, s.h, s.w), x.channels(), groups)
}
