use crate::error::{Error, Result};
use crate::tensor::SparseTensor3D;

pub const LAYERNORM_EPS: f32 = 1e-5;

fn normalize_in_place(row: &mut [f32], gain: &[f32], bias: &[f32], eps: f32) {
    let n = row.len() as f32;
    let mean = row.iter().sum::<f32>() / n;
    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / n;
    let inv = 1.0 / (var + eps).sqrt();
    for ((v, g), b) in row.iter_mut().zip(gain).zip(bias) {
        *v = (*v - mean) * inv * g + b;
    }
}

/// Per-voxel layer normalization across channels.
pub fn sparse_layernorm(
    x: &SparseTensor3D,
    gain: &[f32],
    bias: &[f32],
    eps: f32,
) -> Result<SparseTensor3D> {
    let c = x.channels();
    if gain.len() != c || bias.len() != c {
        return Err(Error::Shape(format!(
            "layernorm params {}/{} for {c} channels",
            gain.len(),
            bias.len()
        )));
    }
    let mut f = x.features().to_vec();
    for row in f.chunks_exact_mut(c) {
        normalize_in_place(row, gain, bias, eps);
    }
    x.with_features(c, f)
}

/// Group normalization of one feature row split into `groups` equal groups.
pub fn group_norm_row(row: &mut [f32], groups: usize, gain: &[f32], bias: &[f32], eps: f32) {
    let g = row.len() / groups;
    for (k, chunk) in row.chunks_exact_mut(g).enumerate() {
        normalize_in_place(chunk, &gain[k * g..(k + 1) * g], &bias[k * g..(k + 1) * g], eps);
    }
}
