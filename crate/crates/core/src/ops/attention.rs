use crate::error::{Error, Result};
use crate::tensor::SparseTensor3D;

use super::elementwise::sigmoid;

/// Squeeze-and-excitation projections `C -> C/r -> C`.
#[derive(Debug, Clone, PartialEq)]
pub struct SEParams {
    pub channels: usize,
    pub hidden: usize,
    /// `C x hidden` row-major.
    pub w1: Vec<f32>,
    pub b1: Vec<f32>,
    /// `hidden x C` row-major.
    pub w2: Vec<f32>,
    pub b2: Vec<f32>,
}

impl SEParams {
    /// Smallest hidden width the reduction is allowed to produce.
    pub const MIN_HIDDEN: usize = 4;

    /// Hidden width for `channels` at reduction `ratio`; the ratio is
    /// lowered until the hidden width reaches [`Self::MIN_HIDDEN`].
    pub fn hidden_for(channels: usize, ratio: usize) -> Result<usize> {
        if ratio == 0 || channels % ratio != 0 {
            return Err(Error::Config(format!(
                "SE reduction {ratio} does not divide {channels} channels"
            )));
        }
        let mut r = ratio;
        while r > 1 && channels / r < Self::MIN_HIDDEN && channels % (r / 2) == 0 {
            r /= 2;
        }
        Ok(channels / r)
    }

    pub fn zeros(channels: usize, ratio: usize) -> Result<Self> {
        let hidden = Self::hidden_for(channels, ratio)?;
        Ok(Self {
            channels,
            hidden,
            w1: vec![0.0; channels * hidden],
            b1: vec![0.0; hidden],
            w2: vec![0.0; hidden * channels],
            b2: vec![0.0; channels],
        })
    }

    pub fn param_count(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }

    /// Channel gate for one pooled descriptor.
    pub fn gate(&self, squeeze: &[f32]) -> Vec<f32> {
        let (c, h) = (self.channels, self.hidden);
        let mut hid = self.b1.clone();
        for (i, &s) in squeeze.iter().enumerate() {
            for (j, hv) in hid.iter_mut().enumerate() {
                *hv += s * self.w1[i * h + j];
            }
        }
        hid.iter_mut().for_each(|v| *v = v.max(0.0));
        let mut out = self.b2.clone();
        for (j, &hv) in hid.iter().enumerate() {
            for (i, o) in out.iter_mut().enumerate() {
                *o += hv * self.w2[j * c + i];
            }
        }
        out.into_iter().map(sigmoid).collect()
    }
}

/// Channel gating from the per-batch mean over active rows.
pub fn squeeze_excitation(x: &SparseTensor3D, se: &SEParams) -> Result<SparseTensor3D> {
    let c = x.channels();
    if se.channels != c {
        return Err(Error::Shape(format!("SE built for {} channels, input has {c}", se.channels)));
    }
    if x.is_empty() {
        return Ok(x.clone());
    }
    let nb = x.shape().batch;
    let mut sums = vec![0.0f64; nb * c];
    let mut counts = vec![0usize; nb];
    for (co, row) in x.rows() {
        let b = co.batch as usize;
        counts[b] += 1;
        for (s, &v) in sums[b * c..(b + 1) * c].iter_mut().zip(row) {
            *s += v as f64;
        }
    }
    let gates: Vec<Vec<f32>> = (0..nb)
        .map(|b| {
            if counts[b] == 0 {
                return Vec::new();
            }
            let mean: Vec<f32> = sums[b * c..(b + 1) * c]
                .iter()
                .map(|s| (s / counts[b] as f64) as f32)
                .collect();
            se.gate(&mean)
        })
        .collect();
    let mut f = x.features().to_vec();
    for (row, co) in f.chunks_exact_mut(c).zip(x.coords()) {
        let g = &gates[co.batch as usize];
        row.iter_mut().zip(g).for_each(|(v, gv)| *v *= gv);
    }
    x.with_features(c, f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Shape, VoxelCoord};

    #[test]
    fn zero_projections_halve() {
        let x = SparseTensor3D::build(
            Shape::new(1, 1, 2, 2),
            4,
            [(VoxelCoord::new(0, 0, 0, 0), [1.0f32, 2.0, -4.0, 8.0])],
        )
        .unwrap();
        let se = SEParams::zeros(4, 2).unwrap();
        let y = squeeze_excitation(&x, &se).unwrap();
        assert_eq!(y.features(), &[0.5, 1.0, -2.0, 4.0]);
    }

    #[test]
    fn empty_stays_empty() {
        let x = SparseTensor3D::empty(Shape::new(1, 1, 2, 2), 4).unwrap();
        let se = SEParams::zeros(4, 2).unwrap();
        assert_eq!(squeeze_excitation(&x, &se).unwrap().len(), 0);
    }

    #[test]
    fn single_row_by_hand() {
        // C = 2, r = 2 -> hidden 1 is below MIN_HIDDEN, so the ratio is lowered to 1.
        assert_eq!(SEParams::hidden_for(2, 2).unwrap(), 2);
        let se = SEParams {
            channels: 2,
            hidden: 1,
            w1: vec![1.0, -1.0],
            b1: vec![0.5],
            w2: vec![2.0, -1.0],
            b2: vec![0.0, 1.0],
        };
        let x = SparseTensor3D::build(
            Shape::new(1, 1, 2, 2),
            2,
            [(VoxelCoord::new(0, 0, 1, 1), [3.0f32, 1.0])],
        )
        .unwrap();
        // squeeze = [3, 1]; hidden = relu(3 - 1 + 0.5) = 2.5
        // logits = [2 * 2.5, -2.5 + 1] = [5, -1.5]
        let g0 = 1.0 / (1.0 + (-5.0f32).exp());
        let g1 = 1.0 / (1.0 + (1.5f32).exp());
        let y = squeeze_excitation(&x, &se).unwrap();
        assert!((y.row(0)[0] - 3.0 * g0).abs() < 1e-6);
        assert!((y.row(0)[1] - g1).abs() < 1e-6);
    }

    #[test]
    fn ratio_must_divide() {
        assert!(SEParams::zeros(6, 4).is_err());
        assert_eq!(SEParams::hidden_for(128, 16).unwrap(), 8);
        assert_eq!(SEParams::hidden_for(256, 16).unwrap(), 16);
        assert_eq!(SEParams::hidden_for(32, 16).unwrap(), 4);
    }
}
