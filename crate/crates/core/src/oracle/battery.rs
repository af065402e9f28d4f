use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::dense::{dense_conv3d, dense_support, densify};
use crate::error::Result;
use crate::ops::{strided_conv3d, subm_conv3d, transpose_conv3d, transpose_conv3d_to, ConvParams};
use crate::rulebook::ConvMode;
use crate::tensor::{Shape, SparseTensor3D, VoxelCoord};

/// One randomized convolution instance.
#[derive(Debug, Clone)]
pub struct ConvCase {
    pub mode: ConvMode,
    pub input: SparseTensor3D,
    pub params: ConvParams,
    /// Explicit transposed-convolution output grid.
    pub target: Option<Shape>,
}

/// Grid up to `2 x 4 x 8 x 8`, at most 32 voxels, up to 4 channels in and
/// out, kernels up to `3 x 3 x 3`, strides up to 2.
pub fn random_conv_case(mode: ConvMode, rng: &mut dyn RngCore) -> Result<ConvCase> {
    let shape = Shape::new(
        rng.random_range(1..=2),
        rng.random_range(1..=4),
        rng.random_range(1..=8),
        rng.random_range(1..=8),
    );
    let cin = rng.random_range(1..=4);
    let cout = rng.random_range(1..=4);
    let kernel: [usize; 3] = std::array::from_fn(|_| match mode {
        ConvMode::Submanifold => [1, 3][rng.random_range(0..2)],
        _ => rng.random_range(1..=3),
    });
    let stride: [usize; 3] = match mode {
        ConvMode::Submanifold => [1, 1, 1],
        _ => std::array::from_fn(|_| rng.random_range(1..=2)),
    };
    let vol = shape.volume() as usize;
    let m = rng.random_range(0..=vol.min(32));
    let mut cells: Vec<usize> = (0..vol).collect();
    for i in 0..m {
        let j = rng.random_range(i..vol);
        cells.swap(i, j);
    }
    let pairs: Vec<(VoxelCoord, Vec<f32>)> = cells[..m]
        .iter()
        .map(|&lin| {
            let x = lin % shape.w;
            let y = (lin / shape.w) % shape.h;
            let t = (lin / (shape.w * shape.h)) % shape.t;
            let b = lin / (shape.w * shape.h * shape.t);
            let f = (0..cin).map(|_| rng.random_range(-1.0f32..1.0)).collect();
            (VoxelCoord::new(b as i32, t as i32, y as i32, x as i32), f)
        })
        .collect();
    let input = SparseTensor3D::build(shape, cin, pairs)?;
    let mut params = ConvParams::zeros(kernel, stride, cin, cout);
    params.weights.iter_mut().for_each(|w| *w = rng.random_range(-1.0f32..1.0));
    params.bias.iter_mut().for_each(|b| *b = rng.random_range(-1.0f32..1.0));
    let target = (mode == ConvMode::Transposed && rng.random_bool(0.5)).then(|| {
        let mut shrink = |n: usize, s: usize| (n * s - rng.random_range(0..s)).max(1);
        Shape::new(shape.batch, shrink(shape.t, stride[0]), shrink(shape.h, stride[1]), shrink(shape.w, stride[2]))
    });
    Ok(ConvCase {
        mode,
        input,
        params,
        target,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BatteryReport {
    pub mode: &'static str,
    pub cases: usize,
    pub tolerance: f64,
    pub max_abs_err: f64,
    /// Cases whose active output set differs from the definition.
    pub support_mismatches: usize,
    /// Cases failing either check.
    pub failures: usize,
}

impl BatteryReport {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

fn run_sparse(case: &ConvCase, params: &ConvParams) -> Result<SparseTensor3D> {
    match (case.mode, case.target) {
        (ConvMode::Submanifold, _) => subm_conv3d(&case.input, params),
        (ConvMode::Strided, _) => strided_conv3d(&case.input, params),
        (ConvMode::Transposed, None) => transpose_conv3d(&case.input, params),
        (ConvMode::Transposed, Some(t)) => transpose_conv3d_to(&case.input, params, t),
    }
}

/// Compares sparse convolution against the dense reference on `cases`
/// random instances. `perturb` is added to every sparse-side weight, to
/// demonstrate that the comparison detects errors.
pub fn run_conv_battery(mode: ConvMode, cases: usize, seed: u64, perturb: f32, tolerance: f64) -> Result<BatteryReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (mode as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    let mut report = BatteryReport {
        mode: mode.name(),
        cases,
        tolerance,
        max_abs_err: 0.0,
        support_mismatches: 0,
        failures: 0,
    };
    for _ in 0..cases {
        let case = random_conv_case(mode, &mut rng)?;
        let mut sparse_params = case.params.clone();
        sparse_params.weights.iter_mut().for_each(|w| *w += perturb);
        let y = run_sparse(&case, &sparse_params)?;
        let dense = dense_conv3d(&densify(&case.input)?, &case.params, mode, case.target)?;
        let want = dense_support(&case.input, &case.params, mode, case.target);
        let mut got: Vec<VoxelCoord> = y.coords().to_vec();
        got.sort();
        let support_ok = got == want;
        let mut err: f64 = 0.0;
        for (c, row) in y.rows() {
            match dense.at_coord(c) {
                Some(d) => {
                    for (a, b) in row.iter().zip(d) {
                        err = err.max((*a as f64 - b).abs());
                    }
                }
                None => err = f64::INFINITY,
            }
        }
        report.max_abs_err = report.max_abs_err.max(err);
        if !support_ok {
            report.support_mismatches += 1;
        }
        if !support_ok || !(err < tolerance) {
            report.failures += 1;
        }
    }
    Ok(report)
}
