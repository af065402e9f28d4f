//! The fixed single-object frame used by `demo-fit`: a synthetic scene whose
//! occupied stride-4 cells carry seeded random features, standing in for the
//! output of a frozen backbone.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sparsevox::boxes::BoundingBox;
use sparsevox::losses::{fit_head_demo, DemoFit, LossWeights};
use sparsevox::model::{init_weights, Head, ModelConfig};
use sparsevox::synth::{generate, ObjectSpec, SceneSpec};
use sparsevox::{Result, VoxelCoord};

pub const DEMO_STEPS: usize = 500;
pub const DEMO_LR: f64 = 5e-4;

/// One static 4 x 4 px object centred on the stride-4 cell centre (66, 66),
/// so exactly one head position is positive and its centerness target is 1.
pub fn demo_scene(seed: u64) -> SceneSpec {
    SceneSpec {
        height: 128,
        width: 128,
        window_us: 33_000,
        windows: 1,
        objects: vec![ObjectSpec {
            center: [66.0, 66.0],
            velocity: [0.0, 0.0],
            size: [4.0, 4.0],
            event_rate: 12_000.0,
            polarity_mix: 0.5,
        }],
        noise_rate: 0.0,
        seed,
        sequence_id: "demo".into(),
    }
}

#[derive(Debug, Clone)]
pub struct DemoFrame {
    pub head: Head,
    pub positions: Vec<VoxelCoord>,
    /// Row-major `positions.len() x head_in_dim`.
    pub features: Vec<f32>,
    pub gts: Vec<BoundingBox>,
}

pub fn demo_frame(seed: u64) -> Result<DemoFrame> {
    let scene = generate(&demo_scene(seed))?;
    let stride = 4;
    let cells: BTreeSet<VoxelCoord> = scene
        .stream
        .events
        .iter()
        .map(|e| VoxelCoord::new(0, 0, e.y as i32 / stride, e.x as i32 / stride))
        .collect();
    let positions: Vec<VoxelCoord> = cells.into_iter().collect();
    let model = init_weights(&ModelConfig::new(6), seed)?;
    let d = model.head.in_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    let features = (0..positions.len() * d).map(|_| rng.random_range(-1.0f32..1.0)).collect();
    Ok(DemoFrame {
        head: model.head,
        positions,
        features,
        gts: scene.windows[0].boxes.clone(),
    })
}

pub fn run_demo(seed: u64, steps: usize, lr: f64, weights: &LossWeights) -> Result<DemoFit> {
    let f = demo_frame(seed)?;
    fit_head_demo(&f.head, &f.features, &f.positions, &f.gts, steps, lr, weights)
}
