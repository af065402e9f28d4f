//! Acceptance gate: one PASS/FAIL line per criterion, every tolerance pinned
//! below. Runs without the libtest harness so the lines always reach the
//! console; exits non-zero if any criterion fails.

use std::collections::BTreeMap;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sparsevox::boxes::{BoundingBox, Detection};
use sparsevox::detect::{format_detections, nms, parse_detections, FrameDetections};
use sparsevox::eval::{average_precision, match_frame, recall_at, FrameRecord};
use sparsevox::forensics::{analyze, decompose_fn, render_markdown, ForensicsConfig};
use sparsevox::losses::{assign_targets, focal_loss, total_loss_f64, AssignmentResult, LossWeights};
use sparsevox::model::{decode_checkpoint, encode_checkpoint, init_weights, ModelConfig};
use sparsevox::oracle::{ap_bruteforce, memory_calculator, nms_bruteforce, published_figures, run_conv_battery, MemoryQuery};
use sparsevox::rulebook::ConvMode;
use sparsevox::voxel::{decode_container, encode_container, voxelize_window, Event, EventStream, Polarity, VoxelizerConfig};
use sparsevox::{Shape, SparseTensor3D, VoxelCoord};
use sparsevox_cli::commands::{bench_rows, bench_scene, container_name};
use sparsevox_cli::demo::{run_demo, DEMO_LR, DEMO_STEPS};

// ─── Pinned tolerances and sizes ────────────────────────────────────────────

/// Criterion 1: instances per convolution mode.
const CONV_CASES: usize = 200;
/// Criterion 1: max |sparse - dense| at active positions.
const CONV_TOL: f64 = 1e-5;
/// Criterion 1: wall-clock budget for all three batteries.
const CONV_BUDGET: Duration = Duration::from_secs(10);
/// Criterion 1: weight perturbation that must be caught.
const CONV_PERTURB: f32 = 1e-2;

/// Criterion 2: random windows and their maximum size.
const VOXEL_WINDOWS: usize = 100;
const VOXEL_MAX_EVENTS: usize = 500;
/// Criterion 2: per-channel feature tolerance.
const VOXEL_TOL: f64 = 1e-6;

/// Criterion 3: instances, central-difference step, relative-error bound.
const GRAD_INSTANCES: usize = 50;
const GRAD_STEP: f64 = 1e-4;
const GRAD_REL_TOL: f64 = 1e-4;
/// Criterion 3: denominators below this count as zero gradients.
const GRAD_ABS_FLOOR: f64 = 1e-6;
/// Criterion 3: distance to a min/max switch, in units of the step, below
/// which a box coordinate counts as sitting on a non-smooth locus.
const GRAD_KINK_MARGIN: f64 = 4.0;
/// Criterion 3: focal-loss closed form tolerance.
const FOCAL_TOL: f64 = 1e-9;

/// Criterion 4: required final/initial total-loss ratio.
const DEMO_MAX_RATIO: f64 = 0.1;
const DEMO_SEED: u64 = 42;

/// Criterion 5.
const NMS_INSTANCES: usize = 200;
const NMS_MAX_N: usize = 300;
const AP_CORPORA: usize = 100;
const AP_TOL: f64 = 1e-10;

/// Criterion 6.
const MONO_CORPORA: usize = 50;
/// Slack allowed when checking that a metric does not increase.
const MONO_SLACK: f64 = 1e-12;

/// Criterion 7.
const PARTITION_CORPORA: usize = 50;

/// Criterion 8.
const DENSE_640_BYTES: u64 = 78_643_200;
/// Largest accepted relative gap between a published ratio and its
/// documented configuration.
const FIGURE_MAX_GAP: f64 = 0.03;

/// Criterion 9: bench event set and grids (`(H, W)`).
const BENCH_EVENTS: usize = 20_000;
const BENCH_GRIDS: [(usize, usize); 4] = [(180, 320), (360, 640), (640, 640), (720, 1280)];

/// Criterion 10.
const ROUND_TRIP_TENSORS: usize = 50;

const SEED: u64 = 42;

// ─── Harness ────────────────────────────────────────────────────────────────

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("sparse-dense convolution equivalence", c1_conv_equivalence),
        ("voxelizer formula oracle", c2_voxelizer),
        ("loss gradient check", c3_gradients),
        ("head-fit demo", c4_demo),
        ("NMS and AP oracle equivalence", c5_nms_ap),
        ("metric monotonicity in IoU threshold", c6_monotonicity),
        ("forensics FN partition", c7_partition),
        ("memory calculator consistency", c8_memory),
        ("voxel count resolution insensitivity", c9_bench),
        ("determinism and format round-trips", c10_round_trips),
    ];
    let started = Instant::now();
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let outcome = std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
        let secs = t.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {:>2} PASS  {name}: {detail} [{secs:.2}s]", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {name}: {detail} [{secs:.2}s]", i + 1);
            }
        }
    }
    println!(
        "acceptance: {} of {} criteria passed in {:.1}s",
        criteria.len() - failed,
        criteria.len(),
        started.elapsed().as_secs_f64()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}

// ─── 1 ──────────────────────────────────────────────────────────────────────

fn c1_conv_equivalence() -> Outcome {
    let started = Instant::now();
    let mut worst = 0.0f64;
    for mode in ConvMode::ALL {
        let r = run_conv_battery(mode, CONV_CASES, SEED, 0.0, CONV_TOL).map_err(|e| e.to_string())?;
        ensure(r.passed(), || {
            format!(
                "{}: {} failures, {} support mismatches, max err {:.3e}",
                r.mode, r.failures, r.support_mismatches, r.max_abs_err
            )
        })?;
        worst = worst.max(r.max_abs_err);
    }
    let elapsed = started.elapsed();
    ensure(elapsed < CONV_BUDGET, || format!("took {elapsed:?}, budget {CONV_BUDGET:?}"))?;
    for mode in ConvMode::ALL {
        let r = run_conv_battery(mode, 20, SEED, CONV_PERTURB, CONV_TOL).map_err(|e| e.to_string())?;
        ensure(!r.passed(), || format!("{}: perturbation of {CONV_PERTURB} went unnoticed", r.mode))?;
    }
    Ok(format!(
        "3 x {CONV_CASES} cases, max abs err {worst:.2e} < {CONV_TOL:e} in {:.2}s; perturbation detected",
        elapsed.as_secs_f64()
    ))
}

// ─── 2 ──────────────────────────────────────────────────────────────────────

/// Direct evaluation of the six-channel feature of one voxel from the raw
/// events that fall into it.
fn reference_feature(events: &[Event], t_max: u64, range: f64, lambda: f64) -> [f64; 6] {
    let mut f = [0.0; 6];
    for (s, pol) in [Polarity::Positive, Polarity::Negative].into_iter().enumerate() {
        let ts: Vec<f64> = events.iter().filter(|e| e.p == pol).map(|e| e.t as f64).collect();
        let n = ts.len() as f64;
        f[s] = (1.0 + n).ln();
        if ts.is_empty() {
            continue;
        }
        let last = ts.iter().cloned().fold(f64::MIN, f64::max);
        f[2 + s] = (-lambda * (t_max as f64 - last)).exp();
        let mean = ts.iter().sum::<f64>() / n;
        let var = ts.iter().map(|t| (t - mean) * (t - mean)).sum::<f64>() / n;
        f[4 + s] = var.sqrt() / range;
    }
    f
}

fn c2_voxelizer() -> Outcome {
    let cfg = VoxelizerConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut worst = 0.0f64;
    let mut voxels = 0usize;
    for w in 0..VOXEL_WINDOWS {
        let (h, wd) = (rng.random_range(1..=16), rng.random_range(1..=16));
        let n = rng.random_range(0..=VOXEL_MAX_EVENTS);
        // narrow time spans force many same-voxel collisions
        let span = [1u64, 100, 5_000, cfg.window_us][rng.random_range(0..4)];
        let mut ev: Vec<Event> = (0..n)
            .map(|_| {
                let p = if rng.random_bool(0.5) { Polarity::Positive } else { Polarity::Negative };
                Event::new(rng.random_range(0..span), rng.random_range(0..wd) as u16, rng.random_range(0..h) as u16, p)
            })
            .collect();
        ev.sort_by_key(|e| e.t);
        let stream = EventStream::new((h, wd), ev.clone()).map_err(|e| e.to_string())?;
        let t = voxelize_window(&stream, &cfg).map_err(|e| e.to_string())?;
        // brute force: every distinct (bin, y, x)
        let mut cells: BTreeMap<(i32, i32, i32), Vec<Event>> = BTreeMap::new();
        for e in &ev {
            let bin = ((e.t as u128 * cfg.bins as u128 / cfg.window_us as u128) as usize).min(cfg.bins - 1);
            cells.entry((bin as i32, e.y as i32, e.x as i32)).or_default().push(*e);
        }
        ensure(t.len() == cells.len(), || format!("window {w}: {} voxels, expected {}", t.len(), cells.len()))?;
        if ev.is_empty() {
            continue;
        }
        let t_max = ev.iter().map(|e| e.t).max().unwrap();
        let t_min = ev.iter().map(|e| e.t).min().unwrap();
        let range = ((t_max - t_min) as f64).max(1.0);
        let lambda = cfg.lambda_scale / range;
        for ((bin, y, x), members) in &cells {
            let i = t
                .lookup(&VoxelCoord::new(0, *bin, *y, *x))
                .ok_or_else(|| format!("window {w}: voxel ({bin},{y},{x}) missing"))?;
            let want = reference_feature(members, t_max, range, lambda);
            for (a, b) in t.row(i).iter().zip(want) {
                worst = worst.max((*a as f64 - b).abs());
            }
            voxels += 1;
        }
    }
    ensure(worst < VOXEL_TOL, || format!("max feature error {worst:.3e} >= {VOXEL_TOL:e}"))?;
    let single = EventStream::new((4, 4), vec![Event::new(123, 1, 2, Polarity::Positive)]).map_err(|e| e.to_string())?;
    let t = voxelize_window(&single, &cfg).map_err(|e| e.to_string())?;
    let expect = [2f32.ln(), 0.0, 1.0, 0.0, 0.0, 0.0];
    ensure(t.len() == 1 && t.row(0) == expect, || format!("single event gave {:?}", t.row(0)))?;
    Ok(format!(
        "{VOXEL_WINDOWS} windows, {voxels} voxels, max err {worst:.2e} < {VOXEL_TOL:e}; single event = [ln 2, 0, 1, 0, 0, 0]"
    ))
}

// ─── 3 ──────────────────────────────────────────────────────────────────────

struct GradInstance {
    positions: Vec<VoxelCoord>,
    stride: usize,
    cls: Vec<f64>,
    bx: Vec<[f64; 4]>,
    ctr: Vec<f64>,
    asg: AssignmentResult,
    weights: LossWeights,
}

fn grad_instance(rng: &mut ChaCha8Rng) -> GradInstance {
    let stride = 4;
    let (gh, gw) = (12, 12);
    let n = rng.random_range(4..=40);
    let mut taken = std::collections::BTreeSet::new();
    while taken.len() < n {
        taken.insert((rng.random_range(0..gh), rng.random_range(0..gw)));
    }
    let positions: Vec<VoxelCoord> = taken.into_iter().map(|(y, x)| VoxelCoord::new(0, 0, y, x)).collect();
    let gts: Vec<BoundingBox> = (0..rng.random_range(1..=3))
        .map(|_| {
            let (x, y) = (rng.random_range(0.0..40.0), rng.random_range(0.0..40.0));
            BoundingBox::new(x, y, x + rng.random_range(4.0..20.0), y + rng.random_range(4.0..20.0))
        })
        .collect();
    let asg = assign_targets(&positions, stride, &gts);
    let weights = LossWeights {
        cls: rng.random_range(0.5..2.0),
        reg: rng.random_range(0.5..3.0),
        ctr: rng.random_range(0.5..2.0),
        ..LossWeights::default()
    };
    GradInstance {
        cls: (0..n).map(|_| rng.random_range(-4.0..4.0)).collect(),
        bx: (0..n).map(|_| std::array::from_fn(|_| rng.random_range(-0.5..2.5))).collect(),
        ctr: (0..n).map(|_| rng.random_range(-3.0..3.0)).collect(),
        positions,
        stride,
        asg,
        weights,
    }
}

impl GradInstance {
    fn loss(&self, cls: &[f64], bx: &[[f64; 4]], ctr: &[f64]) -> f64 {
        total_loss_f64(&self.positions, self.stride, cls, bx, ctr, &self.asg, &self.weights).total
    }

    /// Position `i`'s box sits within the finite-difference reach of a
    /// min/max switch of the GIoU terms.
    fn near_kink(&self, i: usize) -> bool {
        let Some(g) = self.asg.gt_boxes[i] else { return false };
        let s = self.stride as f64;
        let (cx, cy) = (self.positions[i].x as f64 * s + s / 2.0, self.positions[i].y as f64 * s + s / 2.0);
        let e = self.bx[i].map(f64::exp);
        let p = [cx - e[0], cy - e[1], cx + e[2], cy + e[3]];
        let g = g.to_array();
        let reach = GRAD_KINK_MARGIN * GRAD_STEP * e.iter().cloned().fold(0.0, f64::max);
        // corner-vs-corner switches of the intersection and enclosing box
        let pairs = [(p[0], g[0]), (p[1], g[1]), (p[2], g[2]), (p[3], g[3]), (p[2], g[0]), (p[0], g[2]), (p[3], g[1]), (p[1], g[3])];
        pairs.iter().any(|(a, b)| (a - b).abs() < reach)
    }
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(GRAD_ABS_FLOOR)
}

fn c3_gradients() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let (mut worst, mut checked, mut skipped) = (0.0f64, 0usize, 0usize);
    let mut with_pos = 0;
    for k in 0..GRAD_INSTANCES {
        let inst = grad_instance(&mut rng);
        let n = inst.positions.len();
        if inst.asg.num_positives() > 0 {
            with_pos += 1;
        }
        let a = total_loss_f64(&inst.positions, inst.stride, &inst.cls, &inst.bx, &inst.ctr, &inst.asg, &inst.weights);
        let h = GRAD_STEP;
        let mut record = |analytic: f64, numeric: f64, what: &str| -> Result<(), String> {
            let e = rel_err(analytic, numeric);
            worst = worst.max(e);
            checked += 1;
            ensure(e < GRAD_REL_TOL, || format!("instance {k} {what}: analytic {analytic:.9e} numeric {numeric:.9e}"))
        };
        for i in 0..n {
            let mut c = inst.cls.clone();
            c[i] += h;
            let up = inst.loss(&c, &inst.bx, &inst.ctr);
            c[i] -= 2.0 * h;
            let dn = inst.loss(&c, &inst.bx, &inst.ctr);
            record(a.grad_cls[i], (up - dn) / (2.0 * h), "cls")?;

            let mut z = inst.ctr.clone();
            z[i] += h;
            let up = inst.loss(&inst.cls, &inst.bx, &z);
            z[i] -= 2.0 * h;
            let dn = inst.loss(&inst.cls, &inst.bx, &z);
            record(a.grad_ctr[i], (up - dn) / (2.0 * h), "ctr")?;

            if inst.near_kink(i) {
                skipped += 1;
                continue;
            }
            for j in 0..4 {
                let mut b = inst.bx.clone();
                b[i][j] += h;
                let up = inst.loss(&inst.cls, &b, &inst.ctr);
                b[i][j] -= 2.0 * h;
                let dn = inst.loss(&inst.cls, &b, &inst.ctr);
                record(a.grad_box[i][j], (up - dn) / (2.0 * h), "box")?;
            }
        }
    }
    ensure(with_pos >= GRAD_INSTANCES / 2, || format!("only {with_pos} instances have positives"))?;
    let (l, _) = focal_loss(&[0.0], &[true], 0.25, 2.0);
    let closed = 0.25 * 0.25 * 2f64.ln();
    ensure((l - closed).abs() < FOCAL_TOL, || format!("focal(p=0.5) = {l}, expected {closed}"))?;
    Ok(format!(
        "{GRAD_INSTANCES} instances, {checked} partials, worst rel err {worst:.2e} < {GRAD_REL_TOL:e} ({skipped} boxes on kinks skipped); focal closed form to {:.1e}",
        (l - closed).abs()
    ))
}

// ─── 4 ──────────────────────────────────────────────────────────────────────

fn c4_demo() -> Outcome {
    let fit = run_demo(DEMO_SEED, DEMO_STEPS, DEMO_LR, &LossWeights::default()).map_err(|e| e.to_string())?;
    ensure(fit.trace.len() == DEMO_STEPS + 1, || format!("{} trace rows", fit.trace.len()))?;
    let ratio = fit.last() / fit.initial();
    ensure(ratio < DEMO_MAX_RATIO, || {
        format!("loss {:.4} -> {:.4}, ratio {ratio:.4} >= {DEMO_MAX_RATIO}", fit.initial(), fit.last())
    })?;
    Ok(format!(
        "seed {DEMO_SEED}, {DEMO_STEPS} steps at lr {DEMO_LR}: {:.4} -> {:.4}, ratio {ratio:.4} < {DEMO_MAX_RATIO}",
        fit.initial(),
        fit.last()
    ))
}

// ─── 5, 6, 7: random corpora ────────────────────────────────────────────────

fn random_box(rng: &mut ChaCha8Rng, extent: f64) -> BoundingBox {
    let (x, y) = (rng.random_range(0.0..extent), rng.random_range(0.0..extent));
    BoundingBox::new(x, y, x + rng.random_range(2.0..40.0), y + rng.random_range(2.0..40.0))
}

fn jitter(rng: &mut ChaCha8Rng, b: &BoundingBox, amount: f64) -> BoundingBox {
    let mut j = || rng.random_range(-amount..amount);
    let (x1, y1) = (b.x1 + j(), b.y1 + j());
    let (x2, y2) = (b.x2 + j(), b.y2 + j());
    BoundingBox::new(x1.min(x2 - 0.5), y1.min(y2 - 0.5), x2, y2)
}

/// Frames mixing localized, loosely localized and spurious detections.
/// `quantize` rounds scores to a coarse grid to create ties.
fn random_corpus(rng: &mut ChaCha8Rng, quantize: bool) -> Vec<FrameRecord> {
    let frames = rng.random_range(1..=12);
    (0..frames)
        .map(|f| {
            let gts: Vec<BoundingBox> = (0..rng.random_range(0..=6)).map(|_| random_box(rng, 200.0)).collect();
            let mut dets = Vec::new();
            for g in &gts {
                if rng.random_bool(0.8) {
                    let amount = [0.5, 3.0, 8.0][rng.random_range(0..3)];
                    dets.push(jitter(rng, g, amount));
                }
            }
            for _ in 0..rng.random_range(0..=5) {
                dets.push(random_box(rng, 200.0));
            }
            let detections = dets
                .into_iter()
                .map(|bbox| {
                    let s: f64 = rng.random_range(0.001..1.0);
                    Detection {
                        bbox,
                        score: if quantize { (s * 20.0).ceil() / 20.0 } else { s },
                        class: 0,
                    }
                })
                .collect();
            FrameRecord {
                frame_id: f as u64,
                sequence_id: format!("seq{}", f % 3),
                event_count: rng.random_range(0..60_000),
                detections,
                ground_truths: gts,
            }
        })
        .collect()
}

fn with_gt(rng: &mut ChaCha8Rng, quantize: bool) -> Vec<FrameRecord> {
    loop {
        let c = random_corpus(rng, quantize);
        if c.iter().any(|f| !f.ground_truths.is_empty()) {
            return c;
        }
    }
}

fn c5_nms_ap() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut kept_total = 0;
    for k in 0..NMS_INSTANCES {
        let n = rng.random_range(0..=NMS_MAX_N);
        let clusters: Vec<BoundingBox> = (0..rng.random_range(1..=20)).map(|_| random_box(&mut rng, 300.0)).collect();
        let tie = rng.random_bool(0.3);
        let dets: Vec<Detection> = (0..n)
            .map(|_| {
                let c = clusters[rng.random_range(0..clusters.len())];
                let s: f64 = rng.random_range(0.0..1.0);
                Detection {
                    bbox: jitter(&mut rng, &c, 6.0),
                    score: if tie { (s * 10.0).floor() / 10.0 } else { s },
                    class: 0,
                }
            })
            .collect();
        let thr = rng.random_range(0.1..0.9);
        let cap = rng.random_range(1..=400);
        let fast = nms(&dets, thr, cap);
        let slow = nms_bruteforce(&dets, thr, cap);
        ensure(fast == slow, || format!("instance {k}: {} vs {} kept", fast.len(), slow.len()))?;
        kept_total += fast.len();
    }
    let mut worst = 0.0f64;
    for k in 0..AP_CORPORA {
        let corpus = with_gt(&mut rng, false);
        for thr in [0.5, 0.75] {
            let a = average_precision(&corpus, thr).map_err(|e| e.to_string())?;
            let b = ap_bruteforce(&corpus, thr).map_err(|e| e.to_string())?;
            worst = worst.max((a - b).abs());
            ensure((a - b).abs() <= AP_TOL, || format!("corpus {k} at IoU {thr}: AP {a} vs brute force {b}"))?;
        }
    }
    Ok(format!(
        "NMS identical on {NMS_INSTANCES} instances ({kept_total} kept); AP on {AP_CORPORA} corpora, max diff {worst:.1e} <= {AP_TOL:e}"
    ))
}

fn c6_monotonicity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 6);
    let thresholds: Vec<f64> = (0..=18).map(|k| 0.05 + 0.05 * k as f64).collect();
    for k in 0..MONO_CORPORA {
        let corpus = with_gt(&mut rng, k % 2 == 0);
        let mut prev = (f64::INFINITY, f64::INFINITY);
        for &t in &thresholds {
            let ap = average_precision(&corpus, t).map_err(|e| e.to_string())?;
            let r = recall_at(&corpus, t).map_err(|e| e.to_string())?;
            ensure(ap <= prev.0 + MONO_SLACK, || format!("corpus {k}: AP rises to {ap} at IoU {t:.2}"))?;
            ensure(r <= prev.1 + MONO_SLACK, || format!("corpus {k}: recall rises to {r} at IoU {t:.2}"))?;
            prev = (ap, r);
        }
    }
    Ok(format!("{MONO_CORPORA} corpora, AP and recall non-increasing over IoU 0.05..0.95"))
}

fn c7_partition() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 7);
    for k in 0..PARTITION_CORPORA {
        let corpus = random_corpus(&mut rng, k % 2 == 1);
        let matches: Vec<_> = corpus.iter().map(|f| match_frame(&f.detections, &f.ground_truths, 0.5)).collect();
        let b = decompose_fn(&matches);
        let direct: usize = matches.iter().map(|m| m.fn_count()).sum();
        ensure(b.fn_near_miss + b.fn_complete_miss == b.fn_total && b.fn_total == direct, || {
            format!("corpus {k}: {} + {} vs {} (direct {direct})", b.fn_near_miss, b.fn_complete_miss, b.fn_total)
        })?;
        let hist: usize = b.histogram.iter().map(|h| h.count).sum();
        ensure(hist == b.fn_total, || format!("corpus {k}: histogram holds {hist} of {}", b.fn_total))?;
    }
    // 100 isolated objects: 71 found only loosely (IoU ~ 1/3), 29 with no overlap
    let frames: Vec<FrameRecord> = (0..100)
        .map(|i| {
            let g = BoundingBox::new(10.0, 10.0, 30.0, 30.0);
            let d = if i < 71 {
                BoundingBox::new(20.0, 10.0, 40.0, 30.0)
            } else {
                BoundingBox::new(100.0, 100.0, 120.0, 120.0)
            };
            FrameRecord {
                frame_id: i,
                sequence_id: "constructed".into(),
                event_count: 1_000,
                detections: vec![Detection { bbox: d, score: 0.9, class: 0 }],
                ground_truths: vec![g],
            }
        })
        .collect();
    let report = analyze(&frames, &ForensicsConfig::default()).map_err(|e| e.to_string())?;
    ensure(
        (report.fn_total, report.fn_near_miss, report.fn_complete_miss) == (100, 71, 29),
        || format!("reported {}/{} of {}", report.fn_near_miss, report.fn_complete_miss, report.fn_total),
    )?;
    let md = render_markdown(&report);
    ensure(md.contains("| 71 | 71.0% |") && md.contains("| 29 | 29.0% |"), || "markdown lacks the 71/29 rows".into())?;
    Ok(format!("{PARTITION_CORPORA} corpora partition exactly; constructed corpus reported as 71/29"))
}

// ─── 8 ──────────────────────────────────────────────────────────────────────

fn c8_memory() -> Outcome {
    let base = MemoryQuery {
        t: 16,
        h: 640,
        w: 640,
        c: 3,
        bytes_per_scalar: 4,
        m: 14_900,
        coord_bytes: 8,
        feat_bytes: 4,
        header_bytes: 0,
    };
    let e = memory_calculator(&base);
    ensure(e.dense_bytes == DENSE_640_BYTES, || format!("dense bytes {}", e.dense_bytes))?;
    ensure(e.ratio == e.dense_bytes as f64 / e.sparse_bytes as f64, || "ratio is not dense/sparse".into())?;
    let doubled = memory_calculator(&MemoryQuery { m: 2 * base.m, ..base });
    ensure(doubled.ratio == e.ratio / 2.0, || format!("ratio {} -> {} on doubling M", e.ratio, doubled.ratio))?;
    let mut lines = Vec::new();
    for f in published_figures() {
        ensure(!f.configuration.is_empty(), || format!("{}: no configuration recorded", f.label))?;
        ensure(f.relative_gap < FIGURE_MAX_GAP, || {
            format!("{}: computed {:.1}x vs claimed {}x, gap {:.2}%", f.label, f.estimate.ratio, f.claimed_ratio, 100.0 * f.relative_gap)
        })?;
        lines.push(format!("{} -> {:.1}x ({:.1}% gap)", f.label, f.estimate.ratio, 100.0 * f.relative_gap));
    }
    Ok(format!("dense = {DENSE_640_BYTES} B, ratio exact and halves with 2M; {}", lines.join("; ")))
}

// ─── 9 ──────────────────────────────────────────────────────────────────────

fn c9_bench() -> Outcome {
    let scene = sparsevox::synth::generate(&bench_scene(BENCH_EVENTS, SEED)).map_err(|e| e.to_string())?;
    let rows = bench_rows(&scene.stream, &BENCH_GRIDS, &VoxelizerConfig::default()).map_err(|e| e.to_string())?;
    let per_cell = rows[0].dense_bytes as f64 / (rows[0].grid_h * rows[0].grid_w) as f64;
    for r in &rows {
        ensure(r.active_voxels <= r.events, || format!("{}x{}: {} voxels > {} events", r.grid_w, r.grid_h, r.active_voxels, r.events))?;
        let pc = r.dense_bytes as f64 / (r.grid_h * r.grid_w) as f64;
        ensure(pc == per_cell, || format!("{}x{}: dense bytes not proportional to H*W", r.grid_w, r.grid_h))?;
    }
    let at = |h, w| rows.iter().find(|r| (r.grid_h, r.grid_w) == (h, w)).unwrap();
    let (lo, hi) = (at(640, 640), at(720, 1280));
    ensure(hi.active_voxels >= lo.active_voxels, || format!("{} voxels at 1280x720 < {} at 640x640", hi.active_voxels, lo.active_voxels))?;
    ensure(hi.dense_bytes * 4 == lo.dense_bytes * 9, || "dense bytes do not grow 2.25x".into())?;
    Ok(format!(
        "{} events; voxels {}; 640^2 -> 1280x720 voxel growth {:.1}% while dense bytes grow 2.25x",
        lo.events,
        rows.iter().map(|r| format!("{}x{}={}", r.grid_w, r.grid_h, r.active_voxels)).collect::<Vec<_>>().join(", "),
        100.0 * (hi.active_voxels as f64 / lo.active_voxels as f64 - 1.0)
    ))
}

// ─── 10 ─────────────────────────────────────────────────────────────────────

fn random_tensor(rng: &mut ChaCha8Rng) -> SparseTensor3D {
    let shape = Shape::new(rng.random_range(1..=2), rng.random_range(1..=16), rng.random_range(1..=40), rng.random_range(1..=40));
    let c = rng.random_range(1..=6);
    let n = rng.random_range(0..=200);
    let pairs: BTreeMap<VoxelCoord, Vec<f32>> = (0..n)
        .map(|_| {
            let v = VoxelCoord::new(
                rng.random_range(0..shape.batch as i32),
                rng.random_range(0..shape.t as i32),
                rng.random_range(0..shape.h as i32),
                rng.random_range(0..shape.w as i32),
            );
            (v, (0..c).map(|_| f32::from_bits(rng.random::<u32>() & 0xbfff_ffff)).collect())
        })
        .collect();
    SparseTensor3D::build(shape, c, pairs).expect("valid random tensor")
}

fn sparsevox_bin(args: &[&std::ffi::OsStr]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_sparsevox"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    ensure(out.status.success(), || format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr)))
}

fn c10_round_trips() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    for k in 0..ROUND_TRIP_TENSORS {
        let t = random_tensor(&mut rng);
        let bytes = encode_container(&t);
        let back = decode_container(&bytes).map_err(|e| e.to_string())?;
        ensure(encode_container(&back) == bytes, || format!("container {k} not bitwise stable"))?;
        ensure(
            back.coords() == t.coords() && back.features().iter().zip(t.features()).all(|(a, b)| a.to_bits() == b.to_bits()),
            || format!("container {k} changed on decode"),
        )?;
    }
    let model = init_weights(&ModelConfig::tiny(6), SEED).map_err(|e| e.to_string())?;
    let ck = encode_checkpoint(&model);
    let back = decode_checkpoint(&ck).map_err(|e| e.to_string())?;
    ensure(encode_checkpoint(&back) == ck, || "checkpoint not bitwise stable".into())?;

    let frames: Vec<FrameDetections> = (0..20)
        .map(|f| FrameDetections {
            frame_id: f,
            detections: (0..rng.random_range(0..5))
                .map(|_| Detection {
                    bbox: random_box(&mut rng, 500.0),
                    score: rng.random_range(0.0..1.0),
                    class: 0,
                })
                .collect(),
        })
        .collect();
    let text = format_detections(&frames);
    let reparsed = parse_detections(&text).map_err(|e| e.to_string())?;
    ensure(format_detections(&reparsed) == text, || "detections text not stable".into())?;

    // end-to-end inference determinism across runs and thread counts
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let ckpt = dir.path().join("tiny.svwt");
    std::fs::write(&ckpt, &ck).map_err(|e| e.to_string())?;
    let vox = dir.path().join("vox");
    std::fs::create_dir(&vox).map_err(|e| e.to_string())?;
    let spec = sparsevox::synth::SceneSpec {
        height: 64,
        width: 96,
        windows: 4,
        noise_rate: 3_000.0,
        seed: SEED,
        ..bench_scene(0, SEED)
    };
    let spec = sparsevox::synth::SceneSpec {
        objects: vec![sparsevox::synth::ObjectSpec {
            center: [30.0, 30.0],
            velocity: [200.0, 50.0],
            size: [10.0, 8.0],
            event_rate: 20_000.0,
            polarity_mix: 0.5,
        }],
        ..spec
    };
    let scene = sparsevox::synth::generate(&spec).map_err(|e| e.to_string())?;
    let tensors = sparsevox::voxel::voxelize_stream(&scene.stream, &VoxelizerConfig::default()).map_err(|e| e.to_string())?;
    for (k, t) in tensors.iter().enumerate() {
        sparsevox::voxel::write_container(t, &vox.join(container_name(k))).map_err(|e| e.to_string())?;
    }
    let mut outputs = Vec::new();
    for (run, threads) in [(0, "1"), (1, "1"), (2, "4")] {
        let out = dir.path().join(format!("dets{run}.jsonl"));
        sparsevox_bin(&[
            "--threads".as_ref(),
            threads.as_ref(),
            "--score-threshold".as_ref(),
            "0.001".as_ref(),
            "infer".as_ref(),
            vox.as_os_str(),
            "--checkpoint".as_ref(),
            ckpt.as_os_str(),
            "--out".as_ref(),
            out.as_os_str(),
        ])?;
        outputs.push(std::fs::read(&out).map_err(|e| e.to_string())?);
    }
    ensure(outputs.windows(2).all(|w| w[0] == w[1]), || "infer output differs between runs".into())?;
    let dets = parse_detections(&String::from_utf8_lossy(&outputs[0])).map_err(|e| e.to_string())?;
    let n: usize = dets.iter().map(|f| f.detections.len()).sum();
    ensure(dets.len() == tensors.len() && n > 0, || format!("{} frames, {n} detections", dets.len()))?;
    Ok(format!(
        "{ROUND_TRIP_TENSORS} containers, checkpoint ({} B) and detections bitwise stable; infer identical over 3 runs (1/1/4 threads, {n} detections)",
        ck.len()
    ))
}
