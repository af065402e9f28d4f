//! Subcommand implementations. Each validates its inputs before doing any
//! work and writes outputs only after every frame has been processed.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use sparsevox::boxes::BoundingBox;
use sparsevox::detect::{postprocess, write_detections, FrameDetections};
use sparsevox::eval::{compute_metrics, join_frames, read_ground_truth, format_ground_truth, GroundTruthFrame};
use sparsevox::forensics::{analyze, emit_report, ReportFormat};
use sparsevox::losses::format_loss_trace;
use sparsevox::model::{init_weights, load_checkpoint, save_checkpoint, ModelConfig, Trace};
use sparsevox::oracle::{memory_calculator, run_conv_battery, MemoryQuery};
use sparsevox::ops::ConvRegistry;
use sparsevox::synth::{generate, ObjectSpec, SceneSpec};
use sparsevox::voxel::{
    augment, prepare_windows, read_container, read_yolo_labels, voxelize_with, write_container, AugmentationRegistry,
    EncoderRegistry, EventStream, HotPixelScope, VoxelizerConfig,
};
use sparsevox::voxel::events::{read_events, write_events_bin, write_events_csv};
use sparsevox::SparseTensor3D;

use crate::config::RunConfig;
use crate::demo::run_demo;
use crate::error::{CliError, CliResult};
use crate::{BenchArgs, DemoArgs, EvalArgs, ForensicsArgs, GlobalArgs, InferArgs, InitArgs, ModelSize, OracleArgs, SynthArgs, VoxelizeArgs};

/// Bytes per active voxel coordinate in memory: four `i32`.
pub const COORD_BYTES: u64 = 16;

/// Parses `WxH` into `(H, W)`.
pub fn parse_resolution(s: &str) -> CliResult<(usize, usize)> {
    let bad = || CliError::Usage(format!("resolution '{s}' is not of the form WxH"));
    let (w, h) = s.trim().split_once(['x', 'X']).ok_or_else(bad)?;
    let w: usize = w.trim().parse().map_err(|_| bad())?;
    let h: usize = h.trim().parse().map_err(|_| bad())?;
    if w == 0 || h == 0 {
        return Err(bad());
    }
    Ok((h, w))
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> CliResult<Vec<T>> {
    s.split(',')
        .filter(|p| !p.trim().is_empty())
        .map(|p| p.trim().parse().map_err(|_| CliError::Usage(format!("bad {what} '{p}'"))))
        .collect()
}

fn require_file(path: &Path, what: &str) -> CliResult<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("{what} {} does not exist or is not a file", path.display())))
    }
}

fn create_dir(path: &Path) -> CliResult<()> {
    std::fs::create_dir_all(path).map_err(|e| sparsevox::Error::io(path, e).into())
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| sparsevox::Error::io(path, e).into())
}

fn emit(out: Option<&Path>, text: &str) -> CliResult<()> {
    match out {
        Some(p) => write_text(p, text),
        None => {
            use std::io::Write;
            let mut stdout = std::io::stdout().lock();
            match stdout.write_all(text.as_bytes()).and_then(|_| stdout.flush()) {
                // a closed pipe (`| head`) is the reader's choice, not a failure
                Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => {
                    Err(CliError::Usage(format!("cannot write to stdout: {e}")))
                }
                _ => Ok(()),
            }
        }
    }
}

/// `14900 -> "14,900"`.
pub fn thousands(n: u64) -> String {
    let digits = n.to_string();
    let mut out = String::with_capacity(digits.len() + digits.len() / 3);
    for (i, ch) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i) % 3 == 0 {
            out.push(',');
        }
        out.push(ch);
    }
    out
}

fn median(sorted: &[usize]) -> f64 {
    let n = sorted.len();
    match n {
        0 => 0.0,
        _ if n % 2 == 1 => sorted[n / 2] as f64,
        _ => (sorted[n / 2 - 1] + sorted[n / 2]) as f64 / 2.0,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VoxelStats {
    pub windows: usize,
    pub empty: bool,
    /// `[T, H, W]`.
    pub grid: [usize; 3],
    pub median_voxels: f64,
    pub min_voxels: usize,
    pub max_voxels: usize,
    /// Median active voxels as a percentage of `T H W`.
    pub occupancy_percent: f64,
    /// e.g. `0.23% (~14,900)`.
    pub summary: String,
    pub voxels_per_window: Vec<usize>,
}

impl VoxelStats {
    pub fn from_counts(counts: &[usize], grid: [usize; 3]) -> Self {
        let mut sorted = counts.to_vec();
        sorted.sort_unstable();
        let med = median(&sorted);
        let cells = (grid[0] * grid[1] * grid[2]) as f64;
        let occupancy_percent = if cells > 0.0 { 100.0 * med / cells } else { 0.0 };
        Self {
            windows: counts.len(),
            empty: counts.is_empty(),
            grid,
            median_voxels: med,
            min_voxels: sorted.first().copied().unwrap_or(0),
            max_voxels: sorted.last().copied().unwrap_or(0),
            occupancy_percent,
            summary: format!("{occupancy_percent:.2}% (~{})", thousands(med.round() as u64)),
            voxels_per_window: counts.to_vec(),
        }
    }
}

pub fn container_name(k: usize) -> String {
    format!("frame_{k:06}.svx")
}

/// Frame id from a `frame_NNNNNN.svx` style name.
pub fn frame_id_of(path: &Path) -> Option<u64> {
    let stem = path.file_stem()?.to_str()?;
    let digits: String = stem.chars().rev().take_while(|c| c.is_ascii_digit()).collect();
    if digits.is_empty() {
        return None;
    }
    digits.chars().rev().collect::<String>().parse().ok()
}

fn scale_box(b: &BoundingBox, sensor: (usize, usize), grid: (usize, usize)) -> BoundingBox {
    let sy = grid.0 as f64 / sensor.0 as f64;
    let sx = grid.1 as f64 / sensor.1 as f64;
    BoundingBox::new(b.x1 * sx, b.y1 * sy, b.x2 * sx, b.y2 * sy)
}

pub fn voxelize(a: &VoxelizeArgs, g: &GlobalArgs, cfg: &RunConfig) -> CliResult<()> {
    require_file(&a.events, "events file")?;
    if let Some(l) = &a.labels {
        if !l.is_dir() {
            return Err(CliError::Usage(format!("labels directory {} does not exist", l.display())));
        }
    }
    let sensor = parse_resolution(&a.sensor)?;
    let vcfg = &cfg.voxelizer;
    vcfg.validate()?;
    let encoders = EncoderRegistry::builtin();
    let encoder = match &a.encoder {
        Some(name) => encoders.get(name)?,
        None => encoders.for_channels(vcfg.channels)?,
    };
    let augs = AugmentationRegistry::builtin();
    let ops = a.augment.iter().map(|s| augs.parse(s)).collect::<sparsevox::Result<Vec<_>>>()?;

    let stream = read_events(&a.events, sensor)?;
    let windows = prepare_windows(&stream, vcfg)?;
    let grid = vcfg.grid(sensor);
    let mut rng = ChaCha8Rng::seed_from_u64(g.seed);
    let mut tensors: Vec<SparseTensor3D> = Vec::with_capacity(windows.len());
    for w in &windows {
        let mut t = voxelize_with(w, vcfg, encoder.as_ref())?;
        for op in &ops {
            t = augment(&t, op.as_ref(), &mut rng)?;
        }
        tensors.push(t);
    }
    if vcfg.hot_pixel_scope == HotPixelScope::Window {
        log::info!("hot-pixel filter applied per window");
    }

    create_dir(&a.out)?;
    for (k, t) in tensors.iter().enumerate() {
        write_container(t, &a.out.join(container_name(k)))?;
    }
    let counts: Vec<usize> = tensors.iter().map(|t| t.len()).collect();
    let stats = VoxelStats::from_counts(&counts, [vcfg.bins, grid.0, grid.1]);
    if stats.empty {
        log::warn!("{}: no events, no containers written", a.events.display());
    }
    write_text(&a.out.join("stats.json"), &(serde_json::to_string_pretty(&stats)? + "\n"))?;

    if let Some(dir) = &a.labels {
        let sequence_id = a
            .events
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let mut frames = Vec::with_capacity(windows.len());
        for (k, w) in windows.iter().enumerate() {
            let path = dir.join(format!("frame_{k:06}.txt"));
            let boxes = if path.is_file() {
                read_yolo_labels(&path, sensor)?
                    .iter()
                    .map(|b| scale_box(&b.bbox, sensor, grid))
                    .collect()
            } else {
                Vec::new()
            };
            frames.push(GroundTruthFrame {
                frame_id: k as u64,
                sequence_id: sequence_id.clone(),
                event_count: w.len() as u64,
                boxes,
            });
        }
        write_text(&a.out.join("gt.jsonl"), &format_ground_truth(&frames))?;
    }
    if g.trace {
        eprintln!("{} windows, median {} voxels, {}", stats.windows, stats.median_voxels, stats.summary);
    }
    Ok(())
}

fn container_inputs(input: &Path) -> CliResult<Vec<PathBuf>> {
    if input.is_file() {
        return Ok(vec![input.to_path_buf()]);
    }
    if !input.is_dir() {
        return Err(CliError::Usage(format!("input {} does not exist", input.display())));
    }
    let rd = std::fs::read_dir(input).map_err(|e| sparsevox::Error::io(input, e))?;
    let mut files: Vec<PathBuf> = rd
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "svx"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(CliError::Usage(format!("no .svx containers in {}", input.display())));
    }
    Ok(files)
}

pub fn infer(a: &InferArgs, g: &GlobalArgs, cfg: &RunConfig) -> CliResult<()> {
    require_file(&a.checkpoint, "checkpoint")?;
    let files = container_inputs(&a.input)?;
    let model = load_checkpoint(&a.checkpoint)?;
    let icfg = cfg.inference;
    icfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(g.threads)
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start {} worker threads: {e}", g.threads)))?;
    let run_one = |(i, path): (usize, &PathBuf)| -> CliResult<(FrameDetections, Trace)> {
        let x = read_container(path)?;
        let mut trace = Trace::default();
        let out = model.forward_traced(&x, Some(&mut trace))?;
        Ok((
            FrameDetections {
                frame_id: frame_id_of(path).unwrap_or(i as u64),
                detections: postprocess(&out, &icfg),
            },
            trace,
        ))
    };
    let results: Vec<CliResult<(FrameDetections, Trace)>> =
        pool.install(|| files.par_iter().enumerate().map(run_one).collect());
    let mut frames = Vec::with_capacity(results.len());
    for (path, r) in files.iter().zip(results) {
        let (f, trace) = r?;
        if g.trace {
            let stages: Vec<String> = trace.stages.iter().map(|(n, c)| format!("{n}={c}")).collect();
            eprintln!("{} frame {}: {}", path.display(), f.frame_id, stages.join(" "));
        }
        frames.push(f);
    }
    write_detections(&a.out, &frames)?;
    Ok(())
}

fn load_pair(pred: &Path, gt: &Path) -> CliResult<Vec<sparsevox::eval::FrameRecord>> {
    require_file(pred, "predictions file")?;
    require_file(gt, "ground-truth file")?;
    let dets = sparsevox::detect::read_detections(pred)?;
    let gts = read_ground_truth(gt)?;
    Ok(join_frames(&dets, &gts)?)
}

pub fn eval(a: &EvalArgs, _g: &GlobalArgs) -> CliResult<()> {
    let frames = load_pair(&a.pred, &a.gt)?;
    let metrics = compute_metrics(&frames)?;
    emit(a.out.as_deref(), &(serde_json::to_string_pretty(&metrics)? + "\n"))
}

pub fn forensics(a: &ForensicsArgs, g: &GlobalArgs, cfg: &RunConfig) -> CliResult<()> {
    let frames = load_pair(&a.pred, &a.gt)?;
    let report = analyze(&frames, &cfg.forensics)?;
    match &a.out_dir {
        Some(dir) => {
            create_dir(dir)?;
            write_text(&dir.join("report.json"), &emit_report(&report, ReportFormat::Json)?)?;
            write_text(&dir.join("report.md"), &emit_report(&report, ReportFormat::Markdown)?)
        }
        None => emit(None, &emit_report(&report, g.format.into())?),
    }
}

pub fn oracle_check(a: &OracleArgs, g: &GlobalArgs) -> CliResult<()> {
    if a.cases == 0 {
        log::warn!("oracle-check with zero cases checks nothing");
        eprintln!("warning: zero cases requested; the check passes vacuously");
    }
    let registry = ConvRegistry::builtin();
    let strategies = if a.modes.is_empty() {
        registry.iter().cloned().collect::<Vec<_>>()
    } else {
        a.modes.iter().map(|m| registry.get(m)).collect::<sparsevox::Result<Vec<_>>>()?
    };
    let started = Instant::now();
    let mut reports = Vec::with_capacity(strategies.len());
    for s in &strategies {
        reports.push(run_conv_battery(s.mode(), a.cases, g.seed, a.perturb, a.tolerance)?);
    }
    let elapsed = started.elapsed();
    let text = match g.format {
        crate::Format::Json => format!("{}\n", serde_json::to_string_pretty(&reports)?),
        crate::Format::Markdown => {
            let mut t = String::from("| mode | cases | max abs err | support mismatches | failures |\n|---|---|---|---|---|\n");
            for r in &reports {
                t.push_str(&format!(
                    "| {} | {} | {:.3e} | {} | {} |\n",
                    r.mode, r.cases, r.max_abs_err, r.support_mismatches, r.failures
                ));
            }
            t
        }
    };
    emit(None, &text)?;
    for r in &reports {
        eprintln!(
            "{:<12} {} cases  max abs err {:.3e}  support mismatches {}  failures {}  {}",
            r.mode,
            r.cases,
            r.max_abs_err,
            r.support_mismatches,
            r.failures,
            if r.passed() { "PASS" } else { "FAIL" }
        );
    }
    eprintln!("oracle battery finished in {:.2} s", elapsed.as_secs_f64());
    let failed: Vec<&str> = reports.iter().filter(|r| !r.passed()).map(|r| r.mode).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Verification(format!("sparse/dense mismatch in {}", failed.join(", "))))
    }
}

/// Sensor the bench events are rendered on.
pub const BENCH_SENSOR: (usize, usize) = (720, 1280);

/// A fixed multi-object scene whose expected event count is `events`:
/// half from four moving objects, half uniform background.
pub fn bench_scene(events: usize, seed: u64) -> SceneSpec {
    let window_us = 33_000;
    let per_sec = events as f64 / (window_us as f64 * 1e-6);
    let objects = [
        ([200.0, 150.0], [400.0, 0.0], [12.0, 8.0]),
        ([640.0, 360.0], [0.0, -300.0], [30.0, 20.0]),
        ([1000.0, 500.0], [-600.0, 200.0], [60.0, 40.0]),
        ([400.0, 600.0], [100.0, 100.0], [6.0, 6.0]),
    ]
    .into_iter()
    .map(|(center, velocity, size)| ObjectSpec {
        center,
        velocity,
        size,
        event_rate: per_sec / 8.0,
        polarity_mix: 0.5,
    })
    .collect();
    SceneSpec {
        height: BENCH_SENSOR.0,
        width: BENCH_SENSOR.1,
        window_us,
        windows: 1,
        objects,
        noise_rate: per_sec / 2.0,
        seed,
        sequence_id: "bench".into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub grid_w: usize,
    pub grid_h: usize,
    pub events: usize,
    pub active_voxels: usize,
    pub dense_bytes: u64,
    pub sparse_bytes: u64,
    pub ratio: f64,
    pub wall_ms: Option<f64>,
}

/// Voxelizes the same event set on each grid (`(H, W)` pairs).
pub fn bench_rows(stream: &EventStream, grids: &[(usize, usize)], base: &VoxelizerConfig) -> CliResult<Vec<BenchRow>> {
    let mut rows = Vec::with_capacity(grids.len());
    let encoders = EncoderRegistry::builtin();
    let encoder = encoders.for_channels(base.channels)?;
    for &(h, w) in grids {
        let vcfg = VoxelizerConfig {
            out_shape: Some((h, w)),
            hot_pixel_factor: 0.0,
            ..base.clone()
        };
        let started = Instant::now();
        let t = voxelize_with(stream, &vcfg, encoder.as_ref())?;
        let wall = started.elapsed().as_secs_f64() * 1e3;
        let est = memory_calculator(&MemoryQuery {
            t: vcfg.bins as u64,
            h: h as u64,
            w: w as u64,
            c: vcfg.channels as u64,
            bytes_per_scalar: 4,
            m: t.len() as u64,
            coord_bytes: COORD_BYTES,
            feat_bytes: 4,
            header_bytes: 0,
        });
        rows.push(BenchRow {
            grid_w: w,
            grid_h: h,
            events: stream.len(),
            active_voxels: t.len(),
            dense_bytes: est.dense_bytes,
            sparse_bytes: est.sparse_bytes,
            ratio: est.ratio,
            wall_ms: Some(wall),
        });
    }
    Ok(rows)
}

pub fn format_bench(rows: &[BenchRow], timing: bool) -> String {
    let mut s = String::from("grid_w,grid_h,events,active_voxels,dense_bytes,sparse_bytes,ratio");
    s.push_str(if timing { ",wall_ms\n" } else { "\n" });
    for r in rows {
        write!(
            s,
            "{},{},{},{},{},{},{:.3}",
            r.grid_w, r.grid_h, r.events, r.active_voxels, r.dense_bytes, r.sparse_bytes, r.ratio
        )
        .unwrap();
        if timing {
            write!(s, ",{:.3}", r.wall_ms.unwrap_or(f64::NAN)).unwrap();
        }
        s.push('\n');
    }
    s
}

pub fn bench(a: &BenchArgs, g: &GlobalArgs, cfg: &RunConfig) -> CliResult<()> {
    let grids = a
        .grids
        .split(',')
        .filter(|p| !p.trim().is_empty())
        .map(parse_resolution)
        .collect::<CliResult<Vec<_>>>()?;
    let counts: Vec<usize> = parse_list(&a.events, "event count")?;
    if grids.is_empty() || counts.is_empty() {
        return Err(CliError::Usage("bench needs at least one grid and one event count".into()));
    }
    cfg.voxelizer.validate()?;
    let mut rows = Vec::new();
    for n in counts {
        let scene = generate(&bench_scene(n, g.seed))?;
        rows.extend(bench_rows(&scene.stream, &grids, &cfg.voxelizer)?);
    }
    emit(a.out.as_deref(), &format_bench(&rows, a.timing))
}

pub fn demo_fit(a: &DemoArgs, g: &GlobalArgs, cfg: &RunConfig) -> CliResult<()> {
    if let Some(r) = a.max_ratio {
        if !(r > 0.0) {
            return Err(CliError::Usage(format!("--max-ratio {r} must be positive")));
        }
    }
    let fit = run_demo(g.seed, a.steps, a.lr, &cfg.loss)?;
    emit(a.out.as_deref(), &format_loss_trace(&fit.trace))?;
    let ratio = fit.last() / fit.initial();
    eprintln!(
        "demo-fit: {} steps, lr {}: loss {:.6} -> {:.6} (ratio {:.4})",
        a.steps,
        a.lr,
        fit.initial(),
        fit.last(),
        ratio
    );
    match a.max_ratio {
        Some(max) if !(ratio < max) => Err(CliError::Verification(format!(
            "final/initial loss ratio {ratio:.4} is not below {max}"
        ))),
        _ => Ok(()),
    }
}

pub fn synth(a: &SynthArgs) -> CliResult<()> {
    require_file(&a.scene, "scene file")?;
    let spec = SceneSpec::read(&a.scene)?;
    let scene = generate(&spec)?;
    create_dir(&a.out)?;
    if a.csv {
        write_events_csv(&a.out.join("events.csv"), &scene.stream)?;
    } else {
        write_events_bin(&a.out.join("events.bin"), &scene.stream)?;
    }
    write_text(&a.out.join("gt.jsonl"), &format_ground_truth(&scene.ground_truth()))
}

pub fn init_checkpoint(a: &InitArgs, g: &GlobalArgs) -> CliResult<()> {
    let cfg = match a.size {
        ModelSize::Full => ModelConfig::new(a.in_channels),
        ModelSize::Tiny => ModelConfig::tiny(a.in_channels),
    };
    let model = init_weights(&cfg, g.seed)?;
    save_checkpoint(&model, &a.out)?;
    Ok(())
}
