//! Error forensics over an evaluated corpus: false-negative decomposition,
//! confidence separation, false-positive classes, binned recall, IoU
//! sensitivity, and JSON / markdown report emission.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::boxes::{iou, Detection};
use crate::error::{Error, Result};
use crate::eval::{average_precision, match_frame, recall_at, sensitivity_thresholds, FrameRecord, MatchResult};

pub const REPORT_SCHEMA_VERSION: u32 = 1;
pub const NEAR_MISS_BINS: usize = 5;
pub const CONFIDENCE_BINS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForensicsConfig {
    /// Detections must score strictly above this to be considered.
    pub score_floor: f64,
    pub match_iou: f64,
    pub duplicate_iou: f64,
    pub small_px: f64,
    pub large_px: f64,
}

impl Default for ForensicsConfig {
    fn default() -> Self {
        Self {
            score_floor: 0.05,
            match_iou: 0.5,
            duplicate_iou: 0.5,
            small_px: 20.0,
            large_px: 50.0,
        }
    }
}

/// Default event-count bin edges; the last bin is open-ended.
pub const DENSITY_EDGES: [u64; 6] = [0, 2_000, 5_000, 10_000, 20_000, 50_000];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

/// Index of `v` among `n` equal bins over `[0, width * n]`, half-open with
/// the final bin closed.
fn bin_index(v: f64, width: f64, n: usize) -> usize {
    ((v / width).floor().max(0.0) as usize).min(n - 1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FnBreakdown {
    pub fn_total: usize,
    pub fn_near_miss: usize,
    pub fn_complete_miss: usize,
    /// Best-overlap IoU of each FN over `[0,0.1), ..., [0.4,0.5]`.
    pub histogram: Vec<HistBin>,
}

/// Splits unmatched GTs by their best overlap against every detection.
pub fn decompose_fn(matches: &[MatchResult]) -> FnBreakdown {
    let width = 0.1;
    let mut histogram: Vec<HistBin> = (0..NEAR_MISS_BINS)
        .map(|k| HistBin {
            lo: k as f64 / 10.0,
            hi: (k + 1) as f64 / 10.0,
            count: 0,
        })
        .collect();
    let (mut near, mut complete) = (0, 0);
    for m in matches {
        for (g, &matched) in m.gt_matched.iter().enumerate() {
            if matched {
                continue;
            }
            let best = m.gt_best_iou[g];
            if best > 0.0 {
                near += 1;
            } else {
                complete += 1;
            }
            histogram[bin_index(best, width, NEAR_MISS_BINS)].count += 1;
        }
    }
    FnBreakdown {
        fn_total: near + complete,
        fn_near_miss: near,
        fn_complete_miss: complete,
        histogram,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceStats {
    pub count: usize,
    /// `None` when there are no samples.
    pub mean: Option<f64>,
    pub std: Option<f64>,
    pub empty: bool,
    /// 20 bins over `[0,1]`, scaled so the tallest bin is 1.
    pub histogram: Vec<f64>,
}

impl ConfidenceStats {
    pub fn from_scores(scores: &[f64]) -> Self {
        let mut counts = vec![0usize; CONFIDENCE_BINS];
        for &s in scores {
            counts[bin_index(s, 1.0 / CONFIDENCE_BINS as f64, CONFIDENCE_BINS)] += 1;
        }
        let peak = counts.iter().copied().max().unwrap_or(0);
        let histogram = counts
            .iter()
            .map(|&c| if peak == 0 { 0.0 } else { c as f64 / peak as f64 })
            .collect();
        if scores.is_empty() {
            return Self {
                count: 0,
                mean: None,
                std: None,
                empty: true,
                histogram,
            };
        }
        let n = scores.len() as f64;
        let mean = scores.iter().sum::<f64>() / n;
        let var = scores.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / n;
        Self {
            count: scores.len(),
            mean: Some(mean),
            std: Some(var.sqrt()),
            empty: false,
            histogram,
        }
    }
}

/// Scores of true and false positives.
pub fn confidence_stats(frames: &[FrameRecord], matches: &[MatchResult]) -> (ConfidenceStats, ConfidenceStats) {
    let (mut tp, mut fp) = (Vec::new(), Vec::new());
    for (f, m) in frames.iter().zip(matches) {
        for (d, det) in f.detections.iter().enumerate() {
            if m.det_tp[d] { &mut tp } else { &mut fp }.push(det.score);
        }
    }
    (ConfidenceStats::from_scores(&tp), ConfidenceStats::from_scores(&fp))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FpClasses {
    pub duplicate: usize,
    pub background: usize,
    pub other: usize,
}

impl FpClasses {
    pub fn total(&self) -> usize {
        self.duplicate + self.background + self.other
    }
}

/// Duplicate: overlaps an already-matched GT at `>= dup_iou`. Background: no
/// overlap with any GT. Other: everything else.
pub fn classify_fp(frames: &[FrameRecord], matches: &[MatchResult], dup_iou: f64) -> FpClasses {
    let mut c = FpClasses::default();
    for (f, m) in frames.iter().zip(matches) {
        for (d, det) in f.detections.iter().enumerate() {
            if m.det_tp[d] {
                continue;
            }
            let overlaps: Vec<f64> = f.ground_truths.iter().map(|g| iou(&det.bbox, g)).collect();
            if overlaps.iter().zip(&m.gt_matched).any(|(&o, &matched)| matched && o >= dup_iou) {
                c.duplicate += 1;
            } else if overlaps.iter().all(|&o| o == 0.0) {
                c.background += 1;
            } else {
                c.other += 1;
            }
        }
    }
    c
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinRecall {
    pub label: String,
    pub gts: usize,
    pub tp: usize,
    pub recall: f64,
}

fn collect_bins(keyed: BTreeMap<usize, (String, usize, usize)>) -> Vec<BinRecall> {
    keyed
        .into_values()
        .filter(|(_, n, _)| *n > 0)
        .map(|(label, gts, tp)| BinRecall {
            label,
            gts,
            tp,
            recall: tp as f64 / gts as f64,
        })
        .collect()
}

/// Recall per frame event-count bin; `edges` are ascending lower bounds and
/// the last bin is open-ended. Bins without GTs are omitted.
pub fn recall_by_density(frames: &[FrameRecord], matches: &[MatchResult], edges: &[u64]) -> Vec<BinRecall> {
    let mut bins = BTreeMap::new();
    for (f, m) in frames.iter().zip(matches) {
        let Some(k) = edges.iter().rposition(|&e| f.event_count >= e) else {
            continue;
        };
        let label = match edges.get(k + 1) {
            Some(hi) => format!("[{}, {})", edges[k], hi),
            None => format!("[{}, inf)", edges[k]),
        };
        let e = bins.entry(k).or_insert((label, 0, 0));
        e.1 += m.gt_matched.len();
        e.2 += m.gt_matched.iter().filter(|&&x| x).count();
    }
    collect_bins(bins)
}

/// Recall per GT size `sqrt(area)`: `< small`, `small..=large`, `> large`.
pub fn recall_by_size(frames: &[FrameRecord], matches: &[MatchResult], small: f64, large: f64) -> Vec<BinRecall> {
    let labels = [
        format!("<{small}"),
        format!("{small}-{large}"),
        format!(">{large}"),
    ];
    let mut bins = BTreeMap::new();
    for (f, m) in frames.iter().zip(matches) {
        for (g, gt) in f.ground_truths.iter().enumerate() {
            let s = gt.area().sqrt();
            let k = if s < small {
                0
            } else if s <= large {
                1
            } else {
                2
            };
            let e = bins.entry(k).or_insert((labels[k].clone(), 0, 0));
            e.1 += 1;
            e.2 += m.gt_matched[g] as usize;
        }
    }
    collect_bins(bins)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceStats {
    pub sequence_id: String,
    pub frames: usize,
    pub gts: usize,
    pub tp: usize,
    pub fp: usize,
    pub fn_count: usize,
    pub recall: f64,
    pub precision: Option<f64>,
}

/// Per-sequence counts, sorted by ascending recall then sequence id.
/// Sequences without GTs are omitted.
pub fn per_sequence(frames: &[FrameRecord], matches: &[MatchResult]) -> Vec<SequenceStats> {
    let mut acc: BTreeMap<&str, [usize; 5]> = BTreeMap::new();
    for (f, m) in frames.iter().zip(matches) {
        let e = acc.entry(&f.sequence_id).or_default();
        e[0] += 1;
        e[1] += f.ground_truths.len();
        e[2] += m.tp();
        e[3] += m.fp();
        e[4] += m.fn_count();
    }
    let mut out: Vec<SequenceStats> = acc
        .into_iter()
        .filter(|(_, v)| v[1] > 0)
        .map(|(id, [frames, gts, tp, fp, fn_count])| SequenceStats {
            sequence_id: id.to_string(),
            frames,
            gts,
            tp,
            fp,
            fn_count,
            recall: tp as f64 / gts as f64,
            precision: (tp + fp > 0).then(|| tp as f64 / (tp + fp) as f64),
        })
        .collect();
    out.sort_by(|a, b| a.recall.total_cmp(&b.recall).then_with(|| a.sequence_id.cmp(&b.sequence_id)));
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensitivityRow {
    pub iou: f64,
    pub map: Option<f64>,
    pub map_delta: Option<f64>,
    pub recall: Option<f64>,
    pub recall_delta: Option<f64>,
}

fn with_deltas(mut rows: Vec<SensitivityRow>) -> Vec<SensitivityRow> {
    let at50 = rows.iter().find(|r| (r.iou - 0.5).abs() < 1e-12).copied();
    for r in &mut rows {
        r.map_delta = at50.and_then(|b| Some(r.map? - b.map?));
        r.recall_delta = at50.and_then(|b| Some(r.recall? - b.recall?));
    }
    rows
}

/// Recall and AP at each IoU threshold, with differences against 0.50.
pub fn iou_sensitivity(frames: &[FrameRecord], thresholds: &[f64]) -> Result<Vec<SensitivityRow>> {
    let rows = thresholds
        .iter()
        .map(|&t| {
            Ok(SensitivityRow {
                iou: t,
                map: Some(average_precision(frames, t)?),
                map_delta: None,
                recall: Some(recall_at(frames, t)?),
                recall_delta: None,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(with_deltas(rows))
}

/// Rows from externally supplied values (e.g. published tables).
pub fn sensitivity_rows(values: &[(f64, Option<f64>, Option<f64>)]) -> Vec<SensitivityRow> {
    with_deltas(
        values
            .iter()
            .map(|&(iou, map, recall)| SensitivityRow {
                iou,
                map,
                map_delta: None,
                recall,
                recall_delta: None,
            })
            .collect(),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForensicsReport {
    pub schema_version: u32,
    pub config: ForensicsConfig,
    pub frames: usize,
    pub gt_total: usize,
    pub det_total: usize,
    pub tp_total: usize,
    pub fn_total: usize,
    pub fn_near_miss: usize,
    pub fn_complete_miss: usize,
    pub fn_iou_histogram: Vec<HistBin>,
    pub tp_confidence: ConfidenceStats,
    pub fp_confidence: ConfidenceStats,
    pub median_tp_iou: Option<f64>,
    pub fp_total: usize,
    pub fp_classes: FpClasses,
    pub iou_sensitivity: Vec<SensitivityRow>,
    pub recall_by_density: Vec<BinRecall>,
    pub recall_by_size: Vec<BinRecall>,
    pub per_sequence: Vec<SequenceStats>,
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { (v[n / 2 - 1] + v[n / 2]) / 2.0 })
}

pub fn analyze(frames: &[FrameRecord], config: &ForensicsConfig) -> Result<ForensicsReport> {
    if !(config.match_iou > 0.0 && config.match_iou <= 1.0) || config.small_px > config.large_px {
        return Err(Error::Config(format!("invalid forensics config {config:?}")));
    }
    let floored: Vec<FrameRecord> = frames
        .iter()
        .map(|f| FrameRecord {
            detections: f
                .detections
                .iter()
                .filter(|d| d.score > config.score_floor)
                .copied()
                .collect::<Vec<Detection>>(),
            ..f.clone()
        })
        .collect();
    let matches: Vec<MatchResult> = floored
        .iter()
        .map(|f| match_frame(&f.detections, &f.ground_truths, config.match_iou))
        .collect();
    let fns = decompose_fn(&matches);
    let (tp_confidence, fp_confidence) = confidence_stats(&floored, &matches);
    let tp_ious: Vec<f64> = matches
        .iter()
        .flat_map(|m| m.det_tp.iter().zip(&m.det_iou).filter(|(t, _)| **t).map(|(_, &o)| o))
        .collect();
    let fp_classes = classify_fp(&floored, &matches, config.duplicate_iou);
    let gt_total: usize = floored.iter().map(|f| f.ground_truths.len()).sum();
    let iou_sensitivity = if gt_total == 0 {
        Vec::new()
    } else {
        iou_sensitivity(&floored, &sensitivity_thresholds())?
    };
    Ok(ForensicsReport {
        schema_version: REPORT_SCHEMA_VERSION,
        config: *config,
        frames: floored.len(),
        gt_total,
        det_total: floored.iter().map(|f| f.detections.len()).sum(),
        tp_total: tp_ious.len(),
        fn_total: fns.fn_total,
        fn_near_miss: fns.fn_near_miss,
        fn_complete_miss: fns.fn_complete_miss,
        fn_iou_histogram: fns.histogram,
        tp_confidence,
        fp_confidence,
        median_tp_iou: median(tp_ious),
        fp_total: fp_classes.total(),
        fp_classes,
        iou_sensitivity,
        recall_by_density: recall_by_density(&floored, &matches, &DENSITY_EDGES),
        recall_by_size: recall_by_size(&floored, &matches, config.small_px, config.large_px),
        per_sequence: per_sequence(&floored, &matches),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Markdown,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(Self::Json),
            "markdown" | "md" => Ok(Self::Markdown),
            _ => Err(Error::Config(format!("unknown report format '{s}' (json|markdown)"))),
        }
    }
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{:.2}", 100.0 * x))
}

fn signed_pct(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{:+.2}", 100.0 * x))
}

fn share(part: usize, total: usize) -> String {
    if total == 0 {
        "-".into()
    } else {
        format!("{:.1}%", 100.0 * part as f64 / total as f64)
    }
}

/// Markdown table of the IoU sensitivity rows (values in percent).
pub fn sensitivity_markdown(rows: &[SensitivityRow]) -> String {
    let mut s = String::from("| IoU | mAP (%) | Δ mAP | Recall (%) | Δ Recall |\n|---|---|---|---|---|\n");
    for r in rows {
        writeln!(
            s,
            "| {:.2} | {} | {} | {} | {} |",
            r.iou,
            pct(r.map),
            signed_pct(r.map_delta),
            pct(r.recall),
            signed_pct(r.recall_delta)
        )
        .unwrap();
    }
    s
}

fn bins_markdown(s: &mut String, title: &str, rows: &[BinRecall]) {
    writeln!(s, "\n## {title}\n").unwrap();
    if rows.is_empty() {
        s.push_str("No ground truth.\n");
        return;
    }
    s.push_str("| Bin | GT | TP | Recall (%) |\n|---|---|---|---|\n");
    for r in rows {
        writeln!(s, "| {} | {} | {} | {:.2} |", r.label, r.gts, r.tp, 100.0 * r.recall).unwrap();
    }
}

fn stats_line(name: &str, c: &ConfidenceStats) -> String {
    match (c.mean, c.std) {
        (Some(m), Some(sd)) => format!("| {name} | {} | {m:.4} | {sd:.4} |\n", c.count),
        _ => format!("| {name} | 0 | - | - |\n"),
    }
}

pub fn render_markdown(r: &ForensicsReport) -> String {
    let mut s = String::from("# Detection error forensics\n\n");
    writeln!(
        s,
        "Frames: {}, ground truth: {}, detections: {}, true positives: {}\n",
        r.frames, r.gt_total, r.det_total, r.tp_total
    )
    .unwrap();
    s.push_str("## False negatives\n\n| Kind | Count | Share |\n|---|---|---|\n");
    writeln!(s, "| Near miss (0 < IoU < 0.5) | {} | {} |", r.fn_near_miss, share(r.fn_near_miss, r.fn_total)).unwrap();
    writeln!(s, "| Complete miss (IoU = 0) | {} | {} |", r.fn_complete_miss, share(r.fn_complete_miss, r.fn_total))
        .unwrap();
    writeln!(s, "| Total | {} | |", r.fn_total).unwrap();
    s.push_str("\n| Best IoU | Count |\n|---|---|\n");
    for b in &r.fn_iou_histogram {
        writeln!(s, "| [{:.1}, {:.1}) | {} |", b.lo, b.hi, b.count).unwrap();
    }
    s.push_str("\n## Confidence\n\n| Set | Count | Mean | Std |\n|---|---|---|---|\n");
    s.push_str(&stats_line("TP", &r.tp_confidence));
    s.push_str(&stats_line("FP", &r.fp_confidence));
    if let Some(m) = r.median_tp_iou {
        writeln!(s, "\nMedian TP IoU: {m:.4}").unwrap();
    }
    s.push_str("\n## False positives\n\n| Class | Count | Share |\n|---|---|---|\n");
    let c = r.fp_classes;
    for (name, n) in [("Duplicate", c.duplicate), ("Background", c.background), ("Other", c.other)] {
        writeln!(s, "| {name} | {n} | {} |", share(n, r.fp_total)).unwrap();
    }
    s.push_str("\n## IoU sensitivity\n\n");
    if r.iou_sensitivity.is_empty() {
        s.push_str("No ground truth.\n");
    } else {
        s.push_str(&sensitivity_markdown(&r.iou_sensitivity));
    }
    bins_markdown(&mut s, "Recall by event count", &r.recall_by_density);
    bins_markdown(&mut s, "Recall by object size (sqrt area, px)", &r.recall_by_size);
    s.push_str("\n## Per sequence\n\n");
    if r.per_sequence.is_empty() {
        s.push_str("No ground truth.\n");
    } else {
        s.push_str("| Sequence | Frames | GT | TP | FP | FN | Recall (%) | Precision (%) |\n|---|---|---|---|---|---|---|---|\n");
        for q in &r.per_sequence {
            writeln!(
                s,
                "| {} | {} | {} | {} | {} | {} | {:.2} | {} |",
                q.sequence_id,
                q.frames,
                q.gts,
                q.tp,
                q.fp,
                q.fn_count,
                100.0 * q.recall,
                pct(q.precision)
            )
            .unwrap();
        }
    }
    s
}

pub fn emit_report(r: &ForensicsReport, format: ReportFormat) -> Result<String> {
    Ok(match format {
        ReportFormat::Json => serde_json::to_string_pretty(r)? + "\n",
        ReportFormat::Markdown => render_markdown(r),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::boxes::BoundingBox;

    fn det(b: [f64; 4], score: f64) -> Detection {
        Detection {
            bbox: BoundingBox::from_array(b),
            score,
            class: 0,
        }
    }

    fn frame(seq: &str, events: u64, dets: Vec<Detection>, gts: Vec<[f64; 4]>) -> FrameRecord {
        FrameRecord {
            frame_id: 0,
            sequence_id: seq.into(),
            event_count: events,
            detections: dets,
            ground_truths: gts.into_iter().map(BoundingBox::from_array).collect(),
        }
    }

    #[test]
    fn fn_bins_and_classes() {
        let g = [0.0, 0.0, 10.0, 10.0];
        let frames = vec![
            // near miss at 0.45
            frame("a", 100, vec![det([0.0, 0.0, 10.0, 4.5], 0.9)], vec![g]),
            // complete miss, background FP
            frame("a", 100, vec![det([50.0, 50.0, 60.0, 60.0], 0.9)], vec![g]),
            // TP + duplicate
            frame("b", 3000, vec![det(g, 0.9), det([0.0, 0.0, 10.0, 8.0], 0.8)], vec![g]),
        ];
        let r = analyze(&frames, &ForensicsConfig::default()).unwrap();
        assert_eq!((r.fn_total, r.fn_near_miss, r.fn_complete_miss), (2, 1, 1));
        assert_eq!(r.fn_iou_histogram[4].count, 1);
        assert_eq!(r.fn_iou_histogram[0].count, 1);
        assert_eq!(r.fp_classes, FpClasses { duplicate: 1, background: 1, other: 1 });
        assert_eq!(r.per_sequence[0].sequence_id, "a");
        assert_eq!(r.recall_by_density.len(), 2);
        assert_eq!(r.recall_by_density[1].recall, 1.0);
        assert_eq!(r.median_tp_iou, Some(1.0));
        let json = emit_report(&r, ReportFormat::Json).unwrap();
        let back: ForensicsReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, r);
        assert!(emit_report(&r, ReportFormat::Markdown).unwrap().contains("| Near miss (0 < IoU < 0.5) | 1 | 50.0% |"));
    }

    #[test]
    fn confidence_histogram() {
        let c = ConfidenceStats::from_scores(&[0.5, 0.5, 1.0]);
        assert_eq!(c.mean, Some(2.0 / 3.0));
        assert_eq!(c.histogram[10], 1.0);
        assert_eq!(c.histogram[19], 0.5);
        let e = ConfidenceStats::from_scores(&[]);
        assert!(e.empty && e.mean.is_none());
    }

    #[test]
    fn empty_corpus_report() {
        let r = analyze(&[], &ForensicsConfig::default()).unwrap();
        assert_eq!(r.fn_total, 0);
        let md = emit_report(&r, ReportFormat::Markdown).unwrap();
        assert!(md.starts_with("# Detection error forensics"));
    }
}
