//! Post-processing of head outputs: LTRB decoding, score fusion, threshold
//! filtering and greedy NMS, plus the detections JSON-lines format.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::boxes::{iou, BoundingBox, Detection};
use crate::error::{Error, Result};
use crate::model::{HeadOutputs, SparseVoxelDet};
use crate::tensor::{SparseTensor3D, VoxelCoord};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InferenceConfig {
    pub score_threshold: f64,
    pub nms_iou: f64,
    pub max_detections: usize,
    pub stride: usize,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self {
            score_threshold: 0.05,
            nms_iou: 0.5,
            max_detections: 100,
            stride: 4,
        }
    }
}

impl InferenceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.score_threshold) {
            return Err(Error::Config(format!("score threshold {} not in [0,1]", self.score_threshold)));
        }
        if !(self.nms_iou > 0.0 && self.nms_iou < 1.0) {
            return Err(Error::Config(format!("NMS IoU {} not in (0,1)", self.nms_iou)));
        }
        if self.stride == 0 {
            return Err(Error::Config("stride must be positive".into()));
        }
        Ok(())
    }
}

/// Box for one position: center `(x s + s/2, y s + s/2)` minus/plus the
/// exponentiated distances.
pub fn decode_one(pos: &VoxelCoord, raw: &[f32; 4], stride: usize) -> BoundingBox {
    let s = stride as f64;
    let cx = pos.x as f64 * s + s / 2.0;
    let cy = pos.y as f64 * s + s / 2.0;
    let [l, t, r, b] = raw.map(|v| (v as f64).exp());
    BoundingBox::new(cx - l, cy - t, cx + r, cy + b)
}

pub fn decode_ltrb(positions: &[VoxelCoord], box_raw: &[[f32; 4]], stride: usize) -> Vec<BoundingBox> {
    positions.iter().zip(box_raw).map(|(p, r)| decode_one(p, r, stride)).collect()
}

fn sigmoid64(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `sigma(cls) * sigma(ctr)`.
pub fn fuse_scores(cls_logit: &[f32], ctr_logit: &[f32]) -> Vec<f64> {
    cls_logit
        .iter()
        .zip(ctr_logit)
        .map(|(&c, &z)| sigmoid64(c as f64) * sigmoid64(z as f64))
        .collect()
}

/// Greedy NMS: visits detections by descending score (stable on ties),
/// suppressing any later one with IoU strictly above `iou_threshold` against
/// a kept one. Stops after `max_out` survivors.
pub fn nms(dets: &[Detection], iou_threshold: f64, max_out: usize) -> Vec<Detection> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score));
    let mut kept: Vec<Detection> = Vec::new();
    for i in order {
        if kept.len() >= max_out {
            break;
        }
        let d = dets[i];
        if kept.iter().all(|k| iou(&k.bbox, &d.bbox) <= iou_threshold) {
            kept.push(d);
        }
    }
    kept
}

/// Scores, filters, decodes and suppresses one frame of head outputs.
pub fn postprocess(out: &HeadOutputs, config: &InferenceConfig) -> Vec<Detection> {
    let scores = fuse_scores(&out.cls_logit, &out.ctr_logit);
    let candidates: Vec<Detection> = scores
        .iter()
        .enumerate()
        .filter(|(_, &s)| s > config.score_threshold)
        .map(|(i, &score)| Detection {
            bbox: decode_one(&out.positions[i], &out.box_raw[i], config.stride),
            score,
            class: 0,
        })
        .collect();
    nms(&candidates, config.nms_iou, config.max_detections)
}

pub fn infer_frame(x: &SparseTensor3D, model: &SparseVoxelDet, config: &InferenceConfig) -> Result<Vec<Detection>> {
    config.validate()?;
    Ok(postprocess(&model.forward(x)?, config))
}

/// One line of the detections file.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameDetections {
    pub frame_id: u64,
    pub detections: Vec<Detection>,
}

fn push_f4(s: &mut String, v: f64) {
    // avoid "-0.0000"
    let r = (v * 1e4).round() / 1e4;
    let r = if r == 0.0 { 0.0 } else { r };
    write!(s, "{r:.4}").unwrap();
}

/// `{"frame_id":N,"detections":[{"box":[x1,y1,x2,y2],"score":s},...]}` with
/// four decimals.
pub fn format_detection_line(frame: &FrameDetections) -> String {
    let mut s = format!("{{\"frame_id\":{},\"detections\":[", frame.frame_id);
    for (i, d) in frame.detections.iter().enumerate() {
        if i > 0 {
            s.push(',');
        }
        s.push_str("{\"box\":[");
        for (j, v) in d.bbox.to_array().iter().enumerate() {
            if j > 0 {
                s.push(',');
            }
            push_f4(&mut s, *v);
        }
        s.push_str("],\"score\":");
        push_f4(&mut s, d.score);
        s.push('}');
    }
    s.push_str("]}");
    s
}

pub fn format_detections(frames: &[FrameDetections]) -> String {
    frames.iter().map(|f| format_detection_line(f) + "\n").collect()
}

#[derive(Deserialize)]
struct RawDet {
    #[serde(rename = "box")]
    bbox: [f64; 4],
    score: f64,
    #[serde(default)]
    class: u32,
}

#[derive(Deserialize)]
struct RawFrame {
    frame_id: u64,
    detections: Vec<RawDet>,
}

pub fn parse_detections(text: &str) -> Result<Vec<FrameDetections>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawFrame = serde_json::from_str(line).map_err(|e| Error::Parse {
            line: i + 1,
            msg: e.to_string(),
        })?;
        let mut detections = Vec::with_capacity(raw.detections.len());
        for d in raw.detections {
            let bbox = BoundingBox::from_array(d.bbox);
            if !bbox.is_well_formed() || !(0.0..=1.0).contains(&d.score) {
                return Err(Error::Validation {
                    line: i + 1,
                    msg: format!("bad detection box {:?} / score {}", d.bbox, d.score),
                });
            }
            detections.push(Detection {
                bbox,
                score: d.score,
                class: d.class,
            });
        }
        out.push(FrameDetections {
            frame_id: raw.frame_id,
            detections,
        });
    }
    Ok(out)
}

pub fn read_detections(path: &Path) -> Result<Vec<FrameDetections>> {
    parse_detections(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
}

pub fn write_detections(path: &Path, frames: &[FrameDetections]) -> Result<()> {
    std::fs::write(path, format_detections(frames)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decode_examples() {
        let p = VoxelCoord::new(0, 0, 10, 20);
        assert_eq!(decode_one(&p, &[0.0; 4], 4), BoundingBox::new(81.0, 41.0, 83.0, 43.0));
        let l2 = std::f32::consts::LN_2;
        let b = decode_one(&p, &[l2; 4], 4);
        for (got, want) in b.to_array().iter().zip([80.0, 40.0, 84.0, 44.0]) {
            assert!((got - want).abs() < 1e-6);
        }
        assert_eq!(decode_one(&VoxelCoord::new(0, 0, 0, 0), &[0.0; 4], 4), BoundingBox::new(1.0, 1.0, 3.0, 3.0));
    }

    #[test]
    fn fusion_limits() {
        assert_eq!(fuse_scores(&[0.0], &[0.0]), [0.25]);
        assert!(fuse_scores(&[80.0], &[80.0])[0] > 1.0 - 1e-12);
        assert!(fuse_scores(&[0.0], &[-200.0])[0] < 1e-80);
    }

    #[test]
    fn nms_examples() {
        let b = BoundingBox::new(0.0, 0.0, 10.0, 10.0);
        let dets = [
            Detection { bbox: b, score: 0.8, class: 0 },
            Detection { bbox: b, score: 0.9, class: 0 },
            Detection { bbox: BoundingBox::new(50.0, 50.0, 60.0, 60.0), score: 0.1, class: 0 },
        ];
        let kept = nms(&dets, 0.5, 100);
        assert_eq!(kept.len(), 2);
        assert_eq!(kept[0].score, 0.9);
        assert_eq!(nms(&dets, 0.5, 1).len(), 1);
    }

    #[test]
    fn json_lines_round_trip() {
        let frames = vec![
            FrameDetections {
                frame_id: 3,
                detections: vec![Detection {
                    bbox: BoundingBox::new(1.0, 2.5, 3.12345, 4.0),
                    score: 0.5,
                    class: 0,
                }],
            },
            FrameDetections { frame_id: 4, detections: vec![] },
        ];
        let text = format_detections(&frames);
        assert_eq!(
            text,
            "{\"frame_id\":3,\"detections\":[{\"box\":[1.0000,2.5000,3.1235,4.0000],\"score\":0.5000}]}\n\
             {\"frame_id\":4,\"detections\":[]}\n"
        );
        let back = parse_detections(&text).unwrap();
        assert_eq!(format_detections(&back), text);
        assert!(parse_detections("{\"frame_id\":1}").is_err());
    }
}
