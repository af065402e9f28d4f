//! YOLO label files: `class cx cy w h`, normalized to `[0, 1]`.

use std::path::Path;

use crate::boxes::{BoundingBox, GroundTruthBox};
use crate::error::{Error, Result};

/// Converts to absolute pixel boxes on an `(H, W)` image.
pub fn parse_yolo_labels(text: &str, image_shape: (usize, usize)) -> Result<Vec<GroundTruthBox>> {
    let (ih, iw) = (image_shape.0 as f64, image_shape.1 as f64);
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 5 {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("expected 5 fields, found {}", fields.len()),
            });
        }
        let class: u32 = fields[0].parse().map_err(|_| Error::Parse {
            line: line_no,
            msg: format!("bad class '{}'", fields[0]),
        })?;
        let mut v = [0.0f64; 4];
        for (k, f) in fields[1..].iter().enumerate() {
            v[k] = f.parse().map_err(|_| Error::Parse {
                line: line_no,
                msg: format!("bad number '{f}'"),
            })?;
            if !(0.0..=1.0).contains(&v[k]) {
                return Err(Error::Validation {
                    line: line_no,
                    msg: format!("value {} outside [0, 1]", v[k]),
                });
            }
        }
        let [cx, cy, w, h] = v;
        let bbox = BoundingBox::new(
            cx * iw - w * iw / 2.0,
            cy * ih - h * ih / 2.0,
            cx * iw + w * iw / 2.0,
            cy * ih + h * ih / 2.0,
        );
        out.push(GroundTruthBox {
            class,
            ..GroundTruthBox::new(bbox)
        });
    }
    Ok(out)
}

pub fn read_yolo_labels(path: &Path, image_shape: (usize, usize)) -> Result<Vec<GroundTruthBox>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_yolo_labels(&text, image_shape)
}
