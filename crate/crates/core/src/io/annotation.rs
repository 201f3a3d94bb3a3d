use std::path::Path;

use crate::error::{Error, Result};
use crate::grammar::NUM_CLASSES;
use crate::raster::NormBox;

use super::{read_bytes, write_atomic};

/// One YOLO Darknet line: class id and normalized center/size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Label {
    pub class_id: usize,
    pub bbox: NormBox,
}

/// Edge slack when checking that a parsed box fits the unit square; six
/// decimals of rounding can push an edge box half a unit past 1.
const EDGE_SLACK: f64 = 1e-6;

/// `"cls x y w h\n"` per label with six decimals.
pub fn format_annotation(labels: &[Label]) -> String {
    let mut out = String::with_capacity(labels.len() * 40);
    for l in labels {
        out.push_str(&format!(
            "{} {:.6} {:.6} {:.6} {:.6}\n",
            l.class_id, l.bbox.x_center, l.bbox.y_center, l.bbox.w, l.bbox.h
        ));
    }
    out
}

/// Parses annotation text; `origin` names the source in error messages.
pub fn parse_annotation(text: &str, origin: &str) -> Result<Vec<Label>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let err = |message: String| Error::Parse {
            path: origin.to_string(),
            line: i + 1,
            message,
        };
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 5 {
            return Err(err(format!("expected 5 fields, found {}", fields.len())));
        }
        let class_id: usize = fields[0]
            .parse()
            .map_err(|_| err(format!("bad class id {:?}", fields[0])))?;
        if class_id >= NUM_CLASSES {
            return Err(err(format!("class id {class_id} out of range")));
        }
        let mut v = [0.0; 4];
        for (slot, f) in v.iter_mut().zip(&fields[1..]) {
            let x: f64 = f.parse().map_err(|_| err(format!("bad coordinate {f:?}")))?;
            if !(0.0..=1.0).contains(&x) {
                return Err(err(format!("coordinate {f} outside [0, 1]")));
            }
            *slot = x;
        }
        let [x, y, w, h] = v;
        if x - w / 2.0 < -EDGE_SLACK || x + w / 2.0 > 1.0 + EDGE_SLACK || y - h / 2.0 < -EDGE_SLACK || y + h / 2.0 > 1.0 + EDGE_SLACK {
            return Err(err("box extends outside the image".into()));
        }
        out.push(Label {
            class_id,
            bbox: NormBox {
                x_center: x,
                y_center: y,
                w,
                h,
            },
        });
    }
    Ok(out)
}

pub fn write_annotation(path: &Path, labels: &[Label]) -> Result<()> {
    write_atomic(path, format_annotation(labels).as_bytes())
}

pub fn read_annotation(path: &Path) -> Result<Vec<Label>> {
    let bytes = read_bytes(path)?;
    let text = String::from_utf8(bytes).map_err(|_| Error::Parse {
        path: path.display().to_string(),
        line: 0,
        message: "not UTF-8".into(),
    })?;
    parse_annotation(&text, &path.display().to_string())
}
