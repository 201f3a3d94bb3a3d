//! Template-matching character recognizer: binarize, segment glyphs by
//! column projection, classify each glyph by normalized cross-correlation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::font;
use crate::grammar::{char_of_class, NUM_CLASSES};
use crate::raster::{area_resample, NormBox, PixelBox, Raster};
use crate::render::{RenderStyle, REFERENCE_SIZE};

/// Template grid: one reference-size glyph cell.
pub const TEMPLATE_W: usize = 15;
pub const TEMPLATE_H: usize = 42;
const TEMPLATE_LEN: usize = TEMPLATE_W * TEMPLATE_H;

/// Below this gray-level spread between Otsu classes the image is treated
/// as blank.
const MIN_CONTRAST: f64 = 32.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub class_id: usize,
    #[serde(rename = "box")]
    pub bbox: NormBox,
    pub confidence: f64,
}

impl Detection {
    pub fn new(class_id: usize, bbox: NormBox, confidence: f64) -> Result<Self> {
        if class_id >= NUM_CLASSES {
            return Err(Error::arg(format!("class id {class_id} out of range")));
        }
        if !bbox.in_unit_square() {
            return Err(Error::arg(format!("box {bbox:?} outside the unit square")));
        }
        if !(0.0..=1.0).contains(&confidence) {
            return Err(Error::arg(format!("confidence {confidence} outside [0, 1]")));
        }
        Ok(Detection {
            class_id,
            bbox,
            confidence,
        })
    }

    pub fn character(&self) -> char {
        char_of_class(self.class_id).expect("class id validated")
    }
}

/// Otsu threshold over a 256-bin histogram; returns the threshold and the
/// difference between the two class means.
fn otsu(gray: &[u8]) -> (u8, f64) {
    let mut hist = [0u64; 256];
    for &g in gray {
        hist[g as usize] += 1;
    }
    let total = gray.len() as f64;
    let sum_all: f64 = hist.iter().enumerate().map(|(i, &c)| i as f64 * c as f64).sum();
    let (mut w0, mut sum0) = (0.0, 0.0);
    let (mut best, mut best_t, mut best_gap) = (-1.0, 0u8, 0.0);
    for t in 0..255 {
        w0 += hist[t] as f64;
        sum0 += t as f64 * hist[t] as f64;
        let w1 = total - w0;
        if w0 == 0.0 || w1 == 0.0 {
            continue;
        }
        let m0 = sum0 / w0;
        let m1 = (sum_all - sum0) / w1;
        let between = w0 * w1 * (m0 - m1) * (m0 - m1);
        if between > best {
            best = between;
            best_t = t as u8;
            best_gap = m1 - m0;
        }
    }
    (best_t, best_gap)
}

/// Longest run of `true` in `flags` as `(start, len)`.
fn longest_run(flags: impl Iterator<Item = bool>) -> Option<(usize, usize)> {
    let mut best: Option<(usize, usize)> = None;
    let mut start = 0;
    let mut len = 0;
    for (i, f) in flags.enumerate() {
        if f {
            if len == 0 {
                start = i;
            }
            len += 1;
            if best.is_none_or(|(_, l)| len > l) {
                best = Some((start, len));
            }
        } else {
            len = 0;
        }
    }
    best
}

/// Finds glyph boxes, sorted left to right. Dark ink on a light plate is
/// assumed. Columns inked over more than 90% of the height (the band) are
/// ignored. When `hint` is given and the projection does not find exactly 8
/// glyphs, the style's fixed grid is returned instead.
pub fn segment_glyphs(img: &Raster, hint: Option<&RenderStyle>) -> Vec<PixelBox> {
    let found = project(img);
    match hint {
        Some(style) if found.len() != 8 => match style.layout(img.width(), img.height()) {
            Ok(grid) => grid.to_vec(),
            Err(_) => found,
        },
        _ => found,
    }
}

fn project(img: &Raster) -> Vec<PixelBox> {
    let (w, h) = (img.width(), img.height());
    if w == 0 || h == 0 {
        return Vec::new();
    }
    let gray = img.luminance();
    let (t, gap) = otsu(&gray);
    if gap < MIN_CONTRAST {
        return Vec::new();
    }
    let ink = |x: usize, y: usize| gray[y * w + x] <= t;
    let col_total: Vec<usize> = (0..w).map(|x| (0..h).filter(|&y| ink(x, y)).count()).collect();
    let band = |x: usize| col_total[x] * 10 > h * 9;

    // Text rows: longest run of rows with ink outside the band.
    let row_counts: Vec<usize> = (0..h)
        .map(|y| (0..w).filter(|&x| !band(x) && ink(x, y)).count())
        .collect();
    let Some((top, rows)) = longest_run(row_counts.iter().map(|&c| c >= 2)) else {
        return Vec::new();
    };
    let min_count = ((rows as f64 * 0.05).round() as usize).max(1);
    let cols: Vec<bool> = (0..w)
        .map(|x| !band(x) && (top..top + rows).filter(|&y| ink(x, y)).count() >= min_count)
        .collect();

    let mut runs = Vec::new();
    let mut x = 0;
    while x < w {
        if cols[x] {
            let s = x;
            while x < w && cols[x] {
                x += 1;
            }
            runs.push((s, x - s));
        } else {
            x += 1;
        }
    }
    if runs.is_empty() {
        return Vec::new();
    }
    let mut widths: Vec<usize> = runs.iter().map(|r| r.1).collect();
    widths.sort_unstable();
    let median = widths[widths.len() / 2] as f64;
    runs.into_iter()
        .filter(|&(_, rw)| rw as f64 >= 0.3 * median)
        .filter_map(|(x0, rw)| {
            let (y0, rh) = longest_run((0..h).map(|y| (x0..x0 + rw).any(|x| ink(x, y))))?;
            Some(PixelBox::new(x0, y0, rw, rh))
        })
        .collect()
}

fn zscore(v: &mut [f64]) -> bool {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    if var <= 1e-12 {
        return false;
    }
    let sd = var.sqrt();
    v.iter_mut().for_each(|x| *x = (*x - mean) / sd);
    true
}

/// Ink-intensity vector of a patch on the template grid, z-scored. `None`
/// for a constant patch.
fn patch_vector(patch: &Raster) -> Option<Vec<f64>> {
    if patch.width() == 0 || patch.height() == 0 {
        return None;
    }
    let inkness: Vec<u8> = patch.luminance().iter().map(|&l| 255 - l).collect();
    let mut v = area_resample(&inkness, patch.width(), patch.height(), 1, TEMPLATE_W, TEMPLATE_H);
    zscore(&mut v).then_some(v)
}

/// How a recognizer absorbs new labeled glyphs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearnMode {
    /// Templates rebuilt from the font plus the given examples only.
    #[default]
    FromScratch,
    /// New class means blended half and half with the current templates.
    FineTune,
}

/// A glyph crop with its known class.
#[derive(Debug, Clone)]
pub struct LabeledGlyph {
    pub patch: Raster,
    pub class_id: usize,
}

/// Template bank plus optional segmentation hint.
#[derive(Debug, Clone)]
pub struct TemplateRecognizer {
    templates: Vec<Vec<f64>>,
    style: Option<RenderStyle>,
}

impl Default for TemplateRecognizer {
    fn default() -> Self {
        Self::font()
    }
}

fn font_template(class: usize) -> Vec<f64> {
    let mut v: Vec<f64> = font::scaled_mask(class, TEMPLATE_W, TEMPLATE_H)
        .into_iter()
        .map(|b| if b { 255.0 } else { 0.0 })
        .collect();
    zscore(&mut v);
    v
}

impl TemplateRecognizer {
    /// Templates straight from the embedded font, no grid fallback.
    pub fn font() -> Self {
        TemplateRecognizer {
            templates: (0..NUM_CLASSES).map(font_template).collect(),
            style: None,
        }
    }

    pub fn with_style(mut self, style: RenderStyle) -> Self {
        self.style = Some(style);
        self
    }

    /// Updates templates from labeled glyphs. A class's template becomes the
    /// z-scored average of its font template and the mean of its examples;
    /// classes without examples keep the font (from scratch) or their current
    /// template (fine-tune).
    pub fn learn(&mut self, glyphs: &[LabeledGlyph], mode: LearnMode) {
        let mut sums = vec![vec![0.0; TEMPLATE_LEN]; NUM_CLASSES];
        let mut counts = vec![0usize; NUM_CLASSES];
        for g in glyphs {
            if g.class_id >= NUM_CLASSES {
                continue;
            }
            if let Some(v) = patch_vector(&g.patch) {
                for (s, x) in sums[g.class_id].iter_mut().zip(v) {
                    *s += x;
                }
                counts[g.class_id] += 1;
            }
        }
        for c in 0..NUM_CLASSES {
            let base = match mode {
                LearnMode::FromScratch => font_template(c),
                LearnMode::FineTune => self.templates[c].clone(),
            };
            if counts[c] == 0 {
                self.templates[c] = base;
                continue;
            }
            let n = counts[c] as f64;
            let mut t: Vec<f64> = base.iter().zip(&sums[c]).map(|(b, s)| 0.5 * b + 0.5 * s / n).collect();
            if zscore(&mut t) {
                self.templates[c] = t;
            }
        }
    }

    /// Best class and confidence `max(0, ncc)`. Ties go to the lowest id;
    /// a constant patch yields `(0, 0.0)`.
    pub fn classify_glyph(&self, patch: &Raster) -> (usize, f64) {
        let Some(v) = patch_vector(patch) else {
            return (0, 0.0);
        };
        let mut best = (0, f64::NEG_INFINITY);
        for (c, t) in self.templates.iter().enumerate() {
            let ncc = v.iter().zip(t).map(|(a, b)| a * b).sum::<f64>() / TEMPLATE_LEN as f64;
            if ncc > best.1 {
                best = (c, ncc);
            }
        }
        (best.0, best.1.clamp(0.0, 1.0))
    }

    /// Reads a plate. Images are first resized to the reference canvas so
    /// templates and segmentation thresholds see a consistent scale.
    pub fn recognize(&self, img: &Raster) -> Recognition {
        if img.width() == 0 || img.height() == 0 {
            return Recognition::default();
        }
        let (rw, rh) = REFERENCE_SIZE;
        let work = if (img.width(), img.height()) == (rw, rh) {
            img.clone()
        } else {
            img.resize_bilinear(rw, rh).expect("nonzero reference size")
        };
        let boxes = segment_glyphs(&work, self.style.as_ref());
        let mut text = String::with_capacity(boxes.len());
        let mut detections = Vec::with_capacity(boxes.len());
        for b in boxes {
            let patch = work.crop(b).expect("segment boxes lie inside the image");
            let (class_id, confidence) = self.classify_glyph(&patch);
            text.push(char_of_class(class_id).expect("class in range"));
            detections.push(Detection {
                class_id,
                bbox: b.to_norm(rw, rh),
                confidence,
            });
        }
        Recognition { text, detections }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Recognition {
    pub text: String,
    pub detections: Vec<Detection>,
}

pub fn classify_glyph(patch: &Raster) -> (usize, f64) {
    TemplateRecognizer::font().classify_glyph(patch)
}

/// Reads a plate with the font templates.
pub fn recognize_plate(img: &Raster) -> Recognition {
    TemplateRecognizer::font().recognize(img)
}

/// Crops labeled glyphs out of an image given its text and normalized boxes.
pub fn glyphs_from_labels(img: &Raster, text: &str, boxes: &[NormBox]) -> Vec<LabeledGlyph> {
    text.chars()
        .zip(boxes)
        .filter_map(|(c, b)| {
            let class_id = font::glyph_class(c)?;
            let patch = img.crop(b.to_pixel(img.width(), img.height())).ok()?;
            Some(LabeledGlyph { patch, class_id })
        })
        .collect()
}
