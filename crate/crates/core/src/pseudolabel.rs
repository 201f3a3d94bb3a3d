//! Pseudolabel expansion: assemble plate strings from detections, filter by
//! confidence and plate grammar, sweep thresholds, grow the labeled set in
//! rounds, and score plate-level accuracy.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grammar::{validate_plate, InvalidReason, Validation};
use crate::ocr::{glyphs_from_labels, Detection, LabeledGlyph, LearnMode, TemplateRecognizer};
use crate::raster::Raster;

/// Overlap above which two detections are treated as the same glyph.
pub const DUPLICATE_IOU: f64 = 0.5;

/// Thresholds scanned by [`sweep_thresholds`]: 0.1, 0.2, ..., 0.9.
pub fn sweep_grid() -> Vec<f64> {
    (1..=9).map(|i| i as f64 / 10.0).collect()
}

fn det_order(a: &Detection, b: &Detection) -> Ordering {
    b.confidence
        .total_cmp(&a.confidence)
        .then(a.bbox.x_center.total_cmp(&b.bbox.x_center))
        .then(a.bbox.y_center.total_cmp(&b.bbox.y_center))
        .then(a.bbox.w.total_cmp(&b.bbox.w))
        .then(a.bbox.h.total_cmp(&b.bbox.h))
        .then(a.class_id.cmp(&b.class_id))
}

/// Greedy duplicate suppression (highest confidence first, IoU above
/// [`DUPLICATE_IOU`] dropped), returned left to right. The result does not
/// depend on input order.
pub fn collapse_detections(dets: &[Detection]) -> Vec<Detection> {
    let mut sorted = dets.to_vec();
    sorted.sort_by(det_order);
    let mut kept: Vec<Detection> = Vec::with_capacity(sorted.len());
    for d in sorted {
        if kept.iter().all(|k| k.bbox.iou(&d.bbox) <= DUPLICATE_IOU) {
            kept.push(d);
        }
    }
    kept.sort_by(|a, b| a.bbox.x_center.total_cmp(&b.bbox.x_center).then(det_order(a, b)));
    kept
}

pub fn assemble_string(dets: &[Detection]) -> String {
    collapse_detections(dets).iter().map(Detection::character).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    WrongCount,
    LowConfidence,
    BadPattern,
    InvalidPrefix,
    InvalidSuffix,
}

impl From<InvalidReason> for RejectReason {
    fn from(r: InvalidReason) -> Self {
        match r {
            InvalidReason::BadPattern => RejectReason::BadPattern,
            InvalidReason::InvalidPrefix => RejectReason::InvalidPrefix,
            InvalidReason::InvalidSuffix => RejectReason::InvalidSuffix,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decision {
    pub text: String,
    pub accepted: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reason: Option<RejectReason>,
}

/// Accepts when exactly 8 detections remain after duplicate suppression,
/// the weakest has confidence at least `tau`, and the assembled text is a
/// valid plate. Checks run in that order and the first failure is reported.
pub fn accept_pseudolabel(dets: &[Detection], tau: f64) -> Decision {
    let kept = collapse_detections(dets);
    let text: String = kept.iter().map(Detection::character).collect();
    let reject = |reason| Decision {
        text: text.clone(),
        accepted: false,
        reason: Some(reason),
    };
    if kept.len() != 8 {
        return reject(RejectReason::WrongCount);
    }
    if kept.iter().any(|d| d.confidence < tau) {
        return reject(RejectReason::LowConfidence);
    }
    match validate_plate(&text) {
        Validation::Valid { .. } => Decision {
            text,
            accepted: true,
            reason: None,
        },
        Validation::Invalid(r) => reject(r.into()),
    }
}

/// Exact-match rate over (predicted, truth) pairs.
pub fn binary_accuracy<P: AsRef<str>, T: AsRef<str>>(pairs: &[(P, T)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::arg("accuracy over an empty set"));
    }
    let hits = pairs.iter().filter(|(p, t)| p.as_ref() == t.as_ref()).count();
    Ok(hits as f64 / pairs.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub threshold: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
    /// Threshold with the highest accuracy; the lowest one on ties.
    pub chosen: f64,
}

/// Scores each threshold by dropping detections below it, assembling the
/// rest and comparing with the ground truth.
pub fn sweep_thresholds<T: AsRef<str> + Sync>(val: &[(Vec<Detection>, T)]) -> Result<SweepTable> {
    if val.is_empty() {
        return Err(Error::arg("validation set is empty"));
    }
    let mut rows = Vec::with_capacity(9);
    for tau in sweep_grid() {
        let pairs: Vec<(String, &str)> = val
            .par_iter()
            .map(|(dets, truth)| {
                let kept: Vec<Detection> = dets.iter().copied().filter(|d| d.confidence >= tau).collect();
                (assemble_string(&kept), truth.as_ref())
            })
            .collect();
        rows.push(SweepRow {
            threshold: tau,
            accuracy: binary_accuracy(&pairs)?,
        });
    }
    let mut chosen = rows[0];
    for r in &rows[1..] {
        if r.accuracy > chosen.accuracy {
            chosen = *r;
        }
    }
    Ok(SweepTable {
        rows,
        chosen: chosen.threshold,
    })
}

/// Runs the recognizer over a validation set and sweeps its detections.
pub fn sweep_recognizer(rec: &TemplateRecognizer, val: &[(Raster, String)]) -> Result<SweepTable> {
    let dets: Vec<(Vec<Detection>, &str)> = val
        .par_iter()
        .map(|(img, truth)| (rec.recognize(img).detections, truth.as_str()))
        .collect();
    sweep_thresholds(&dets)
}

/// Plate-level accuracy of the recognizer's raw reading.
pub fn evaluate_recognizer(rec: &TemplateRecognizer, val: &[(Raster, String)]) -> Result<f64> {
    let pairs: Vec<(String, &str)> = val
        .par_iter()
        .map(|(img, truth)| (rec.recognize(img).text, truth.as_str()))
        .collect();
    binary_accuracy(&pairs)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Source {
    Manual,
    Pseudolabel { round: usize },
}

#[derive(Debug, Clone)]
pub struct LabeledExample {
    pub id: String,
    pub image: Raster,
    pub text: String,
    pub detections: Vec<Detection>,
    pub source: Source,
    pub accepted: bool,
}

impl LabeledExample {
    /// Hand-labeled example; always accepted.
    pub fn manual(id: impl Into<String>, image: Raster, text: impl Into<String>, detections: Vec<Detection>) -> Self {
        LabeledExample {
            id: id.into(),
            image,
            text: text.into(),
            detections,
            source: Source::Manual,
            accepted: true,
        }
    }

    fn glyphs(&self) -> Vec<LabeledGlyph> {
        let boxes: Vec<_> = self.detections.iter().map(|d| d.bbox).collect();
        glyphs_from_labels(&self.image, &self.text, &boxes)
    }
}

#[derive(Debug, Clone)]
pub struct PoolItem {
    pub id: String,
    pub image: Raster,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    pub round: usize,
    pub tau: f64,
    pub pool_size: usize,
    pub accepted: usize,
    pub rejected: BTreeMap<RejectReason, usize>,
    pub acceptance_rate: f64,
    pub labeled_before: usize,
    pub labeled_after: usize,
}

/// Builds a recognizer from the accepted examples of a labeled set.
/// `FineTune` starts from `previous` when given.
pub fn train_recognizer(
    labeled: &[LabeledExample],
    mode: LearnMode,
    previous: Option<&TemplateRecognizer>,
    base: &TemplateRecognizer,
) -> TemplateRecognizer {
    let glyphs: Vec<LabeledGlyph> = labeled
        .iter()
        .filter(|e| e.accepted)
        .flat_map(LabeledExample::glyphs)
        .collect();
    let mut rec = match (mode, previous) {
        (LearnMode::FineTune, Some(p)) => p.clone(),
        _ => base.clone(),
    };
    rec.learn(&glyphs, mode);
    rec
}

/// One expansion round: pseudolabel every pool item with `rec`, append the
/// accepted ones to `labeled` and report what happened.
pub fn expansion_round(
    labeled: &mut Vec<LabeledExample>,
    pool: &[PoolItem],
    tau: f64,
    round: usize,
    rec: &TemplateRecognizer,
) -> Result<RoundReport> {
    if pool.is_empty() {
        return Err(Error::arg("unlabeled pool is empty"));
    }
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::arg(format!("threshold {tau} outside (0, 1)")));
    }
    let known: HashSet<&str> = labeled.iter().map(|e| e.id.as_str()).collect();
    if let Some(dup) = pool.iter().find(|p| known.contains(p.id.as_str())) {
        return Err(Error::arg(format!("pool item {} is already labeled", dup.id)));
    }
    let results: Vec<(Decision, Vec<Detection>)> = pool
        .par_iter()
        .map(|item| {
            let dets = rec.recognize(&item.image).detections;
            (accept_pseudolabel(&dets, tau), collapse_detections(&dets))
        })
        .collect();
    let before = labeled.len();
    let mut rejected = BTreeMap::new();
    for (item, (decision, dets)) in pool.iter().zip(results) {
        match decision.reason {
            Some(r) => *rejected.entry(r).or_insert(0) += 1,
            None => labeled.push(LabeledExample {
                id: item.id.clone(),
                image: item.image.clone(),
                text: decision.text,
                detections: dets,
                source: Source::Pseudolabel { round },
                accepted: true,
            }),
        }
    }
    let accepted = labeled.len() - before;
    Ok(RoundReport {
        round,
        tau,
        pool_size: pool.len(),
        accepted,
        rejected,
        acceptance_rate: accepted as f64 / pool.len() as f64,
        labeled_before: before,
        labeled_after: labeled.len(),
    })
}
